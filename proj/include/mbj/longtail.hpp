#pragma once

// Long-tailed dataset construction: exponential count profiles, head/tail
// retrieval splits and synthetic Gaussian-mixture embedding sets.

#include "mbj/common.hpp"
#include "mbj/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mbj {

// Per-class sample budget under an imbalance ratio. Counts decay
// exponentially from max_count down to max_count/IR, non-increasing.
struct LongTailProfile {
    int class_count = 0;
    int max_count = 0;
    double imbalance_ratio = 1.0;
    std::vector<int> per_class_counts;

    int total() const { return std::accumulate(per_class_counts.begin(), per_class_counts.end(), 0); }
};

// n_i = floor(n_max * IR^(-i/(C-1))), the LDAM-style construction.
inline LongTailProfile build_longtail_profile(int class_count, int max_count, double imbalance_ratio) {
    if (class_count < 2) throw ConfigError("long-tail profile needs class_count >= 2");
    if (imbalance_ratio < 1.0) throw ConfigError("imbalance_ratio must be >= 1");
    if (max_count < imbalance_ratio) throw ConfigError("max_count must be >= imbalance_ratio so every class keeps a sample");

    LongTailProfile p;
    p.class_count = class_count;
    p.max_count = max_count;
    p.imbalance_ratio = imbalance_ratio;
    p.per_class_counts.resize(static_cast<std::size_t>(class_count));
    for (int i = 0; i < class_count; ++i) {
        double exact = max_count * std::pow(imbalance_ratio, -static_cast<double>(i) / (class_count - 1));
        int n = static_cast<int>(std::floor(exact));
        if (n < 1) throw ConfigError("profile would assign < 1 sample to class " + std::to_string(i));
        p.per_class_counts[static_cast<std::size_t>(i)] = n;
    }
    for (int i = 1; i < class_count; ++i)
        if (p.per_class_counts[static_cast<std::size_t>(i)] > p.per_class_counts[static_cast<std::size_t>(i - 1)])
            throw NumericError("profile counts not non-increasing");
    return p;
}

// Retrieval-style split: the head_class_count most frequent classes keep all
// their images, every other class is cut to tail_images_per_class.
struct HeadTailSplit {
    int head_class_count = 0;
    int tail_images_per_class = 5;
};

namespace detail {

// Classes ranked by descending source count, ties broken by label order.
inline std::vector<int> classes_by_descending_count(const std::vector<int>& counts) {
    std::vector<int> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
    });
    return order;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& d) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(d.class_count));
    for (std::size_t i = 0; i < d.size(); ++i) by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);
    return by_class;
}

inline Dataset take_per_class(const Dataset& src, const std::vector<int>& keep_per_class, std::uint64_t seed) {
    auto by_class = indices_by_class(src);
    Dataset out;
    out.feature_dim = src.feature_dim;
    out.channels = src.channels;
    out.height = src.height;
    out.width = src.width;
    out.class_count = src.class_count;
    std::vector<std::size_t> chosen;
    for (int c = 0; c < src.class_count; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        int want = keep_per_class[static_cast<std::size_t>(c)];
        if (static_cast<int>(pool.size()) < want)
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                            " samples, profile needs " + std::to_string(want));
        // first k of a seeded per-class shuffle; a full pool stays intact
        if (want < static_cast<int>(pool.size())) {
            Rng rng(mix_seed(seed, 0xda7a5e7 + static_cast<std::uint64_t>(c)));
            rng.shuffle(pool);
        }
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + want);
    }
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) {
        long src_idx = src.source_index.empty() ? static_cast<long>(i) : src.source_index[i];
        out.push_row(src.row(i), src.labels[i], src.has_cameras() ? src.cameras[i] : -1, src_idx);
    }
    return out;
}

}  // namespace detail

// Subsample `src` so per-class counts follow the profile: the i-th most
// frequent source class receives profile slot i.
inline Dataset subset_dataset(const Dataset& src, const LongTailProfile& profile, std::uint64_t seed) {
    if (src.class_count != profile.class_count)
        throw DataError("profile class_count does not match dataset");
    auto counts = src.per_class_counts();
    auto order = detail::classes_by_descending_count(counts);
    std::vector<int> keep(static_cast<std::size_t>(src.class_count), 0);
    for (int rank = 0; rank < src.class_count; ++rank)
        keep[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] =
            profile.per_class_counts[static_cast<std::size_t>(rank)];
    return detail::take_per_class(src, keep, seed);
}

// Explicit per-label counts (slot c applies to label c, no frequency
// re-ranking) — e.g. cutting one chosen class while leaving the rest whole.
inline Dataset subset_dataset(const Dataset& src, const std::vector<int>& per_label_counts, std::uint64_t seed) {
    if (static_cast<int>(per_label_counts.size()) != src.class_count)
        throw DataError("per-label counts do not match dataset class count");
    return detail::take_per_class(src, per_label_counts, seed);
}

// Cut every non-head class down to tail_images_per_class images.
inline Dataset subset_dataset(const Dataset& src, const HeadTailSplit& split, std::uint64_t seed) {
    if (split.head_class_count < 0 || split.head_class_count > src.class_count)
        throw DataError("head_class_count out of range");
    if (split.tail_images_per_class < 1) throw ConfigError("tail_images_per_class must be >= 1");
    auto counts = src.per_class_counts();
    auto order = detail::classes_by_descending_count(counts);
    std::vector<int> keep = counts;
    for (int rank = split.head_class_count; rank < src.class_count; ++rank) {
        int cls = order[static_cast<std::size_t>(rank)];
        keep[static_cast<std::size_t>(cls)] = split.tail_images_per_class;
    }
    return detail::take_per_class(src, keep, seed);
}

// Head/tail assignment used by the split (head = most frequent classes).
inline std::vector<bool> head_assignment(const std::vector<int>& counts, int head_class_count) {
    auto order = detail::classes_by_descending_count(counts);
    std::vector<bool> is_head(counts.size(), false);
    for (int rank = 0; rank < head_class_count && rank < static_cast<int>(order.size()); ++rank)
        is_head[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] = true;
    return is_head;
}

// Unit-scale stand-in for image data: class means on the unit sphere,
// isotropic Gaussian noise around them.
struct SyntheticEmbeddingSet {
    Eigen::MatrixXd class_means;  // C x d, unit rows
    double within_class_scale = 0.0;
    std::vector<int> per_class_counts;
    Dataset samples;
};

inline SyntheticEmbeddingSet make_synthetic_embeddings(int class_count, int dim,
                                                       const std::vector<int>& per_class_counts,
                                                       double within_class_scale, std::uint64_t seed,
                                                       const Eigen::MatrixXd* fixed_means = nullptr) {
    if (dim < 2) throw ConfigError("synthetic embeddings need dim >= 2");
    if (static_cast<int>(per_class_counts.size()) != class_count)
        throw ConfigError("per_class_counts size must equal class_count");
    if (within_class_scale < 0) throw ConfigError("within_class_scale must be >= 0");

    SyntheticEmbeddingSet set;
    set.within_class_scale = within_class_scale;
    set.per_class_counts = per_class_counts;
    Rng mean_rng(mix_seed(seed, 0x3ea15));
    set.class_means.resize(class_count, dim);
    if (fixed_means) {
        if (fixed_means->rows() != class_count || fixed_means->cols() != dim)
            throw ConfigError("fixed class means have wrong shape");
        set.class_means = *fixed_means;
        for (int c = 0; c < class_count; ++c) set.class_means.row(c).normalize();
    } else {
        for (int c = 0; c < class_count; ++c) {
            Eigen::VectorXd m(dim);
            for (int j = 0; j < dim; ++j) m[j] = mean_rng.normal();
            set.class_means.row(c) = unit(m).transpose();
        }
    }

    Dataset& d = set.samples;
    d.feature_dim = dim;
    d.class_count = class_count;
    Rng noise_rng(mix_seed(seed, 0x70a57));
    std::vector<float> rowbuf(static_cast<std::size_t>(dim));
    for (int c = 0; c < class_count; ++c) {
        for (int k = 0; k < per_class_counts[static_cast<std::size_t>(c)]; ++k) {
            for (int j = 0; j < dim; ++j)
                rowbuf[static_cast<std::size_t>(j)] =
                    static_cast<float>(set.class_means(c, j) + within_class_scale * noise_rng.normal());
            d.push_row(rowbuf.data(), c);
        }
    }
    return set;
}

// Class means confined to the first signal_dim coordinates (unit rows). With
// per-sample noise filling all dim coordinates, the remaining ones act as
// shared nuisance dimensions a metric learner can discover and suppress —
// which is what lets an embedding trained on one identity set transfer to a
// disjoint one.
inline Eigen::MatrixXd subspace_class_means(int class_count, int dim, int signal_dim, Rng& rng) {
    if (class_count < 1) throw ConfigError("subspace means need class_count >= 1");
    if (signal_dim < 2 || signal_dim > dim) throw ConfigError("signal_dim must lie in [2, dim]");
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(class_count, dim);
    for (int c = 0; c < class_count; ++c) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
        for (int j = 0; j < signal_dim; ++j) m[j] = rng.normal();
        means.row(c) = unit(m).transpose();
    }
    return means;
}

}  // namespace mbj
