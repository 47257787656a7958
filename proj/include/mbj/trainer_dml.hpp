#pragma once

// Metric-learning branch. Phase 1 trains with CosFace against the live
// prototypes; phase 2 additionally admits gradient-blocked prototype
// snapshots into a FIFO memory (Eq. 1 sampling) and adds a circle-style
// loss pulling each embedding toward memorized prototypes of its class and
// away from those of other classes.

#include "mbj/analysis.hpp"
#include "mbj/dataset.hpp"
#include "mbj/losses.hpp"
#include "mbj/memory_bank.hpp"
#include "mbj/model.hpp"
#include "mbj/nn.hpp"
#include "mbj/trainer_cls.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace mbj {

struct DmlSchedule {
    int phase1_epochs = 30;
    int phase2_epochs = 10;
    double phase1_lr = 0.05;
    double phase2_lr = 0.005;
    std::vector<int> phase1_decay_epochs;
    double lr_decay = 0.1;
    int batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
    LossConfig loss{1.0 / 15.0, 30.0, 0.35};  // eta defaults to 1/15 for metric learning
    double beta = 1.5;
    int memory_capacity = 0;  // 0 means the 5*C default

    void validate() const {
        loss.validate();
        if (phase1_epochs < 1 || phase2_epochs < 1) throw ConfigError("epoch counts must be positive");
        if (phase1_lr <= 0.0 || phase2_lr <= 0.0) throw ConfigError("learning rates must be positive");
        if (phase2_lr >= phase1_lr) throw ConfigError("phase-2 learning rate must be smaller than phase-1");
        if (batch_size < 1) throw ConfigError("batch size must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
        if (beta < 0.0) throw ConfigError("re-balancing beta must be non-negative");
        if (memory_capacity < 0) throw ConfigError("memory capacity must be non-negative");
        if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("lr decay factor must lie in (0, 1]");
    }

    int bank_capacity(int class_count) const { return memory_capacity > 0 ? memory_capacity : 5 * class_count; }
};

// --- retrieval evaluation ---------------------------------------------------

struct RetrievalResult {
    double map = 0.0;
    double rank1 = 0.0;
};

// Cosine-distance ranking. Gallery matches sharing both identity and camera
// with the query are excluded; when query and gallery are the same set, the
// self match is excluded by position.
inline RetrievalResult retrieval_metrics(const Eigen::MatrixXd& query_emb, const std::vector<int>& query_ids,
                                         const std::vector<int>& query_cams, const Eigen::MatrixXd& gallery_emb,
                                         const std::vector<int>& gallery_ids, const std::vector<int>& gallery_cams,
                                         bool same_set) {
    const Eigen::Index nq = query_emb.rows(), ng = gallery_emb.rows();
    if (nq == 0 || ng == 0) throw DataError("retrieval needs non-empty query and gallery");
    if (static_cast<Eigen::Index>(query_ids.size()) != nq || static_cast<Eigen::Index>(gallery_ids.size()) != ng)
        throw DataError("embedding/id size mismatch in retrieval");

    Eigen::MatrixXd q(nq, query_emb.cols()), g(ng, gallery_emb.cols());
    for (Eigen::Index i = 0; i < nq; ++i) q.row(i) = unit(query_emb.row(i).transpose()).transpose();
    for (Eigen::Index j = 0; j < ng; ++j) g.row(j) = unit(gallery_emb.row(j).transpose()).transpose();

    double ap_sum = 0.0, rank1_sum = 0.0;
    std::vector<Eigen::Index> ranked(static_cast<std::size_t>(ng));
    for (Eigen::Index i = 0; i < nq; ++i) {
        Eigen::VectorXd sims = g * q.row(i).transpose();
        ranked.clear();
        for (Eigen::Index j = 0; j < ng; ++j) {
            if (same_set && j == i) continue;
            bool same_cam = !query_cams.empty() && !gallery_cams.empty() &&
                            query_cams[static_cast<std::size_t>(i)] >= 0 &&
                            gallery_cams[static_cast<std::size_t>(j)] >= 0 &&
                            query_cams[static_cast<std::size_t>(i)] == gallery_cams[static_cast<std::size_t>(j)];
            if (same_cam && gallery_ids[static_cast<std::size_t>(j)] == query_ids[static_cast<std::size_t>(i)])
                continue;
            ranked.push_back(j);
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return sims[a] > sims[b]; });

        long positives_seen = 0;
        double ap = 0.0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (gallery_ids[static_cast<std::size_t>(ranked[r])] == query_ids[static_cast<std::size_t>(i)]) {
                ++positives_seen;
                ap += static_cast<double>(positives_seen) / static_cast<double>(r + 1);
            }
        }
        if (positives_seen == 0)
            throw DataError("query identity " + std::to_string(query_ids[static_cast<std::size_t>(i)]) +
                            " absent from gallery");
        ap_sum += ap / static_cast<double>(positives_seen);
        if (!ranked.empty() &&
            gallery_ids[static_cast<std::size_t>(ranked.front())] == query_ids[static_cast<std::size_t>(i)])
            rank1_sum += 1.0;
    }
    return {ap_sum / static_cast<double>(nq), rank1_sum / static_cast<double>(nq)};
}

inline RetrievalResult evaluate_retrieval(EmbeddingModel& model, const Dataset& query, const Dataset& gallery,
                                          int batch_size = 256) {
    auto embed = [&](const Dataset& data) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), model.embedding_dim());
        for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
            std::size_t stop = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<std::size_t> idx(stop - start);
            std::iota(idx.begin(), idx.end(), start);
            out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
                model.forward(data.batch(idx), false).embeddings;
        }
        return out;
    };
    bool same_set = &query == &gallery;
    Eigen::MatrixXd qemb = embed(query);
    Eigen::MatrixXd gemb = same_set ? qemb : embed(gallery);
    return retrieval_metrics(qemb, query.labels, query.cameras, gemb, gallery.labels, gallery.cameras, same_set);
}

// --- training ---------------------------------------------------------------

namespace detail {

struct CosfaceBatch {
    double value = 0.0;
    Eigen::MatrixXd d_embeddings;
    Eigen::MatrixXd d_weights;
};

inline CosfaceBatch cosface_batch(const Eigen::MatrixXd& emb, const std::vector<int>& labels,
                                  const ClassifierHead& head, double alpha, double delta) {
    const Eigen::Index n = emb.rows();
    CosfaceBatch out;
    out.d_embeddings = Eigen::MatrixXd::Zero(n, emb.cols());
    out.d_weights = Eigen::MatrixXd::Zero(head.class_count(), head.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        auto sl = cosface_loss(emb.row(i).transpose(), labels[static_cast<std::size_t>(i)], head, alpha, delta);
        out.value += sl.value;
        out.d_embeddings.row(i) = sl.d_embedding.transpose();
        out.d_weights += sl.d_weights;
    }
    out.value /= static_cast<double>(n);
    out.d_embeddings /= static_cast<double>(n);
    out.d_weights /= static_cast<double>(n);
    return out;
}

}  // namespace detail

inline RunRecord train_phase1_dml(EmbeddingModel& model, const Dataset& train, const Dataset* eval_query,
                                  const Dataset* eval_gallery, const DmlSchedule& sched, int first_epoch = 0) {
    sched.validate();
    if (train.size() == 0) throw DataError("empty training set");
    Rng data_rng(mix_seed(sched.seed, detail::kStreamData));
    Sgd opt(model.parameters(), sched.phase1_lr, sched.momentum, sched.weight_decay);

    RunRecord rec;
    rec.sampled_class_histogram.assign(static_cast<std::size_t>(model.class_count()), 0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double lr = sched.phase1_lr;
    for (int epoch = 0; epoch < sched.phase1_epochs; ++epoch) {
        if (std::find(sched.phase1_decay_epochs.begin(), sched.phase1_decay_epochs.end(), epoch) !=
            sched.phase1_decay_epochs.end()) {
            lr *= sched.lr_decay;
            opt.set_lr(lr);
        }
        data_rng.shuffle(order);
        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch_size)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            for (std::size_t i : idx) rec.sampled_class_histogram[static_cast<std::size_t>(train.labels[i])] += 1;
            auto y = detail::batch_labels(train, idx);
            auto fw = model.forward(train.batch(idx), true);
            auto bl = detail::cosface_batch(fw.embeddings, y, model.head(), sched.loss.alpha, sched.loss.delta);
            if (!std::isfinite(bl.value))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(first_epoch + epoch));
            opt.zero_grad();
            model.head_grad() += bl.d_weights;
            model.extractor().backward(bl.d_embeddings);
            opt.step();
            loss_sum += bl.value;
            ++batches;
        }
        EpochMetrics m;
        m.epoch = first_epoch + epoch;
        m.phase = 1;
        m.loss_batch = loss_sum / static_cast<double>(batches);
        m.bank_occupancy_per_class.assign(static_cast<std::size_t>(model.class_count()), 0);
        if (eval_query && eval_gallery) {
            auto rr = evaluate_retrieval(model, *eval_query, *eval_gallery);
            m.map = rr.map;
            m.rank1 = rr.rank1;
            m.top1 = rr.rank1;
        }
        rec.epochs.push_back(std::move(m));
    }
    return rec;
}

inline RunRecord train_phase2_mbj_dml(EmbeddingModel& model, const Dataset& train, const Dataset* eval_query,
                                      const Dataset* eval_gallery, const DmlSchedule& sched, int first_epoch = 0) {
    sched.validate();
    if (train.size() == 0) throw DataError("empty training set");
    const int C = model.class_count();

    Rng data_rng(mix_seed(sched.seed, detail::kStreamData));
    Rng mem_rng(mix_seed(sched.seed, detail::kStreamMemory));
    Sgd opt(model.parameters(), sched.phase2_lr, sched.momentum, sched.weight_decay);

    SamplingConfig sampling;
    sampling.beta = sched.beta;
    sampling.class_counts = detail::checked_class_counts(train, C);

    MemoryBank bank(sched.bank_capacity(C));
    std::vector<int> class_labels(static_cast<std::size_t>(C));
    std::iota(class_labels.begin(), class_labels.end(), 0);

    RunRecord rec;
    rec.sampled_class_histogram.assign(static_cast<std::size_t>(C), 0);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long iteration = 0;
    for (int epoch = 0; epoch < sched.phase2_epochs; ++epoch) {
        data_rng.shuffle(order);
        double loss_batch_sum = 0.0, loss_memory_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch_size)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            for (std::size_t i : idx) rec.sampled_class_histogram[static_cast<std::size_t>(train.labels[i])] += 1;
            auto y = detail::batch_labels(train, idx);
            auto fw = model.forward(train.batch(idx), true);

            // admit unit-normalized, gradient-blocked prototype snapshots
            Eigen::MatrixXd protos = model.read_prototypes();
            for (Eigen::Index r = 0; r < protos.rows(); ++r) protos.row(r) = unit(protos.row(r).transpose()).transpose();
            bank.enqueue_dequeue(select_for_memory(protos, class_labels, sampling, mem_rng, iteration));

            // split the bank by class once per step
            auto snap = bank.snapshot();
            std::vector<std::vector<const MemoryEntry*>> by_class(static_cast<std::size_t>(C));
            for (const auto& e : snap) by_class[static_cast<std::size_t>(e.label)].push_back(&e);

            auto bl = detail::cosface_batch(fw.embeddings, y, model.head(), sched.loss.alpha, sched.loss.delta);

            double mem_value = 0.0;
            Eigen::MatrixXd d_emb_mem = Eigen::MatrixXd::Zero(fw.embeddings.rows(), fw.embeddings.cols());
            for (Eigen::Index i = 0; i < fw.embeddings.rows(); ++i) {
                auto yi = static_cast<std::size_t>(y[static_cast<std::size_t>(i)]);
                const auto& pos_ptrs = by_class[yi];
                std::size_t neg_count = snap.size() - pos_ptrs.size();
                if (pos_ptrs.empty() || neg_count == 0) continue;  // K=0 or L=0: this sample contributes 0
                Eigen::MatrixXd positives(static_cast<Eigen::Index>(pos_ptrs.size()), model.embedding_dim());
                for (std::size_t k = 0; k < pos_ptrs.size(); ++k)
                    positives.row(static_cast<Eigen::Index>(k)) = pos_ptrs[k]->vector.transpose();
                Eigen::MatrixXd negatives(static_cast<Eigen::Index>(neg_count), model.embedding_dim());
                Eigen::Index rn = 0;
                for (const auto& e : snap)
                    if (static_cast<std::size_t>(e.label) != yi) negatives.row(rn++) = e.vector.transpose();
                auto cl = circle_memory_loss(fw.embeddings.row(i).transpose(), positives, negatives,
                                             sched.loss.alpha, sched.loss.delta);
                mem_value += cl.value;
                d_emb_mem.row(i) = cl.d_embedding.transpose();
            }
            const auto n = static_cast<double>(fw.embeddings.rows());
            mem_value /= n;
            d_emb_mem /= n;

            double total = fuse_losses(mem_value, bl.value, sched.loss.eta);
            if (!std::isfinite(total))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(first_epoch + epoch));

            opt.zero_grad();
            model.head_grad() += bl.d_weights;  // memorized prototypes receive no gradient
            Eigen::MatrixXd d_emb = bl.d_embeddings;
            if (sched.loss.eta != 0.0) d_emb += sched.loss.eta * d_emb_mem;
            model.extractor().backward(d_emb);
            opt.step();

            loss_batch_sum += bl.value;
            loss_memory_sum += mem_value;
            ++batches;
            ++iteration;
        }
        EpochMetrics m;
        m.epoch = first_epoch + epoch;
        m.phase = 2;
        m.loss_batch = loss_batch_sum / static_cast<double>(batches);
        m.loss_memory = loss_memory_sum / static_cast<double>(batches);
        m.bank_occupancy_per_class = bank.occupancy_per_class(C);
        if (eval_query && eval_gallery) {
            auto rr = evaluate_retrieval(model, *eval_query, *eval_gallery);
            m.map = rr.map;
            m.rank1 = rr.rank1;
            m.top1 = rr.rank1;
        }
        rec.epochs.push_back(std::move(m));
    }
    rec.final_bank = bank.snapshot();
    return rec;
}

}  // namespace mbj
