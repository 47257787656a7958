#pragma once

// Two-phase classification training. Phase 1 is conventional cross-entropy
// with uniform-over-images sampling; phase 2 continues at a small learning
// rate while a FIFO memory of gradient-blocked features re-balances the
// loss (L_total = eta * L_memory + L_batch). Ablation variants rewire the
// re-balancing (raw-image over-sampling, in-batch feature re-sampling with
// or without Gaussian jitter, weight/feature/both memories).

#include "mbj/analysis.hpp"
#include "mbj/dataset.hpp"
#include "mbj/losses.hpp"
#include "mbj/memory_bank.hpp"
#include "mbj/model.hpp"
#include "mbj/nn.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

namespace mbj {

struct ClsSchedule {
    int phase1_epochs = 30;
    int phase2_epochs = 10;
    double phase1_lr = 0.1;
    double phase2_lr = 0.01;  // "a small value": default 0.1x the final phase-1 rate
    std::vector<int> phase1_decay_epochs;
    double lr_decay = 0.1;
    int batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
    LossConfig loss;           // eta defaults to 15 for classification
    double beta = 1.5;
    int memory_capacity = 0;   // 0 means the 5*C default
    int trace_class = -1;      // when >= 0, phase 2 records jitter traces for this class

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

enum class AblationVariant { RR, FR, FRRJ, MBJ_W, MBJ_F, MBJ_WF };

inline AblationVariant parse_variant(const std::string& id) {
    if (id == "rr") return AblationVariant::RR;
    if (id == "fr") return AblationVariant::FR;
    if (id == "fr+rj") return AblationVariant::FRRJ;
    if (id == "mbj-w") return AblationVariant::MBJ_W;
    if (id == "mbj-f" || id == "mbj") return AblationVariant::MBJ_F;
    if (id == "mbj-wf") return AblationVariant::MBJ_WF;
    throw ConfigError("unknown ablation variant: " + id);
}

inline std::string variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::RR: return "rr";
        case AblationVariant::FR: return "fr";
        case AblationVariant::FRRJ: return "fr+rj";
        case AblationVariant::MBJ_W: return "mbj-w";
        case AblationVariant::MBJ_F: return "mbj-f";
        case AblationVariant::MBJ_WF: return "mbj-wf";
    }
    throw ConfigError("unknown ablation variant id");
}

struct EvalResult {
    double top1 = 0.0;
    std::vector<double> per_class_top1;
};

inline EvalResult evaluate_classification(EmbeddingModel& model, const Dataset& data, int batch_size = 256) {
    if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
    const int c = model.class_count();
    std::vector<long> correct(static_cast<std::size_t>(c), 0), total(static_cast<std::size_t>(c), 0);
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t stop = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Eigen::MatrixXd logits = model.forward(data.batch(idx), false).logits;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            int y = data.labels[idx[b]];
            if (y < 0 || y >= c) throw DataError("label out of range during evaluation");
            Eigen::Index pred;
            logits.row(static_cast<Eigen::Index>(b)).maxCoeff(&pred);
            total[static_cast<std::size_t>(y)] += 1;
            if (static_cast<int>(pred) == y) correct[static_cast<std::size_t>(y)] += 1;
        }
    }
    EvalResult out;
    out.per_class_top1.resize(static_cast<std::size_t>(c), 0.0);
    long correct_sum = 0;
    for (int k = 0; k < c; ++k) {
        auto ck = static_cast<std::size_t>(k);
        out.per_class_top1[ck] = total[ck] > 0 ? static_cast<double>(correct[ck]) / total[ck] : 0.0;
        correct_sum += correct[ck];
    }
    out.top1 = static_cast<double>(correct_sum) / static_cast<double>(data.size());
    return out;
}

namespace detail {

constexpr std::uint64_t kStreamData = 0xba7c4;
constexpr std::uint64_t kStreamMemory = 0x3e3042;

inline std::vector<int> batch_labels(const Dataset& data, const std::vector<std::size_t>& idx) {
    std::vector<int> y;
    y.reserve(idx.size());
    for (std::size_t i : idx) y.push_back(data.labels[i]);
    return y;
}

inline std::vector<MemoryEntry> sample_memory_batch(const std::vector<MemoryEntry>& pool, int want, Rng& rng) {
    std::vector<MemoryEntry> out;
    if (pool.empty() || want <= 0) return out;
    out.reserve(static_cast<std::size_t>(want));
    for (int i = 0; i < want; ++i) out.push_back(pool[rng.index(pool.size())]);
    return out;
}

inline std::vector<int> checked_class_counts(const Dataset& data, int class_count) {
    std::vector<int> counts = data.per_class_counts();
    counts.resize(static_cast<std::size_t>(class_count), 0);
    for (int c = 0; c < class_count; ++c)
        if (counts[static_cast<std::size_t>(c)] < 1)
            throw DataError("class " + std::to_string(c) + " has no training samples");
    return counts;
}

}  // namespace detail

inline RunRecord train_phase1(EmbeddingModel& model, const Dataset& train, const Dataset* eval_set,
                              const ClsSchedule& sched, int first_epoch = 0) {
    sched.validate();
    if (train.size() == 0) throw DataError("empty training set");
    Rng data_rng(mix_seed(sched.seed, detail::kStreamData));
    Sgd opt(model.parameters(), sched.phase1_lr, sched.momentum, sched.weight_decay);

    RunRecord rec;
    rec.sampled_class_histogram.assign(static_cast<std::size_t>(model.class_count()), 0);
    // Same trace subjects as the ablation loop: prototype row of the traced
    // class, plus one fixed image of it (its first training example).
    std::size_t trace_sample = train.size();
    if (sched.trace_class >= 0) {
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train.labels[i] == sched.trace_class) {
                trace_sample = i;
                break;
            }
        rec.weight_trace.kind = "weight";
        rec.weight_trace.subject = "class" + std::to_string(sched.trace_class);
        rec.feature_trace.kind = "feature";
        rec.feature_trace.subject = "sample" + std::to_string(trace_sample);
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long iteration = 0;
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
            auto bl = cross_entropy(fw.embeddings, y, model.head());
            if (!std::isfinite(bl.value))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(first_epoch + epoch));
            opt.zero_grad();
            model.head_grad() += bl.d_weights;
            model.extractor().backward(bl.d_embeddings);
            opt.step();
            if (sched.trace_class >= 0) {
                rec.weight_trace.append(model.read_prototypes().row(sched.trace_class).transpose(), iteration);
                if (trace_sample < train.size()) {
                    auto tr = model.forward(train.batch({trace_sample}), false);
                    rec.feature_trace.append(tr.embeddings.row(0).transpose(), iteration);
                }
            }
            loss_sum += bl.value;
            ++batches;
            ++iteration;
        }
        EpochMetrics m;
        m.epoch = first_epoch + epoch;
        m.phase = 1;
        m.loss_batch = loss_sum / static_cast<double>(batches);
        auto ev = evaluate_classification(model, eval_set ? *eval_set : train);
        m.top1 = ev.top1;
        m.per_class_top1 = std::move(ev.per_class_top1);
        m.bank_occupancy_per_class.assign(static_cast<std::size_t>(model.class_count()), 0);
        rec.epochs.push_back(std::move(m));
    }
    return rec;
}

// Phase 2 / ablation core. MBJ-F is Algorithm 1 proper; the other variants
// substitute its re-balancing mechanism while keeping the logging schema.
inline RunRecord run_ablation_variant(EmbeddingModel& model, const Dataset& train, const Dataset* eval_set,
                                      const ClsSchedule& sched, AblationVariant variant, int first_epoch = 0) {
    sched.validate();
    if (train.size() == 0) throw DataError("empty training set");
    const int C = model.class_count();
    const bool uses_memory = variant != AblationVariant::RR;
    const bool persistent_bank = variant == AblationVariant::MBJ_W || variant == AblationVariant::MBJ_F ||
                                 variant == AblationVariant::MBJ_WF;
    const bool admits_features = variant == AblationVariant::FR || variant == AblationVariant::FRRJ ||
                                 variant == AblationVariant::MBJ_F || variant == AblationVariant::MBJ_WF;
    const bool admits_weights = variant == AblationVariant::MBJ_W || variant == AblationVariant::MBJ_WF;

    Rng data_rng(mix_seed(sched.seed, detail::kStreamData));
    Rng mem_rng(mix_seed(sched.seed, detail::kStreamMemory));
    Sgd opt(model.parameters(), sched.phase2_lr, sched.momentum, sched.weight_decay);  // fresh optimizer state

    SamplingConfig sampling;
    sampling.beta = sched.beta;
    if (uses_memory || variant == AblationVariant::RR)
        sampling.class_counts = detail::checked_class_counts(train, C);

    MemoryBank feature_bank(sched.bank_capacity(C));
    MemoryBank weight_bank(sched.bank_capacity(C));
    std::vector<int> class_labels(static_cast<std::size_t>(C));
    std::iota(class_labels.begin(), class_labels.end(), 0);

    RunRecord rec;
    rec.sampled_class_histogram.assign(static_cast<std::size_t>(C), 0);
    // Weight jitter follows the traced class's prototype row; feature jitter
    // follows one fixed image of that class (its first training example).
    std::size_t trace_sample = train.size();
    if (sched.trace_class >= 0) {
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train.labels[i] == sched.trace_class) {
                trace_sample = i;
                break;
            }
        rec.weight_trace.kind = "weight";
        rec.weight_trace.subject = "class" + std::to_string(sched.trace_class);
        rec.feature_trace.kind = "feature";
        rec.feature_trace.subject = "sample" + std::to_string(trace_sample);
    }

    // class-balanced over-sampling order for RR; uniform-over-images otherwise
    std::vector<std::vector<std::size_t>> by_class;
    if (variant == AblationVariant::RR) {
        by_class.assign(static_cast<std::size_t>(C), {});
        for (std::size_t i = 0; i < train.size(); ++i)
            by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long iteration = 0;
    for (int epoch = 0; epoch < sched.phase2_epochs; ++epoch) {
        if (variant == AblationVariant::RR) {
            for (std::size_t i = 0; i < order.size(); ++i) {
                auto c = static_cast<std::size_t>(data_rng.index(static_cast<std::size_t>(C)));
                order[i] = by_class[c][data_rng.index(by_class[c].size())];
            }
        } else {
            data_rng.shuffle(order);
        }

        double loss_batch_sum = 0.0, loss_memory_sum = 0.0;
        long batches = 0;
        bool bank_seen_nonempty = false;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch_size)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            for (std::size_t i : idx) rec.sampled_class_histogram[static_cast<std::size_t>(train.labels[i])] += 1;
            auto y = detail::batch_labels(train, idx);
            auto fw = model.forward(train.batch(idx), true);

            // ---- memory maintenance (gradient-blocked snapshots) ----
            std::vector<MemoryEntry> step_entries;
            if (admits_features) {
                auto admitted = select_for_memory(fw.embeddings, y, sampling, mem_rng, iteration);
                if (persistent_bank) feature_bank.enqueue_dequeue(admitted);
                else step_entries = std::move(admitted);  // FR / FR+RJ: current batch only, no history
            }
            if (admits_weights) {
                auto admitted = select_for_memory(model.read_prototypes(), class_labels, sampling, mem_rng, iteration);
                weight_bank.enqueue_dequeue(admitted);
            }

            // ---- memory loss over a sampled mini-batch of entries ----
            std::vector<MemoryEntry> mem_batch;
            if (uses_memory) {
                int want = sched.batch_size;
                if (variant == AblationVariant::MBJ_WF) {
                    auto feats = detail::sample_memory_batch(feature_bank.snapshot(), (want + 1) / 2, mem_rng);
                    auto protos = detail::sample_memory_batch(weight_bank.snapshot(), want / 2, mem_rng);
                    mem_batch = std::move(feats);
                    mem_batch.insert(mem_batch.end(), protos.begin(), protos.end());
                } else if (variant == AblationVariant::MBJ_W) {
                    mem_batch = detail::sample_memory_batch(weight_bank.snapshot(), want, mem_rng);
                } else if (persistent_bank) {
                    mem_batch = detail::sample_memory_batch(feature_bank.snapshot(), want, mem_rng);
                } else {
                    mem_batch = detail::sample_memory_batch(step_entries, want, mem_rng);
                }
                if (variant == AblationVariant::FRRJ && !mem_batch.empty()) {
                    double mean_norm = 0.0;
                    for (Eigen::Index r = 0; r < fw.embeddings.rows(); ++r) mean_norm += fw.embeddings.row(r).norm();
                    mean_norm /= static_cast<double>(fw.embeddings.rows());
                    double sigma = 0.1 * mean_norm;
                    for (auto& e : mem_batch)
                        for (Eigen::Index j = 0; j < e.vector.size(); ++j) e.vector[j] += sigma * mem_rng.normal();
                }
                if (!mem_batch.empty()) bank_seen_nonempty = true;
            }

            auto bl = cross_entropy(fw.embeddings, y, model.head());
            MemoryClsLoss ml;
            if (uses_memory) ml = memory_loss_cls(mem_batch, model.head());
            double total = fuse_losses(ml.value, bl.value, uses_memory ? sched.loss.eta : 0.0);
            if (!std::isfinite(total))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(first_epoch + epoch));

            opt.zero_grad();
            model.head_grad() += bl.d_weights;
            if (uses_memory && sched.loss.eta != 0.0) model.head_grad() += sched.loss.eta * ml.d_weights;
            model.extractor().backward(bl.d_embeddings);  // memorized vectors contribute no gradient
            opt.step();

            if (sched.trace_class >= 0) {
                rec.weight_trace.append(model.read_prototypes().row(sched.trace_class).transpose(), iteration);
                if (trace_sample < train.size()) {
                    auto tr = model.forward(train.batch({trace_sample}), false);
                    rec.feature_trace.append(tr.embeddings.row(0).transpose(), iteration);
                }
            }

            loss_batch_sum += bl.value;
            loss_memory_sum += ml.value;
            ++batches;
            ++iteration;
        }
        if (uses_memory && !bank_seen_nonempty) {
            std::string w = "memory bank stayed empty for epoch " + std::to_string(first_epoch + epoch);
            std::cerr << "warning: " << w << '\n';
            rec.warnings.push_back(w);
        }

        EpochMetrics m;
        m.epoch = first_epoch + epoch;
        m.phase = 2;
        m.loss_batch = loss_batch_sum / static_cast<double>(batches);
        m.loss_memory = loss_memory_sum / static_cast<double>(batches);
        auto ev = evaluate_classification(model, eval_set ? *eval_set : train);
        m.top1 = ev.top1;
        m.per_class_top1 = std::move(ev.per_class_top1);
        m.bank_occupancy_per_class = feature_bank.occupancy_per_class(C);
        if (admits_weights) {
            auto wocc = weight_bank.occupancy_per_class(C);
            for (int c = 0; c < C; ++c)
                m.bank_occupancy_per_class[static_cast<std::size_t>(c)] += wocc[static_cast<std::size_t>(c)];
        }
        rec.epochs.push_back(std::move(m));
    }
    rec.final_bank = feature_bank.snapshot();
    if (admits_weights) {
        auto ws = weight_bank.snapshot();
        rec.final_bank.insert(rec.final_bank.end(), ws.begin(), ws.end());
    }
    return rec;
}

inline RunRecord train_phase2_mbj(EmbeddingModel& model, const Dataset& train, const Dataset* eval_set,
                                  const ClsSchedule& sched, int first_epoch = 0) {
    return run_ablation_variant(model, train, eval_set, sched, AblationVariant::MBJ_F, first_epoch);
}

}  // namespace mbj
