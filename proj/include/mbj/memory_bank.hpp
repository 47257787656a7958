#pragma once

// Bounded FIFO store of historical vectors with tail-biased, class-specific
// admission. Admission probabilities follow
//   P_i = (1/N_i)^beta / sum_j (1/N_j)^beta
// normalized over classes; per-sample admission uses the Bernoulli rate
// q_y = P_y / max_j P_j so the rarest class is always admitted.

#include "mbj/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

namespace mbj {

struct SamplingConfig {
    double beta = 1.5;
    std::vector<int> class_counts;
};

inline std::vector<double> admission_probabilities(const SamplingConfig& cfg) {
    if (cfg.beta < 0.0) throw ConfigError("re-balancing strength beta must be >= 0");
    if (cfg.class_counts.empty()) throw ConfigError("sampling config has no class counts");
    std::vector<double> p(cfg.class_counts.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        int n = cfg.class_counts[i];
        if (n < 1) throw ConfigError("class count must be >= 1, got " + std::to_string(n));
        p[i] = std::pow(1.0 / static_cast<double>(n), cfg.beta);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Per-sample Bernoulli admission rates derived from the class distribution.
inline std::vector<double> admission_rates(const SamplingConfig& cfg) {
    auto p = admission_probabilities(cfg);
    double pmax = *std::max_element(p.begin(), p.end());
    for (double& v : p) v /= pmax;
    return p;
}

// A gradient-blocked snapshot: the stored vector is a plain copy, never an
// alias of live model state.
struct MemoryEntry {
    Eigen::VectorXd vector;
    int label = 0;
    long iteration = 0;
};

class MemoryBank {
  public:
    explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw ConfigError("memory bank capacity must be positive");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Append in order, then evict the globally oldest until within capacity.
    void enqueue_dequeue(std::vector<MemoryEntry> new_entries) {
        for (auto& e : new_entries) {
            if (!e.vector.allFinite()) throw NumericError("refusing to memorize non-finite vector");
            entries_.push_back(std::move(e));
        }
        while (entries_.size() > capacity_) entries_.pop_front();
    }

    // Stable copy, oldest first; later bank mutation leaves it untouched.
    std::vector<MemoryEntry> snapshot() const { return {entries_.begin(), entries_.end()}; }

    std::vector<int> occupancy_per_class(int class_count) const {
        std::vector<int> occ(static_cast<std::size_t>(class_count), 0);
        for (const auto& e : entries_) {
            if (e.label >= 0 && e.label < class_count) ++occ[static_cast<std::size_t>(e.label)];
        }
        return occ;
    }

    // d columns + label + iteration, for offline jitter analysis.
    void dump_csv(const std::string& path) const;

  private:
    std::size_t capacity_;
    std::deque<MemoryEntry> entries_;
};

// d columns + label + iteration per row.
inline void dump_entries_csv(const std::vector<MemoryEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open bank dump for writing: " + path);
    for (const auto& e : entries) {
        char buf[32];
        for (Eigen::Index j = 0; j < e.vector.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", e.vector[j]);
            out << buf << ",";
        }
        out << e.label << "," << e.iteration << "\n";
    }
}

inline void MemoryBank::dump_csv(const std::string& path) const { dump_entries_csv(snapshot(), path); }

// Admit each batch element independently with rate q_label. Vectors are
// copied (gradient-blocked); an empty admission set is legal.
inline std::vector<MemoryEntry> select_for_memory(const Eigen::MatrixXd& vectors, const std::vector<int>& labels,
                                                  const SamplingConfig& cfg, Rng& rng, long iteration = 0) {
    if (vectors.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DataError("batch vectors/labels size mismatch");
    auto rates = admission_rates(cfg);
    std::vector<MemoryEntry> admitted;
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
        int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= static_cast<int>(rates.size())) throw DataError("label out of range in select_for_memory");
        double q = rates[static_cast<std::size_t>(y)];
        // q == 1 admits without consuming randomness
        if (q >= 1.0 || rng.uniform() < q)
            admitted.push_back({vectors.row(i).transpose(), y, iteration});
    }
    return admitted;
}

}  // namespace mbj
