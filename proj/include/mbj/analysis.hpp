#pragma once

// Diagnostics over training artifacts: angular jitter variance of recorded
// weight/feature traces, shot-bucketed accuracy, run metrics serialization,
// and embedding export for external projection tools.

#include "mbj/common.hpp"
#include "mbj/dataset.hpp"
#include "mbj/memory_bank.hpp"
#include "mbj/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace mbj {

struct JitterTrace {
    std::string kind;     // "weight" or "feature"
    std::string subject;  // e.g. "class7"
    std::vector<Eigen::VectorXd> vectors;
    std::vector<long> iterations;

    std::size_t size() const { return vectors.size(); }

    void append(const Eigen::VectorXd& v, long iteration) {
        if (!vectors.empty() && v.size() != vectors.front().size())
            throw DataError("trace vectors must share one dimension");
        vectors.push_back(v);
        iterations.push_back(iteration);
    }
};

// Mean squared angular deviation (degrees^2) of the first k vectors from
// their normalized mean direction. Scale-invariant; k=1 gives exactly 0.
inline double angular_variance(const JitterTrace& trace, std::size_t k) {
    if (k < 1 || k > trace.size()) throw ConfigError("prefix length out of range");
    std::vector<Eigen::VectorXd> units;
    units.reserve(k);
    for (std::size_t i = 0; i < k; ++i) units.push_back(unit(trace.vectors[i]));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(units.front().size());
    for (const auto& u : units) sum += u;
    if (sum.norm() <= 0.0) throw NumericError("mean direction is degenerate");
    Eigen::VectorXd mean_dir = sum / sum.norm();
    double acc = 0.0;
    for (const auto& u : units) {
        double ang = deg_from_rad(std::acos(clamp(u.dot(mean_dir), -1.0, 1.0)));
        acc += ang * ang;
    }
    return acc / static_cast<double>(k);
}

inline std::vector<std::pair<std::size_t, double>> jitter_curve(const JitterTrace& trace) {
    if (trace.size() < 2) throw ConfigError("jitter curve needs at least two recorded vectors");
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(trace.size());
    for (std::size_t k = 1; k <= trace.size(); ++k) out.emplace_back(k, angular_variance(trace, k));
    return out;
}

// Least-squares slope of variance vs. prefix length over curve[begin, end).
// Used to test the Fig.-2 shape: early growth, late plateau.
inline double curve_slope(const std::vector<std::pair<std::size_t, double>>& curve, std::size_t begin,
                          std::size_t end) {
    if (begin >= end || end > curve.size() || end - begin < 2)
        throw ConfigError("slope needs at least two curve points");
    double n = static_cast<double>(end - begin);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = begin; i < end; ++i) {
        double x = static_cast<double>(curve[i].first), y = curve[i].second;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw NumericError("degenerate abscissa in slope fit");
    return (n * sxy - sx * sy) / denom;
}

// --- shot buckets ---------------------------------------------------------

// many > 100 images, 20 <= medium <= 100, few < 20. Empty buckets are
// reported as absent rather than zero.
struct BucketedAccuracy {
    std::optional<double> many, medium, few;
    double overall = 0.0;
};

inline BucketedAccuracy shot_bucketed_accuracy(const std::vector<double>& per_class_acc,
                                               const std::vector<int>& train_counts) {
    if (per_class_acc.empty() || per_class_acc.size() != train_counts.size())
        throw ConfigError("per-class accuracies and counts must align");
    double sums[3] = {0, 0, 0};
    int ns[3] = {0, 0, 0};
    double total = 0.0;
    for (std::size_t c = 0; c < per_class_acc.size(); ++c) {
        int bucket = train_counts[c] > 100 ? 0 : (train_counts[c] >= 20 ? 1 : 2);
        sums[bucket] += per_class_acc[c];
        ns[bucket] += 1;
        total += per_class_acc[c];
    }
    BucketedAccuracy out;
    if (ns[0]) out.many = sums[0] / ns[0];
    if (ns[1]) out.medium = sums[1] / ns[1];
    if (ns[2]) out.few = sums[2] / ns[2];
    out.overall = total / static_cast<double>(per_class_acc.size());
    return out;
}

// --- run records ----------------------------------------------------------

struct EpochMetrics {
    int epoch = 0;
    int phase = 1;
    double loss_batch = 0.0;
    double loss_memory = 0.0;
    double top1 = 0.0;
    std::vector<double> per_class_top1;
    std::vector<int> bank_occupancy_per_class;
    double map = -1.0;    // retrieval runs only; negative means not evaluated
    double rank1 = -1.0;
};

struct RunRecord {
    std::vector<EpochMetrics> epochs;
    std::vector<std::string> warnings;
    // raw-image sampling instrumentation: how often each class was drawn
    std::vector<long> sampled_class_histogram;
    JitterTrace weight_trace;   // empty unless a trace class was designated
    JitterTrace feature_trace;
    std::vector<MemoryEntry> final_bank;  // state at the end of a memory-using run

    const EpochMetrics& last() const {
        if (epochs.empty()) throw DataError("run record has no epochs");
        return epochs.back();
    }
};

inline void write_metrics_jsonl(const RunRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open metrics file for writing: " + path);
    for (const auto& e : record.epochs) {
        nlohmann::json j{{"epoch", e.epoch},
                         {"phase", e.phase},
                         {"loss_batch", e.loss_batch},
                         {"loss_memory", e.loss_memory},
                         {"top1", e.top1},
                         {"per_class_top1", e.per_class_top1},
                         {"bank_occupancy_per_class", e.bank_occupancy_per_class}};
        if (e.map >= 0.0) {
            j["mAP"] = e.map;
            j["rank1"] = e.rank1;
        }
        out << j.dump() << '\n';
    }
}

// --- trace / curve files ----------------------------------------------------

inline void save_trace_csv(const JitterTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open trace file for writing: " + path);
    out << "# kind=" << trace.kind << " subject=" << trace.subject << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out << trace.iterations[i];
        for (Eigen::Index j = 0; j < trace.vectors[i].size(); ++j) out << ',' << trace.vectors[i][j];
        out << '\n';
    }
}

inline JitterTrace load_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trace file: " + path);
    JitterTrace trace;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# kind=", 0) != 0) throw DataError("malformed trace header: " + path);
    std::istringstream hdr(line.substr(2));
    std::string tok;
    while (hdr >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "kind") trace.kind = val;
        else if (key == "subject") trace.subject = val;
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ',')) throw DataError("malformed trace row: " + path);
        long iter = std::stol(cell);
        std::vector<double> vals;
        while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.empty()) throw DataError("trace row has no vector: " + path);
        trace.append(Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())), iter);
    }
    if (trace.size() == 0) throw DataError("trace file has no vectors: " + path);
    return trace;
}

inline void save_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open curve file for writing: " + path);
    out << "k,angular_variance_deg2\n";
    out.precision(17);
    for (auto [k, v] : curve) out << k << ',' << v << '\n';
}

// --- embedding export -------------------------------------------------------

// Binary matrix: magic "MBJE", int64 n, int64 d, float32 row-major rows.
// Sidecar CSV `<path>.labels.csv` holds index,label[,camera].
inline void export_embeddings(EmbeddingModel& model, const Dataset& data, const std::string& path,
                              int batch_size = 256) {
    if (data.size() == 0) throw DataError("cannot export embeddings of an empty dataset");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open embedding file for writing: " + path);
    out.write("MBJE", 4);
    std::int64_t n = static_cast<std::int64_t>(data.size()), d = model.embedding_dim();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    for (std::int64_t start = 0; start < n; start += batch_size) {
        std::int64_t stop = std::min<std::int64_t>(n, start + batch_size);
        std::vector<std::size_t> idx(static_cast<std::size_t>(stop - start));
        for (std::int64_t i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = static_cast<std::size_t>(i);
        Eigen::MatrixXd emb = model.forward(data.batch(idx), false).embeddings;
        for (Eigen::Index r = 0; r < emb.rows(); ++r)
            for (Eigen::Index c = 0; c < d; ++c) {
                float v = static_cast<float>(emb(r, c));
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    }
    std::ofstream labels(path + ".labels.csv");
    if (!labels) throw DataError("cannot open label sidecar for writing");
    labels << (data.has_cameras() ? "index,label,camera\n" : "index,label\n");
    for (std::int64_t i = 0; i < n; ++i) {
        labels << i << ',' << data.labels[static_cast<std::size_t>(i)];
        if (data.has_cameras()) labels << ',' << data.cameras[static_cast<std::size_t>(i)];
        labels << '\n';
    }
}

struct EmbeddingFile {
    Eigen::MatrixXf matrix;
    std::vector<int> labels;
    std::vector<int> cameras;  // empty when the sidecar has no camera column
};

inline EmbeddingFile load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embedding file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "MBJE") throw DataError("not an embedding file: " + path);
    std::int64_t n = 0, d = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!in || n <= 0 || d <= 0) throw DataError("corrupt embedding header: " + path);
    EmbeddingFile f;
    f.matrix.resize(n, d);
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) {
            float v;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!in) throw DataError("truncated embedding file: " + path);
            f.matrix(r, c) = v;
        }
    std::ifstream labels(path + ".labels.csv");
    if (!labels) throw DataError("missing label sidecar for: " + path);
    std::string line;
    std::getline(labels, line);
    bool with_camera = line.find("camera") != std::string::npos;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        std::getline(row, cell, ',');
        f.labels.push_back(std::stoi(cell));
        if (with_camera) {
            std::getline(row, cell, ',');
            f.cameras.push_back(std::stoi(cell));
        }
    }
    if (f.labels.size() != static_cast<std::size_t>(n)) throw DataError("label sidecar row count mismatch");
    return f;
}

}  // namespace mbj
