#pragma once

// In-memory dataset container plus on-disk helpers: JSONL manifests,
// profile CSVs and the CIFAR-10/100 binary readers.

#include "mbj/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mbj {

// Flat float feature rows + integer labels. Image data keeps its
// channels/height/width so convolutional extractors can interpret rows;
// embedding-style data leaves them at 0. `cameras` is populated only for
// retrieval datasets; `source_index` tracks provenance through subsetting.
struct Dataset {
    int feature_dim = 0;
    int channels = 0, height = 0, width = 0;
    int class_count = 0;
    std::vector<float> features;  // n x feature_dim, row-major
    std::vector<int> labels;
    std::vector<int> cameras;
    std::vector<long> source_index;

    std::size_t size() const { return labels.size(); }

    bool has_cameras() const { return !cameras.empty(); }

    const float* row(std::size_t i) const { return features.data() + i * static_cast<std::size_t>(feature_dim); }

    Eigen::VectorXd sample(std::size_t i) const {
        Eigen::VectorXd v(feature_dim);
        const float* r = row(i);
        for (int j = 0; j < feature_dim; ++j) v[j] = static_cast<double>(r[j]);
        return v;
    }

    // rows `indices` as a (batch x dim) double matrix
    Eigen::MatrixXd batch(const std::vector<std::size_t>& indices) const {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(indices.size()), feature_dim);
        for (std::size_t b = 0; b < indices.size(); ++b) {
            const float* r = row(indices[b]);
            for (int j = 0; j < feature_dim; ++j) m(static_cast<Eigen::Index>(b), j) = static_cast<double>(r[j]);
        }
        return m;
    }

    void push_row(const float* data, int label, int camera = -1, long src = -1) {
        features.insert(features.end(), data, data + feature_dim);
        labels.push_back(label);
        if (camera >= 0 || !cameras.empty()) {
            cameras.resize(labels.size(), -1);
            cameras.back() = camera;
        }
        source_index.push_back(src < 0 ? static_cast<long>(labels.size()) - 1 : src);
    }

    std::vector<int> per_class_counts() const {
        std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
        for (int y : labels) {
            if (y < 0 || y >= class_count) throw DataError("label out of range while counting classes");
            ++counts[static_cast<std::size_t>(y)];
        }
        return counts;
    }
};

// --- manifests and summaries ------------------------------------------------

inline void write_manifest_jsonl(const Dataset& d, const std::string& path, const std::string& split) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open manifest for writing: " + path);
    for (std::size_t i = 0; i < d.size(); ++i) {
        nlohmann::json line;
        line["path_or_index"] = d.source_index.empty() ? static_cast<long>(i) : d.source_index[i];
        line["label"] = d.labels[i];
        line["split"] = split;
        out << line.dump() << "\n";
    }
}

inline void write_profile_csv(const std::vector<int>& per_class_counts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open profile csv for writing: " + path);
    out << "class,count\n";
    for (std::size_t c = 0; c < per_class_counts.size(); ++c) out << c << "," << per_class_counts[c] << "\n";
}

// Raw feature rows in the same binary layout as embedding exports
// ("MBJE", int64 n, int64 d, float32 rows) plus the label sidecar.
inline void write_features_bin(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open feature file for writing: " + path);
    out.write("MBJE", 4);
    std::int64_t n = static_cast<std::int64_t>(d.size()), dim = d.feature_dim;
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    out.write(reinterpret_cast<const char*>(d.features.data()),
              static_cast<std::streamsize>(sizeof(float) * d.features.size()));
    std::ofstream labels(path + ".labels.csv");
    if (!labels) throw DataError("cannot open label sidecar for writing");
    labels << (d.has_cameras() ? "index,label,camera\n" : "index,label\n");
    for (std::size_t i = 0; i < d.size(); ++i) {
        labels << i << ',' << d.labels[i];
        if (d.has_cameras()) labels << ',' << d.cameras[i];
        labels << '\n';
    }
}

// --- CIFAR binary readers ---------------------------------------------------

namespace detail {

inline void read_cifar_records(const std::string& file, int label_bytes, int label_offset, Dataset& d) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open CIFAR binary: " + file);
    const int pixels = 3 * 32 * 32;
    std::vector<unsigned char> rec(static_cast<std::size_t>(label_bytes + pixels));
    std::vector<float> rowbuf(static_cast<std::size_t>(pixels));
    while (in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()))) {
        int label = rec[static_cast<std::size_t>(label_offset)];
        for (int j = 0; j < pixels; ++j)
            rowbuf[static_cast<std::size_t>(j)] = static_cast<float>(rec[static_cast<std::size_t>(label_bytes + j)]) / 255.0f;
        d.push_row(rowbuf.data(), label);
    }
}

}  // namespace detail

// CIFAR-10 in the canonical binary layout (data_batch_*.bin / test_batch.bin).
inline Dataset load_cifar10(const std::string& dir, bool train) {
    Dataset d;
    d.feature_dim = 3 * 32 * 32;
    d.channels = 3;
    d.height = d.width = 32;
    d.class_count = 10;
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (train) {
        for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back(dir + "/test_batch.bin");
    }
    for (const auto& f : files) {
        if (!fs::exists(f)) throw DataError("CIFAR-10 file not found: " + f);
        detail::read_cifar_records(f, 1, 0, d);
    }
    return d;
}

// CIFAR-100 binaries carry coarse+fine label bytes; the fine label is used.
inline Dataset load_cifar100(const std::string& dir, bool train) {
    Dataset d;
    d.feature_dim = 3 * 32 * 32;
    d.channels = 3;
    d.height = d.width = 32;
    d.class_count = 100;
    std::string f = dir + (train ? "/train.bin" : "/test.bin");
    if (!std::filesystem::exists(f)) throw DataError("CIFAR-100 file not found: " + f);
    detail::read_cifar_records(f, 2, 1, d);
    return d;
}

}  // namespace mbj
