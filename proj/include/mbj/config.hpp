#pragma once

// Plain-text experiment configuration (key = value under [sections]).
// Every knob has a default; unknown keys fail fast with the offending key
// named so a typo can't silently fall back to a default.

#include "mbj/common.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mbj {

struct ExperimentConfig {
    // [experiment]
    std::string task = "classification";  // classification | metric-learning
    std::string variant = "mbj";          // baseline | rr | fr | fr+rj | mbj-w | mbj-f | mbj-wf | mbj
    std::uint64_t seed = 1;
    std::string output_dir = "runs/exp";

    // [data]
    std::string source = "synthetic";  // synthetic | cifar10 | cifar100 | reid-folder
    int class_count = 10;
    int dim = 16;         // synthetic feature dimension
    int max_count = 500;  // images in the most frequent class
    double imbalance_ratio = 100.0;
    std::vector<int> per_class_counts;  // explicit counts override the IR profile
    double within_class_scale = 0.25;
    int eval_per_class = 100;
    int signal_dim = 0;     // >0: synthetic class means confined to this many leading dims
    int head_classes = 20;  // retrieval split
    int head_images = 30;
    int tail_images_per_class = 5;
    int test_identities = 50;
    int query_per_id = 2;
    int gallery_per_id = 4;
    std::string data_root;  // empty: use $MBJ_DATA_ROOT
    int image_height = 64;
    int image_width = 32;

    // [model]
    std::string backbone = "mlp";  // mlp | resnet8 | resnet20 | resnet32
    int hidden_dim = 64;
    int embedding_dim = 64;

    // [schedule]
    int phase1_epochs = 30;
    int phase2_epochs = 10;
    double phase1_lr = 0.1;
    double phase2_lr = 0.01;
    std::vector<int> phase1_decay_epochs;
    double lr_decay = 0.1;
    int batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    // [loss]
    double eta = -1.0;  // negative: resolve by task (15 classification, 1/15 metric learning)
    double alpha = 30.0;
    double delta = 0.35;

    // [memory]
    double beta = 1.5;
    int capacity = 0;  // 0: 5*C default
    int trace_class = -1;

    bool operator==(const ExperimentConfig&) const = default;

    double resolved_eta() const {
        if (eta >= 0.0) return eta;
        return task == "classification" ? 15.0 : 1.0 / 15.0;
    }

    void validate() const {
        if (task != "classification" && task != "metric-learning")
            throw ConfigError("unknown task: " + task);
        if (variant != "baseline" && variant != "rr" && variant != "fr" && variant != "fr+rj" &&
            variant != "mbj-w" && variant != "mbj-f" && variant != "mbj-wf" && variant != "mbj")
            throw ConfigError("unknown variant: " + variant);
        if (source != "synthetic" && source != "cifar10" && source != "cifar100" && source != "reid-folder")
            throw ConfigError("unknown data source: " + source);
        if (backbone != "mlp" && backbone != "resnet8" && backbone != "resnet20" && backbone != "resnet32")
            throw ConfigError("unknown backbone: " + backbone);
        if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string cell;
    while (std::getline(in, cell, ',')) {
        cell = trim(cell);
        if (cell.empty()) continue;
        try {
            out.push_back(std::stoi(cell));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list for key: " + key);
        }
    }
    return out;
}

inline std::string join_int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
    std::istringstream in(s);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("bad value for key: " + key);
    return v;
}

inline std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("malformed section at line " + std::to_string(lineno));
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "experiment" && section != "data" && section != "model" && section != "schedule" &&
                section != "loss" && section != "memory")
                throw ConfigError("unknown config section: " + section);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(lineno));
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        std::string full = section + "." + key;

        using detail::parse_int_list;
        using detail::parse_number;
        if (full == "experiment.task") cfg.task = value;
        else if (full == "experiment.variant") cfg.variant = value;
        else if (full == "experiment.seed") cfg.seed = parse_number<std::uint64_t>(value, full);
        else if (full == "experiment.output_dir") cfg.output_dir = value;
        else if (full == "data.source") cfg.source = value;
        else if (full == "data.class_count") cfg.class_count = parse_number<int>(value, full);
        else if (full == "data.dim") cfg.dim = parse_number<int>(value, full);
        else if (full == "data.max_count") cfg.max_count = parse_number<int>(value, full);
        else if (full == "data.imbalance_ratio") cfg.imbalance_ratio = parse_number<double>(value, full);
        else if (full == "data.per_class_counts") cfg.per_class_counts = parse_int_list(value, full);
        else if (full == "data.within_class_scale") cfg.within_class_scale = parse_number<double>(value, full);
        else if (full == "data.eval_per_class") cfg.eval_per_class = parse_number<int>(value, full);
        else if (full == "data.signal_dim") cfg.signal_dim = parse_number<int>(value, full);
        else if (full == "data.head_classes") cfg.head_classes = parse_number<int>(value, full);
        else if (full == "data.head_images") cfg.head_images = parse_number<int>(value, full);
        else if (full == "data.tail_images_per_class") cfg.tail_images_per_class = parse_number<int>(value, full);
        else if (full == "data.test_identities") cfg.test_identities = parse_number<int>(value, full);
        else if (full == "data.query_per_id") cfg.query_per_id = parse_number<int>(value, full);
        else if (full == "data.gallery_per_id") cfg.gallery_per_id = parse_number<int>(value, full);
        else if (full == "data.data_root") cfg.data_root = value;
        else if (full == "data.image_height") cfg.image_height = parse_number<int>(value, full);
        else if (full == "data.image_width") cfg.image_width = parse_number<int>(value, full);
        else if (full == "model.backbone") cfg.backbone = value;
        else if (full == "model.hidden_dim") cfg.hidden_dim = parse_number<int>(value, full);
        else if (full == "model.embedding_dim") cfg.embedding_dim = parse_number<int>(value, full);
        else if (full == "schedule.phase1_epochs") cfg.phase1_epochs = parse_number<int>(value, full);
        else if (full == "schedule.phase2_epochs") cfg.phase2_epochs = parse_number<int>(value, full);
        else if (full == "schedule.phase1_lr") cfg.phase1_lr = parse_number<double>(value, full);
        else if (full == "schedule.phase2_lr") cfg.phase2_lr = parse_number<double>(value, full);
        else if (full == "schedule.phase1_decay_epochs") cfg.phase1_decay_epochs = parse_int_list(value, full);
        else if (full == "schedule.lr_decay") cfg.lr_decay = parse_number<double>(value, full);
        else if (full == "schedule.batch_size") cfg.batch_size = parse_number<int>(value, full);
        else if (full == "schedule.momentum") cfg.momentum = parse_number<double>(value, full);
        else if (full == "schedule.weight_decay") cfg.weight_decay = parse_number<double>(value, full);
        else if (full == "loss.eta") cfg.eta = parse_number<double>(value, full);
        else if (full == "loss.alpha") cfg.alpha = parse_number<double>(value, full);
        else if (full == "loss.delta") cfg.delta = parse_number<double>(value, full);
        else if (full == "memory.beta") cfg.beta = parse_number<double>(value, full);
        else if (full == "memory.capacity") cfg.capacity = parse_number<int>(value, full);
        else if (full == "memory.trace_class") cfg.trace_class = parse_number<int>(value, full);
        else throw ConfigError("unknown config key: " + full);
    }
    return cfg;
}

inline std::string serialize_config(const ExperimentConfig& c) {
    using detail::format_double;
    using detail::join_int_list;
    std::ostringstream out;
    out << "[experiment]\n"
        << "task = " << c.task << '\n'
        << "variant = " << c.variant << '\n'
        << "seed = " << c.seed << '\n'
        << "output_dir = " << c.output_dir << '\n'
        << "\n[data]\n"
        << "source = " << c.source << '\n'
        << "class_count = " << c.class_count << '\n'
        << "dim = " << c.dim << '\n'
        << "max_count = " << c.max_count << '\n'
        << "imbalance_ratio = " << format_double(c.imbalance_ratio) << '\n'
        << "per_class_counts = " << join_int_list(c.per_class_counts) << '\n'
        << "within_class_scale = " << format_double(c.within_class_scale) << '\n'
        << "eval_per_class = " << c.eval_per_class << '\n'
        << "signal_dim = " << c.signal_dim << '\n'
        << "head_classes = " << c.head_classes << '\n'
        << "head_images = " << c.head_images << '\n'
        << "tail_images_per_class = " << c.tail_images_per_class << '\n'
        << "test_identities = " << c.test_identities << '\n'
        << "query_per_id = " << c.query_per_id << '\n'
        << "gallery_per_id = " << c.gallery_per_id << '\n'
        << "data_root = " << c.data_root << '\n'
        << "image_height = " << c.image_height << '\n'
        << "image_width = " << c.image_width << '\n'
        << "\n[model]\n"
        << "backbone = " << c.backbone << '\n'
        << "hidden_dim = " << c.hidden_dim << '\n'
        << "embedding_dim = " << c.embedding_dim << '\n'
        << "\n[schedule]\n"
        << "phase1_epochs = " << c.phase1_epochs << '\n'
        << "phase2_epochs = " << c.phase2_epochs << '\n'
        << "phase1_lr = " << format_double(c.phase1_lr) << '\n'
        << "phase2_lr = " << format_double(c.phase2_lr) << '\n'
        << "phase1_decay_epochs = " << join_int_list(c.phase1_decay_epochs) << '\n'
        << "lr_decay = " << format_double(c.lr_decay) << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "momentum = " << format_double(c.momentum) << '\n'
        << "weight_decay = " << format_double(c.weight_decay) << '\n'
        << "\n[loss]\n"
        << "eta = " << format_double(c.eta) << '\n'
        << "alpha = " << format_double(c.alpha) << '\n'
        << "delta = " << format_double(c.delta) << '\n'
        << "\n[memory]\n"
        << "beta = " << format_double(c.beta) << '\n'
        << "capacity = " << c.capacity << '\n'
        << "trace_class = " << c.trace_class << '\n';
    return out.str();
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << serialize_config(cfg);
}

}  // namespace mbj
