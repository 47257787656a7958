#pragma once

// Experiment orchestration: resolves the dataset a config describes, builds
// the model, executes the two-phase run with a self-describing directory
// layout, and implements the read-only reporting commands.
//
// Run directory layout:
//   config.ini            exact configuration used
//   checkpoints/          phase1.ckpt, final.ckpt
//   metrics.jsonl         one line per epoch, both phases
//   summary.csv           metric,value pairs (fixed 6-decimal reals)
//   jitter/               weight/feature traces and variance curves
//   bank.csv              final memory-bank state (memory variants only)
//   embeddings/           eval-set (or query/gallery) embedding exports

#include "mbj/analysis.hpp"
#include "mbj/config.hpp"
#include "mbj/dataset.hpp"
#include "mbj/longtail.hpp"
#include "mbj/model.hpp"
#include "mbj/reid_data.hpp"
#include "mbj/trainer_cls.hpp"
#include "mbj/trainer_dml.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace mbj {

constexpr const char* kDataRootEnv = "MBJ_DATA_ROOT";

struct ResolvedData {
    Dataset train;
    Dataset eval;             // classification: balanced held-out set
    Dataset query, gallery;   // metric learning only
    std::vector<int> train_counts;
    int class_count = 0;
};

inline std::string resolved_data_root(const ExperimentConfig& cfg) {
    if (!cfg.data_root.empty()) return cfg.data_root;
    const char* env = std::getenv(kDataRootEnv);
    return env ? env : "";
}

namespace detail {

constexpr std::uint64_t kStreamEvalData = 0xe7a1;
constexpr std::uint64_t kStreamTestData = 0x7e57;
constexpr std::uint64_t kStreamModelInit = 0x1417;
constexpr std::uint64_t kStreamMeans = 0x5eed5;

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw DataError("cannot create directory: " + path);
}

inline std::string find_dataset_dir(const std::string& root, const std::vector<std::string>& candidates,
                                    const std::string& probe_file, const std::string& what) {
    namespace fs = std::filesystem;
    std::string tried;
    for (const auto& cand : candidates) {
        std::string dir = cand.empty() ? root : root + "/" + cand;
        if (fs::exists(dir + "/" + probe_file)) return dir;
        if (!tried.empty()) tried += ", ";
        tried += dir;
    }
    throw DataError(what + " not found; tried: " + tried + " (set data.data_root or " + kDataRootEnv + ")");
}

inline std::vector<int> explicit_or_profile_counts(const ExperimentConfig& cfg) {
    if (!cfg.per_class_counts.empty()) {
        if (static_cast<int>(cfg.per_class_counts.size()) != cfg.class_count)
            throw ConfigError("per_class_counts length must equal class_count");
        for (int c : cfg.per_class_counts)
            if (c < 1) throw ConfigError("per_class_counts entries must be positive");
        return cfg.per_class_counts;
    }
    return build_longtail_profile(cfg.class_count, cfg.max_count, cfg.imbalance_ratio).per_class_counts;
}

inline int tail_class_of(const std::vector<int>& counts) {
    return static_cast<int>(std::min_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace detail

inline ResolvedData resolve_dataset(const ExperimentConfig& cfg) {
    ResolvedData out;
    if (cfg.task == "classification") {
        if (cfg.source == "synthetic") {
            auto counts = detail::explicit_or_profile_counts(cfg);
            const Eigen::MatrixXd* means = nullptr;
            Eigen::MatrixXd sub_means;
            if (cfg.signal_dim > 0) {
                Rng mr(mix_seed(cfg.seed, detail::kStreamMeans));
                sub_means = subspace_class_means(cfg.class_count, cfg.dim, cfg.signal_dim, mr);
                means = &sub_means;
            }
            auto train = make_synthetic_embeddings(cfg.class_count, cfg.dim, counts, cfg.within_class_scale, cfg.seed,
                                                   means);
            std::vector<int> eval_counts(static_cast<std::size_t>(cfg.class_count), cfg.eval_per_class);
            auto eval = make_synthetic_embeddings(cfg.class_count, cfg.dim, eval_counts, cfg.within_class_scale,
                                                  mix_seed(cfg.seed, detail::kStreamEvalData), &train.class_means);
            out.train = std::move(train.samples);
            out.eval = std::move(eval.samples);
        } else if (cfg.source == "cifar10" || cfg.source == "cifar100") {
            std::string root = resolved_data_root(cfg);
            if (root.empty())
                throw DataError(std::string("dataset root not set: provide data.data_root or ") + kDataRootEnv);
            bool ten = cfg.source == "cifar10";
            std::string dir = detail::find_dataset_dir(
                root, {ten ? "cifar-10-batches-bin" : "cifar-100-binary", ""},
                ten ? "data_batch_1.bin" : "train.bin", ten ? "CIFAR-10 binaries" : "CIFAR-100 binaries");
            Dataset src = ten ? load_cifar10(dir, true) : load_cifar100(dir, true);
            if (!cfg.per_class_counts.empty()) {
                if (static_cast<int>(cfg.per_class_counts.size()) != src.class_count)
                    throw ConfigError("per_class_counts length must equal the dataset's class count");
                out.train = subset_dataset(src, cfg.per_class_counts, cfg.seed);
            } else {
                auto profile = build_longtail_profile(src.class_count, cfg.max_count, cfg.imbalance_ratio);
                out.train = subset_dataset(src, profile, cfg.seed);
            }
            out.eval = ten ? load_cifar10(dir, false) : load_cifar100(dir, false);
        } else {
            throw ConfigError("source '" + cfg.source + "' is not a classification source");
        }
    } else {  // metric-learning
        if (cfg.source == "synthetic") {
            if (cfg.head_classes < 0 || cfg.head_classes > cfg.class_count)
                throw ConfigError("head_classes out of range");
            const Eigen::MatrixXd *train_means = nullptr, *test_means = nullptr;
            Eigen::MatrixXd sub_train, sub_test;
            if (cfg.signal_dim > 0) {
                Rng mr(mix_seed(cfg.seed, detail::kStreamMeans));
                sub_train = subspace_class_means(cfg.class_count, cfg.dim, cfg.signal_dim, mr);
                sub_test = subspace_class_means(cfg.test_identities, cfg.dim, cfg.signal_dim, mr);
                train_means = &sub_train;
                test_means = &sub_test;
            }
            std::vector<int> counts(static_cast<std::size_t>(cfg.class_count), cfg.tail_images_per_class);
            for (int c = 0; c < cfg.head_classes; ++c) counts[static_cast<std::size_t>(c)] = cfg.head_images;
            out.train = make_synthetic_embeddings(cfg.class_count, cfg.dim, counts, cfg.within_class_scale,
                                                  cfg.seed, train_means).samples;
            // unseen test identities, split per id into query and gallery
            int per_id = cfg.query_per_id + cfg.gallery_per_id;
            std::vector<int> test_counts(static_cast<std::size_t>(cfg.test_identities), per_id);
            Dataset test = make_synthetic_embeddings(cfg.test_identities, cfg.dim, test_counts,
                                                     cfg.within_class_scale,
                                                     mix_seed(cfg.seed, detail::kStreamTestData), test_means).samples;
            out.query.feature_dim = out.gallery.feature_dim = test.feature_dim;
            out.query.class_count = out.gallery.class_count = test.class_count;
            std::vector<int> seen(static_cast<std::size_t>(cfg.test_identities), 0);
            for (std::size_t i = 0; i < test.size(); ++i) {
                auto y = static_cast<std::size_t>(test.labels[i]);
                Dataset& dst = seen[y]++ < cfg.query_per_id ? out.query : out.gallery;
                dst.push_row(test.row(i), test.labels[i]);
            }
        } else if (cfg.source == "reid-folder") {
            std::string root = resolved_data_root(cfg);
            if (root.empty())
                throw DataError(std::string("dataset root not set: provide data.data_root or ") + kDataRootEnv);
            std::string base = detail::find_dataset_dir(root, {"", "Market-1501", "market1501"},
                                                        "bounding_box_train", "re-id image folders");
            Dataset raw = load_reid_folder(base + "/bounding_box_train", cfg.image_height, cfg.image_width);
            make_contiguous_labels(raw);
            HeadTailSplit split{cfg.head_classes, cfg.tail_images_per_class};
            out.train = subset_dataset(raw, split, cfg.seed);
            out.query = load_reid_folder(base + "/query", cfg.image_height, cfg.image_width);
            out.gallery = load_reid_folder(base + "/bounding_box_test", cfg.image_height, cfg.image_width);
        } else {
            throw ConfigError("source '" + cfg.source + "' is not a metric-learning source");
        }
    }
    out.class_count = out.train.class_count;
    out.train_counts = out.train.per_class_counts();
    return out;
}

inline std::unique_ptr<EmbeddingModel> build_model(const ExperimentConfig& cfg, const ResolvedData& data) {
    Rng rng(mix_seed(cfg.seed, detail::kStreamModelInit));
    std::unique_ptr<FeatureExtractor> extractor;
    if (cfg.backbone == "mlp") {
        extractor = std::make_unique<MlpExtractor>(data.train.feature_dim, cfg.hidden_dim, cfg.embedding_dim, rng);
    } else {
        if (data.train.channels <= 0)
            throw ConfigError("backbone '" + cfg.backbone + "' needs image-shaped input data");
        int blocks = cfg.backbone == "resnet8" ? 1 : (cfg.backbone == "resnet20" ? 3 : 5);
        extractor = std::make_unique<ResNetExtractor>(data.train.channels, data.train.height, data.train.width,
                                                      blocks, rng);
    }
    bool normalize = cfg.task == "metric-learning";
    auto head = ClassifierHead::random_init(data.class_count, extractor->embedding_dim(), normalize, rng);
    return std::make_unique<EmbeddingModel>(std::move(extractor), std::move(head));
}

inline ClsSchedule cls_schedule_from(const ExperimentConfig& cfg, int trace_class) {
    ClsSchedule s;
    s.phase1_epochs = cfg.phase1_epochs;
    s.phase2_epochs = cfg.phase2_epochs;
    s.phase1_lr = cfg.phase1_lr;
    s.phase2_lr = cfg.phase2_lr;
    s.phase1_decay_epochs = cfg.phase1_decay_epochs;
    s.lr_decay = cfg.lr_decay;
    s.batch_size = cfg.batch_size;
    s.momentum = cfg.momentum;
    s.weight_decay = cfg.weight_decay;
    s.seed = cfg.seed;
    s.loss = LossConfig{cfg.resolved_eta(), cfg.alpha, cfg.delta};
    s.beta = cfg.beta;
    s.memory_capacity = cfg.capacity;
    s.trace_class = trace_class;
    return s;
}

inline DmlSchedule dml_schedule_from(const ExperimentConfig& cfg) {
    DmlSchedule s;
    s.phase1_epochs = cfg.phase1_epochs;
    s.phase2_epochs = cfg.phase2_epochs;
    s.phase1_lr = cfg.phase1_lr;
    s.phase2_lr = cfg.phase2_lr;
    s.phase1_decay_epochs = cfg.phase1_decay_epochs;
    s.lr_decay = cfg.lr_decay;
    s.batch_size = cfg.batch_size;
    s.momentum = cfg.momentum;
    s.weight_decay = cfg.weight_decay;
    s.seed = cfg.seed;
    s.loss = LossConfig{cfg.resolved_eta(), cfg.alpha, cfg.delta};
    s.beta = cfg.beta;
    s.memory_capacity = cfg.capacity;
    return s;
}

// --- summaries ----------------------------------------------------------------

struct RunSummary {
    std::vector<std::pair<std::string, std::string>> rows;

    void add(const std::string& key, const std::string& value) { rows.emplace_back(key, value); }
    void add(const std::string& key, double value) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", value);
        rows.emplace_back(key, buf);
    }
    void add(const std::string& key, long value) { rows.emplace_back(key, std::to_string(value)); }

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : rows)
            if (k == key) return &v;
        return nullptr;
    }
};

inline void write_summary_csv(const RunSummary& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open summary for writing: " + path);
    out << "metric,value\n";
    for (const auto& [k, v] : s.rows) out << k << ',' << v << '\n';
}

inline RunSummary read_summary_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open summary: " + path);
    RunSummary s;
    std::string line;
    if (!std::getline(in, line) || line != "metric,value") throw DataError("malformed summary header: " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("malformed summary row in " + path);
        s.add(line.substr(0, comma), line.substr(comma + 1));
    }
    return s;
}

namespace detail {

inline void add_bucket_rows(RunSummary& s, const std::string& prefix, const std::vector<double>& per_class,
                            const std::vector<int>& counts) {
    auto buckets = shot_bucketed_accuracy(per_class, counts);
    if (buckets.many) s.add(prefix + "_many_top1", *buckets.many);
    if (buckets.medium) s.add(prefix + "_medium_top1", *buckets.medium);
    if (buckets.few) s.add(prefix + "_few_top1", *buckets.few);
}

inline void write_jitter_artifacts(const RunRecord& rec, const std::string& jitter_dir) {
    for (const JitterTrace* trace : {&rec.weight_trace, &rec.feature_trace}) {
        if (trace->size() == 0) continue;
        save_trace_csv(*trace, jitter_dir + "/" + trace->kind + "_trace.csv");
        if (trace->size() >= 2)
            save_curve_csv(jitter_curve(*trace), jitter_dir + "/" + trace->kind + "_curve.csv");
    }
}

// Conventional continuation at the phase-2 learning rate (the `baseline`
// variant): same loop and data stream as phase 1, fresh optimizer state.
inline ClsSchedule continuation_schedule(const ClsSchedule& sched) {
    ClsSchedule cont = sched;
    cont.phase1_epochs = sched.phase2_epochs;
    cont.phase1_lr = sched.phase2_lr;
    cont.phase2_lr = sched.phase2_lr * 0.1;  // unused; keeps the validator happy
    cont.phase1_decay_epochs.clear();
    return cont;
}

inline DmlSchedule continuation_schedule(const DmlSchedule& sched) {
    DmlSchedule cont = sched;
    cont.phase1_epochs = sched.phase2_epochs;
    cont.phase1_lr = sched.phase2_lr;
    cont.phase2_lr = sched.phase2_lr * 0.1;
    cont.phase1_decay_epochs.clear();
    return cont;
}

}  // namespace detail

// Runs phase 2 per cfg.variant on a model already at its phase-1 state and
// writes the full artifact set. `phase1` supplies the recorded history.
inline RunSummary finish_run(const ExperimentConfig& cfg, const ResolvedData& data, EmbeddingModel& model,
                             const RunRecord& phase1, const std::string& out_dir) {
    detail::ensure_dir(out_dir + "/checkpoints");
    detail::ensure_dir(out_dir + "/jitter");
    detail::ensure_dir(out_dir + "/embeddings");
    save_config(cfg, out_dir + "/config.ini");
    model.save(out_dir + "/checkpoints/phase1.ckpt");

    const int first_epoch = cfg.phase1_epochs;
    RunSummary summary;
    summary.add("task", cfg.task);
    summary.add("variant", cfg.variant);
    summary.add("source", cfg.source);
    summary.add("seed", static_cast<long>(cfg.seed));
    summary.add("class_count", static_cast<long>(data.class_count));

    RunRecord phase2;
    if (cfg.task == "classification") {
        int tail = detail::tail_class_of(data.train_counts);
        int trace_class = cfg.trace_class >= 0 ? cfg.trace_class : tail;
        ClsSchedule sched = cls_schedule_from(cfg, trace_class);
        if (cfg.variant == "baseline") {
            phase2 = train_phase1(model, data.train, &data.eval, detail::continuation_schedule(sched), first_epoch);
            for (auto& e : phase2.epochs) e.phase = 2;
        } else {
            phase2 = run_ablation_variant(model, data.train, &data.eval, sched,
                                          parse_variant(cfg.variant), first_epoch);
        }
        const auto& p1 = phase1.last();
        const auto& p2 = phase2.last();
        summary.add("phase1_top1", p1.top1);
        summary.add("final_top1", p2.top1);
        summary.add("delta_top1", p2.top1 - p1.top1);
        detail::add_bucket_rows(summary, "phase1", p1.per_class_top1, data.train_counts);
        detail::add_bucket_rows(summary, "final", p2.per_class_top1, data.train_counts);
        summary.add("tail_class", static_cast<long>(tail));
        summary.add("phase1_tail_top1", p1.per_class_top1[static_cast<std::size_t>(tail)]);
        summary.add("final_tail_top1", p2.per_class_top1[static_cast<std::size_t>(tail)]);
        summary.add("delta_tail_top1", p2.per_class_top1[static_cast<std::size_t>(tail)] -
                                           p1.per_class_top1[static_cast<std::size_t>(tail)]);
        summary.add("final_loss_batch", p2.loss_batch);
        summary.add("final_loss_memory", p2.loss_memory);
        export_embeddings(model, data.eval, out_dir + "/embeddings/eval.bin");
    } else {
        if (cfg.variant != "baseline" && cfg.variant != "mbj")
            throw ConfigError("metric-learning supports variants 'baseline' and 'mbj' only");
        DmlSchedule sched = dml_schedule_from(cfg);
        if (cfg.variant == "baseline") {
            phase2 = train_phase1_dml(model, data.train, &data.query, &data.gallery,
                                      detail::continuation_schedule(sched), first_epoch);
            for (auto& e : phase2.epochs) e.phase = 2;
        } else {
            phase2 = train_phase2_mbj_dml(model, data.train, &data.query, &data.gallery, sched, first_epoch);
        }
        const auto& p1 = phase1.last();
        const auto& p2 = phase2.last();
        summary.add("phase1_map", p1.map);
        summary.add("final_map", p2.map);
        summary.add("delta_map", p2.map - p1.map);
        summary.add("phase1_rank1", p1.rank1);
        summary.add("final_rank1", p2.rank1);
        summary.add("delta_rank1", p2.rank1 - p1.rank1);
        summary.add("final_loss_batch", p2.loss_batch);
        summary.add("final_loss_memory", p2.loss_memory);
        export_embeddings(model, data.query, out_dir + "/embeddings/query.bin");
        export_embeddings(model, data.gallery, out_dir + "/embeddings/gallery.bin");
    }

    model.save(out_dir + "/checkpoints/final.ckpt");

    RunRecord merged;
    merged.epochs = phase1.epochs;
    merged.epochs.insert(merged.epochs.end(), phase2.epochs.begin(), phase2.epochs.end());
    write_metrics_jsonl(merged, out_dir + "/metrics.jsonl");
    detail::write_jitter_artifacts(phase2, out_dir + "/jitter");
    if (!phase2.final_bank.empty()) dump_entries_csv(phase2.final_bank, out_dir + "/bank.csv");
    for (const auto& w : phase2.warnings) summary.add("warning", w);

    write_summary_csv(summary, out_dir + "/summary.csv");
    return summary;
}

inline RunSummary run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ResolvedData data = resolve_dataset(cfg);
    auto model = build_model(cfg, data);
    RunRecord phase1;
    if (cfg.task == "classification") {
        ClsSchedule sched = cls_schedule_from(cfg, -1);
        phase1 = train_phase1(*model, data.train, &data.eval, sched);
    } else {
        DmlSchedule sched = dml_schedule_from(cfg);
        phase1 = train_phase1_dml(*model, data.train, &data.query, &data.gallery, sched);
    }
    return finish_run(cfg, data, *model, phase1, cfg.output_dir);
}

// Trains phase 1 once, then branches every requested variant off the same
// phase-1 checkpoint into <output_dir>/<variant>/.
inline std::vector<RunSummary> run_ablation_suite(const ExperimentConfig& cfg, std::vector<std::string> variants) {
    cfg.validate();
    if (variants.empty()) {
        if (cfg.task == "classification")
            variants = {"baseline", "rr", "fr", "fr+rj", "mbj-w", "mbj-f", "mbj-wf"};
        else
            variants = {"baseline", "mbj"};
    }
    ResolvedData data = resolve_dataset(cfg);
    auto base_model = build_model(cfg, data);
    RunRecord phase1;
    if (cfg.task == "classification") {
        phase1 = train_phase1(*base_model, data.train, &data.eval, cls_schedule_from(cfg, -1));
    } else {
        phase1 = train_phase1_dml(*base_model, data.train, &data.query, &data.gallery, dml_schedule_from(cfg));
    }
    detail::ensure_dir(cfg.output_dir + "/checkpoints");
    std::string shared_ckpt = cfg.output_dir + "/checkpoints/phase1.ckpt";
    base_model->save(shared_ckpt);

    std::vector<RunSummary> summaries;
    for (const auto& v : variants) {
        ExperimentConfig sub = cfg;
        sub.variant = v;
        sub.output_dir = cfg.output_dir + "/" + v;
        sub.validate();
        auto model = build_model(sub, data);
        model->load(shared_ckpt);
        summaries.push_back(finish_run(sub, data, *model, phase1, sub.output_dir));
    }
    return summaries;
}

// --- read-only commands -------------------------------------------------------

inline std::string compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_csv) {
    if (run_dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
    std::vector<RunSummary> summaries;
    std::vector<std::string> names;
    for (const auto& dir : run_dirs) {
        summaries.push_back(read_summary_csv(dir + "/summary.csv"));
        names.push_back(std::filesystem::path(dir).filename().string());
    }
    for (const char* key : {"task", "source"}) {
        const std::string* first = summaries.front().find(key);
        for (const auto& s : summaries) {
            const std::string* v = s.find(key);
            if (!first || !v || *v != *first)
                throw DataError(std::string("incompatible runs: '") + key + "' differs");
        }
    }

    bool with_delta = summaries.size() == 2;
    std::ostringstream out;
    out << "metric";
    for (const auto& n : names) out << ',' << n;
    if (with_delta) out << ",delta";
    out << '\n';
    for (const auto& [key, value] : summaries.front().rows) {
        if (key == "warning") continue;
        out << key;
        std::vector<std::string> cells;
        for (const auto& s : summaries) {
            const std::string* v = s.find(key);
            cells.push_back(v ? *v : "");
            out << ',' << cells.back();
        }
        if (with_delta) {
            char* e0 = nullptr;
            char* e1 = nullptr;
            double a = std::strtod(cells[0].c_str(), &e0);
            double b = std::strtod(cells[1].c_str(), &e1);
            if (!cells[0].empty() && !cells[1].empty() && *e0 == '\0' && *e1 == '\0') {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.6f", b - a);
                out << ',' << buf;
            } else {
                out << ',';
            }
        }
        out << '\n';
    }
    std::string table = out.str();
    if (!out_csv.empty()) {
        std::ofstream f(out_csv);
        if (!f) throw DataError("cannot open comparison for writing: " + out_csv);
        f << table;
    }
    return table;
}

inline RunSummary evaluate_run(const std::string& run_dir) {
    ExperimentConfig cfg = load_config(run_dir + "/config.ini");
    ResolvedData data = resolve_dataset(cfg);
    auto model = build_model(cfg, data);
    model->load(run_dir + "/checkpoints/final.ckpt");
    RunSummary s;
    s.add("task", cfg.task);
    s.add("variant", cfg.variant);
    if (cfg.task == "classification") {
        auto ev = evaluate_classification(*model, data.eval);
        s.add("top1", ev.top1);
        detail::add_bucket_rows(s, "eval", ev.per_class_top1, data.train_counts);
    } else {
        auto rr = evaluate_retrieval(*model, data.query, data.gallery);
        s.add("mAP", rr.map);
        s.add("rank1", rr.rank1);
    }
    write_summary_csv(s, run_dir + "/eval.csv");
    return s;
}

inline void export_run_embeddings(const std::string& run_dir, const std::string& split, std::string out_path) {
    ExperimentConfig cfg = load_config(run_dir + "/config.ini");
    ResolvedData data = resolve_dataset(cfg);
    auto model = build_model(cfg, data);
    model->load(run_dir + "/checkpoints/final.ckpt");
    const Dataset* ds = nullptr;
    if (split == "train") ds = &data.train;
    else if (split == "eval") ds = &data.eval;
    else if (split == "query") ds = &data.query;
    else if (split == "gallery") ds = &data.gallery;
    else throw ConfigError("unknown split: " + split);
    if (ds->size() == 0) throw DataError("split '" + split + "' is empty for this config");
    if (out_path.empty()) {
        detail::ensure_dir(run_dir + "/embeddings");
        out_path = run_dir + "/embeddings/" + split + ".bin";
    }
    export_embeddings(*model, *ds, out_path);
}

// Writes the materialized dataset the config describes (features + labels,
// manifest, class profile) without training anything.
inline void synthesize_data(const ExperimentConfig& cfg, std::string out_dir) {
    cfg.validate();
    if (out_dir.empty()) out_dir = cfg.output_dir;
    detail::ensure_dir(out_dir);
    ResolvedData data = resolve_dataset(cfg);
    write_features_bin(data.train, out_dir + "/train.bin");
    write_manifest_jsonl(data.train, out_dir + "/train_manifest.jsonl", "train");
    write_profile_csv(data.train_counts, out_dir + "/profile.csv");
    if (cfg.task == "classification") {
        write_features_bin(data.eval, out_dir + "/eval.bin");
        write_manifest_jsonl(data.eval, out_dir + "/eval_manifest.jsonl", "eval");
    } else {
        write_features_bin(data.query, out_dir + "/query.bin");
        write_manifest_jsonl(data.query, out_dir + "/query_manifest.jsonl", "query");
        write_features_bin(data.gallery, out_dir + "/gallery.bin");
        write_manifest_jsonl(data.gallery, out_dir + "/gallery_manifest.jsonl", "gallery");
    }
}

// Curve + plateau statistics for a recorded trace; returns the printable report.
inline std::string jitter_stats(const std::string& trace_csv, const std::string& out_csv) {
    JitterTrace trace = load_trace_csv(trace_csv);
    auto curve = jitter_curve(trace);
    if (!out_csv.empty()) save_curve_csv(curve, out_csv);
    std::ostringstream out;
    out << "kind=" << trace.kind << " subject=" << trace.subject << " points=" << curve.size() << '\n';
    out << "variance(k=1)=" << curve.front().second << '\n';
    out << "variance(k=" << curve.back().first << ")=" << curve.back().second << '\n';
    std::size_t quarter = curve.size() / 4;
    if (quarter >= 2) {
        double initial = curve_slope(curve, 0, quarter);
        double final_ = curve_slope(curve, curve.size() - quarter, curve.size());
        out << "initial_quarter_slope=" << initial << '\n';
        out << "final_quarter_slope=" << final_ << '\n';
        if (initial != 0.0) out << "slope_ratio=" << final_ / initial << '\n';
    }
    return out.str();
}

}  // namespace mbj
