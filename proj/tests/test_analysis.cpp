#include "mbj/analysis.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

using namespace mbj;

namespace {

JitterTrace trace_of(std::initializer_list<std::pair<double, double>> points) {
    JitterTrace t;
    t.kind = "weight";
    t.subject = "class0";
    long it = 0;
    for (auto [a, b] : points) {
        Eigen::VectorXd v(2);
        v << a, b;
        t.append(v, it++);
    }
    return t;
}

}  // namespace

TEST_CASE("angular variance hand cases") {
    // a single vector deviates 0 degrees from its own direction
    CHECK(angular_variance(trace_of({{3.0, 4.0}}), 1) == 0.0);
    // two copies of one direction (different scales): still 0
    CHECK(angular_variance(trace_of({{1.0, 0.0}, {5.0, 0.0}}), 2) ==
          Catch::Approx(0.0).margin(1e-6));
    // two orthogonal unit vectors each sit 45 degrees from the mean -> 2025 deg^2
    CHECK(angular_variance(trace_of({{1.0, 0.0}, {0.0, 1.0}}), 2) ==
          Catch::Approx(2025.0).margin(1e-6));
}

TEST_CASE("angular variance guards its inputs") {
    JitterTrace t = trace_of({{1.0, 0.0}, {0.0, 1.0}});
    CHECK_THROWS_AS(angular_variance(t, 0), ConfigError);
    CHECK_THROWS_AS(angular_variance(t, 3), ConfigError);
    // opposite vectors have a zero mean direction
    CHECK_THROWS_AS(angular_variance(trace_of({{1.0, 0.0}, {-1.0, 0.0}}), 2), NumericError);
}

TEST_CASE("trace append enforces a single dimension") {
    JitterTrace t;
    t.append(Eigen::VectorXd::Zero(3), 0);
    CHECK_THROWS_AS(t.append(Eigen::VectorXd::Zero(4), 1), DataError);
    CHECK(t.size() == 1);
}

TEST_CASE("jitter curve runs k from 1 to n and starts at zero") {
    JitterTrace t = trace_of({{1.0, 0.0}, {0.9, 0.1}, {0.8, 0.3}, {0.7, 0.4}});
    auto curve = jitter_curve(t);
    REQUIRE(curve.size() == 4);
    CHECK(curve.front().first == 1);
    CHECK(curve.front().second == 0.0);
    CHECK(curve.back().first == 4);
    for (auto [k, v] : curve) CHECK(v >= 0.0);
    CHECK_THROWS_AS(jitter_curve(trace_of({{1.0, 0.0}})), ConfigError);
}

TEST_CASE("curve slope is the least-squares line slope") {
    std::vector<std::pair<std::size_t, double>> curve{{1, 2.0}, {2, 4.0}, {3, 6.0}, {4, 8.0}};
    CHECK(curve_slope(curve, 0, 4) == Catch::Approx(2.0).epsilon(1e-12));
    CHECK(curve_slope(curve, 1, 3) == Catch::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(curve_slope(curve, 2, 2), ConfigError);
    CHECK_THROWS_AS(curve_slope(curve, 0, 5), ConfigError);
    CHECK_THROWS_AS(curve_slope(curve, 3, 4), ConfigError);
}

TEST_CASE("shot buckets split at 100 and 20 inclusive") {
    auto b = shot_bucketed_accuracy({1.0, 0.5, 0.25, 0.75}, {150, 100, 19, 20});
    REQUIRE(b.many);
    REQUIRE(b.medium);
    REQUIRE(b.few);
    CHECK(*b.many == Catch::Approx(1.0));
    CHECK(*b.medium == Catch::Approx((0.5 + 0.75) / 2.0));
    CHECK(*b.few == Catch::Approx(0.25));
    CHECK(b.overall == Catch::Approx((1.0 + 0.5 + 0.25 + 0.75) / 4.0));

    auto only_many = shot_bucketed_accuracy({0.9}, {500});
    CHECK(only_many.many);
    CHECK_FALSE(only_many.medium);
    CHECK_FALSE(only_many.few);
    CHECK_THROWS_AS(shot_bucketed_accuracy({}, {}), ConfigError);
    CHECK_THROWS_AS(shot_bucketed_accuracy({0.5}, {1, 2}), ConfigError);
}

TEST_CASE("metrics jsonl writes retrieval keys only when present") {
    std::string dir = testutil::scratch_dir("analysis_metrics");
    RunRecord rec;
    EpochMetrics cls;
    cls.epoch = 0;
    cls.phase = 1;
    cls.loss_batch = 1.5;
    cls.top1 = 0.8;
    cls.per_class_top1 = {0.9, 0.7};
    cls.bank_occupancy_per_class = {3, 7};
    EpochMetrics dml = cls;
    dml.epoch = 1;
    dml.phase = 2;
    dml.map = 0.55;
    dml.rank1 = 0.75;
    rec.epochs = {cls, dml};
    write_metrics_jsonl(rec, dir + "/m.jsonl");

    std::ifstream in(dir + "/m.jsonl");
    std::string line;
    std::getline(in, line);
    auto j0 = nlohmann::json::parse(line);
    CHECK(j0["epoch"] == 0);
    CHECK(j0["loss_batch"] == 1.5);
    CHECK_FALSE(j0.contains("mAP"));
    CHECK(j0["bank_occupancy_per_class"] == nlohmann::json({3, 7}));
    std::getline(in, line);
    auto j1 = nlohmann::json::parse(line);
    CHECK(j1["phase"] == 2);
    CHECK(j1["mAP"] == 0.55);
    CHECK(j1["rank1"] == 0.75);
}

TEST_CASE("trace csv round-trips exactly") {
    std::string dir = testutil::scratch_dir("analysis_trace");
    JitterTrace t;
    t.kind = "feature";
    t.subject = "sample42";
    Rng rng(3);
    for (long i = 0; i < 5; ++i) {
        Eigen::VectorXd v(3);
        for (int j = 0; j < 3; ++j) v[j] = rng.normal();
        t.append(v, 10 * i);
    }
    save_trace_csv(t, dir + "/t.csv");
    JitterTrace back = load_trace_csv(dir + "/t.csv");
    CHECK(back.kind == "feature");
    CHECK(back.subject == "sample42");
    CHECK(back.iterations == t.iterations);
    REQUIRE(back.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK((back.vectors[i] - t.vectors[i]).norm() == 0.0);  // precision 17 is lossless
}

TEST_CASE("trace loader rejects malformed files") {
    std::string dir = testutil::scratch_dir("analysis_trace_bad");
    {
        std::ofstream out(dir + "/noheader.csv");
        out << "0,1.0,2.0\n";
    }
    CHECK_THROWS_AS(load_trace_csv(dir + "/noheader.csv"), DataError);
    {
        std::ofstream out(dir + "/empty.csv");
        out << "# kind=weight subject=class1\n";
    }
    CHECK_THROWS_AS(load_trace_csv(dir + "/empty.csv"), DataError);
    {
        std::ofstream out(dir + "/novec.csv");
        out << "# kind=weight subject=class1\n7\n";
    }
    CHECK_THROWS_AS(load_trace_csv(dir + "/novec.csv"), DataError);
    CHECK_THROWS_AS(load_trace_csv(dir + "/absent.csv"), DataError);
}

TEST_CASE("curve csv has the documented header") {
    std::string dir = testutil::scratch_dir("analysis_curve");
    save_curve_csv({{1, 0.0}, {2, 12.5}}, dir + "/c.csv");
    std::ifstream in(dir + "/c.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "k,angular_variance_deg2");
    std::getline(in, line);
    CHECK(line == "1,0");
    std::getline(in, line);
    CHECK(line == "2,12.5");
}

TEST_CASE("embedding export round-trips and matches live logits") {
    std::string dir = testutil::scratch_dir("analysis_export");
    Rng rng(9);
    auto ext = std::make_unique<MlpExtractor>(4, 6, 3, rng);
    auto head = ClassifierHead::random_init(2, 3, false, rng, 0.5);
    EmbeddingModel model(std::move(ext), std::move(head));

    Dataset data;
    data.feature_dim = 4;
    data.class_count = 2;
    Rng drng(10);
    std::vector<float> row(4);
    for (int i = 0; i < 7; ++i) {
        for (auto& v : row) v = static_cast<float>(drng.normal());
        data.push_row(row.data(), i % 2, i % 3);
    }

    export_embeddings(model, data, dir + "/e.bin", 3);  // multi-batch on purpose
    EmbeddingFile f = load_embeddings(dir + "/e.bin");
    REQUIRE(f.matrix.rows() == 7);
    REQUIRE(f.matrix.cols() == 3);
    CHECK(f.labels == data.labels);
    CHECK(f.cameras == data.cameras);

    std::vector<std::size_t> all(7);
    std::iota(all.begin(), all.end(), std::size_t{0});
    ForwardResult live = model.forward(data.batch(all), false);
    CHECK((f.matrix.cast<double>() - live.embeddings).cwiseAbs().maxCoeff() < 1e-6);

    // exported embeddings x head weights reproduce the live logits
    Eigen::MatrixXd relogits = f.matrix.cast<double>() * model.head().weights().transpose();
    CHECK((relogits - live.logits).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("embedding loader rejects corrupt inputs") {
    std::string dir = testutil::scratch_dir("analysis_load_bad");
    {
        std::ofstream out(dir + "/bad.bin", std::ios::binary);
        out << "XXXX";
    }
    CHECK_THROWS_AS(load_embeddings(dir + "/bad.bin"), DataError);
    {
        std::ofstream out(dir + "/trunc.bin", std::ios::binary);
        out.write("MBJE", 4);
        std::int64_t n = 2, d = 3;
        out.write(reinterpret_cast<const char*>(&n), sizeof(n));
        out.write(reinterpret_cast<const char*>(&d), sizeof(d));
        float v = 1.0f;
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    CHECK_THROWS_AS(load_embeddings(dir + "/trunc.bin"), DataError);
    CHECK_THROWS_AS(load_embeddings(dir + "/missing.bin"), DataError);
}

TEST_CASE("export refuses an empty dataset") {
    Rng rng(11);
    auto ext = std::make_unique<MlpExtractor>(4, 6, 3, rng);
    EmbeddingModel model(std::move(ext), ClassifierHead(2, 3, false));
    Dataset empty;
    empty.feature_dim = 4;
    CHECK_THROWS_AS(export_embeddings(model, empty, "nowhere.bin"), DataError);
}
