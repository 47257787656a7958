#include "mbj/memory_bank.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

using namespace mbj;

TEST_CASE("admission probabilities for counts [100,10] at beta 1.5") {
    auto p = admission_probabilities({.beta = 1.5, .class_counts = {100, 10}});
    REQUIRE(p.size() == 2);
    CHECK(p[0] == Catch::Approx(0.030653430031715504).epsilon(1e-12));
    CHECK(p[1] == Catch::Approx(0.9693465699682845).epsilon(1e-12));
    CHECK(p[0] + p[1] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("probabilities sum to one and favor rare classes") {
    auto p = admission_probabilities({.beta = 1.5, .class_counts = {64, 16, 4}});
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(p[0] == Catch::Approx(0.013698630136986301).epsilon(1e-12));
    CHECK(p[1] == Catch::Approx(0.1095890410958904).epsilon(1e-12));
    CHECK(p[2] == Catch::Approx(0.87671232876712324).epsilon(1e-12));
}

TEST_CASE("beta zero is uniform, rates are scale invariant") {
    auto p = admission_probabilities({.beta = 0.0, .class_counts = {100, 10, 1}});
    for (double v : p) CHECK(v == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    // multiplying every count by 10 leaves Eq. 1 unchanged
    auto a = admission_probabilities({.beta = 1.5, .class_counts = {64, 16, 4}});
    auto b = admission_probabilities({.beta = 1.5, .class_counts = {640, 160, 40}});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Catch::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("admission rates normalize by the rarest class") {
    auto q = admission_rates({.beta = 1.5, .class_counts = {64, 16, 4}});
    CHECK(q[0] == Catch::Approx(0.015625).epsilon(1e-12));
    CHECK(q[1] == Catch::Approx(0.125).epsilon(1e-12));
    CHECK(q[2] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sampling config is validated") {
    CHECK_THROWS_AS(admission_probabilities({.beta = -0.1, .class_counts = {10, 10}}), ConfigError);
    CHECK_THROWS_AS(admission_probabilities({.beta = 1.0, .class_counts = {}}), ConfigError);
    CHECK_THROWS_AS(admission_probabilities({.beta = 1.0, .class_counts = {10, 0}}), ConfigError);
}

namespace {

MemoryEntry entry(double v, int label, long iteration = 0) {
    MemoryEntry e;
    e.vector = Eigen::VectorXd::Constant(2, v);
    e.label = label;
    e.iteration = iteration;
    return e;
}

}  // namespace

TEST_CASE("bank keeps capacity by evicting the oldest entries") {
    MemoryBank bank(3);
    CHECK(bank.capacity() == 3);
    CHECK(bank.empty());
    bank.enqueue_dequeue({entry(1, 1), entry(2, 2)});
    CHECK(bank.size() == 2);
    bank.enqueue_dequeue({entry(3, 3), entry(4, 4)});
    CHECK(bank.size() == 3);
    auto snap = bank.snapshot();
    REQUIRE(snap.size() == 3);
    CHECK(snap[0].label == 2);  // oldest surviving entry first
    CHECK(snap[1].label == 3);
    CHECK(snap[2].label == 4);
    CHECK(snap[0].vector[0] == 2.0);
}

TEST_CASE("bank rejects zero capacity and non-finite vectors") {
    CHECK_THROWS_AS(MemoryBank(0), ConfigError);
    MemoryBank bank(2);
    MemoryEntry bad = entry(1, 0);
    bad.vector[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bank.enqueue_dequeue({bad}), NumericError);
}

TEST_CASE("occupancy counts labels and ignores strays") {
    MemoryBank bank(5);
    bank.enqueue_dequeue({entry(1, 0), entry(2, 1), entry(3, 1), entry(4, 9)});
    auto occ = bank.occupancy_per_class(3);
    CHECK(occ == std::vector<int>{1, 2, 0});
}

TEST_CASE("entry dump is one csv row per entry") {
    std::string dir = testutil::scratch_dir("memory_dump");
    MemoryBank bank(4);
    bank.enqueue_dequeue({entry(0.5, 1, 7), entry(-1.25, 0, 9)});
    dump_entries_csv(bank.snapshot(), dir + "/bank.csv");
    std::ifstream in(dir + "/bank.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "0.5,0.5,1,7");
    std::getline(in, line);
    CHECK(line == "-1.25,-1.25,0,9");
    CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("tail admissions with q=1 bypass the rng entirely") {
    std::vector<int> class_counts{100, 10};
    SamplingConfig cfg{.beta = 1.5, .class_counts = class_counts};

    Eigen::MatrixXd vectors = Eigen::MatrixXd::Random(5, 3);
    std::vector<int> labels(5, 1);  // all tail: admission rate exactly 1
    Rng rng(99);
    auto admitted = select_for_memory(vectors, labels, cfg, rng, 42);
    REQUIRE(admitted.size() == 5);
    for (std::size_t i = 0; i < admitted.size(); ++i) {
        CHECK(admitted[i].label == 1);
        CHECK(admitted[i].iteration == 42);
        CHECK((admitted[i].vector - vectors.row(static_cast<Eigen::Index>(i)).transpose()).norm() == 0.0);
    }
    // the selector consumed no randomness, so the stream is untouched
    Rng fresh(99);
    CHECK(rng.next_u64() == fresh.next_u64());
}

TEST_CASE("head admissions follow the bernoulli rate") {
    std::vector<int> class_counts{100, 10};
    SamplingConfig cfg{.beta = 1.5, .class_counts = class_counts};
    Rng rng(7);
    const int trials = 20000;
    Eigen::MatrixXd vectors = Eigen::MatrixXd::Zero(trials, 2);
    vectors.col(0).setOnes();
    std::vector<int> labels(trials, 0);
    auto admitted = select_for_memory(vectors, labels, cfg, rng);
    double rate = static_cast<double>(admitted.size()) / trials;
    CHECK(rate == Catch::Approx(0.031622776601683791).margin(0.005));
}

TEST_CASE("selector validates shapes and labels") {
    SamplingConfig cfg{.beta = 1.5, .class_counts = {10, 10}};
    Rng rng(1);
    Eigen::MatrixXd vectors = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(select_for_memory(vectors, {0}, cfg, rng), DataError);
    CHECK_THROWS_AS(select_for_memory(vectors, {0, 5}, cfg, rng), DataError);
}
