#include "mbj/losses.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace mbj;

namespace {

ClassifierHead head_from(const Eigen::MatrixXd& w, bool normalize = false) {
    ClassifierHead h(static_cast<int>(w.rows()), static_cast<int>(w.cols()), normalize);
    h.weights() = w;
    return h;
}

}  // namespace

TEST_CASE("loss config validation") {
    LossConfig ok;
    CHECK_NOTHROW(ok.validate());
    CHECK_THROWS_AS((LossConfig{15.0, 0.0, 0.35}.validate()), ConfigError);
    CHECK_THROWS_AS((LossConfig{-1.0, 30.0, 0.35}.validate()), ConfigError);
    CHECK_THROWS_AS((LossConfig{15.0, 30.0, -0.1}.validate()), ConfigError);
}

TEST_CASE("classifier head stores prototypes and raw logits") {
    Rng rng(2);
    auto h = ClassifierHead::random_init(3, 4, true, rng);
    CHECK(h.class_count() == 3);
    CHECK(h.dim() == 4);
    CHECK(h.normalized());
    Eigen::MatrixXd emb = Eigen::MatrixXd::Random(2, 4);
    CHECK(((h.logits(emb)) - emb * h.weights().transpose()).norm() < 1e-12);
}

TEST_CASE("cross entropy from logits matches the hand value") {
    Eigen::MatrixXd logits(1, 2);
    logits << 2.0, 0.0;
    auto ll = cross_entropy_from_logits(logits, {0});
    CHECK(ll.value == Catch::Approx(0.1269280110429725).margin(1e-12));

    Eigen::MatrixXd l2(1, 3);
    l2 << 1.0, 0.0, 0.0;
    CHECK(cross_entropy_from_logits(l2, {0}).value ==
          Catch::Approx(0.55144471393205086).margin(1e-12));
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Eigen::MatrixXd logits = Eigen::MatrixXd::Random(3, 4);
    std::vector<int> labels{1, 3, 0};
    auto ll = cross_entropy_from_logits(logits, labels);
    auto f = [&](const Eigen::MatrixXd& z) { return cross_entropy_from_logits(z, labels).value; };
    CHECK(testutil::grad_rel_err(ll.d_logits, testutil::numeric_grad(f, logits)) < 1e-4);
}

TEST_CASE("batch cross entropy differentiates embeddings and weights") {
    Rng rng(5);
    auto head = ClassifierHead::random_init(3, 4, false, rng, 0.5);
    Eigen::MatrixXd emb = Eigen::MatrixXd::Random(2, 4);
    std::vector<int> labels{2, 0};
    BatchLoss bl = cross_entropy(emb, labels, head);

    auto f_emb = [&](const Eigen::MatrixXd& e) { return cross_entropy(e, labels, head).value; };
    CHECK(testutil::grad_rel_err(bl.d_embeddings, testutil::numeric_grad(f_emb, emb)) < 1e-4);

    auto f_w = [&](const Eigen::MatrixXd& w) { return cross_entropy(emb, labels, head_from(w)).value; };
    CHECK(testutil::grad_rel_err(bl.d_weights, testutil::numeric_grad(f_w, head.weights())) < 1e-4);
}

TEST_CASE("memory loss trains the head but never the memories") {
    Rng rng(6);
    auto head = ClassifierHead::random_init(3, 4, false, rng, 0.5);
    std::vector<MemoryEntry> entries(5);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        entries[i].vector = Eigen::VectorXd::Random(4);
        entries[i].label = static_cast<int>(i % 3);
    }
    MemoryClsLoss ml = memory_loss_cls(entries, head);
    CHECK(ml.value > 0.0);

    // gradient-blocking contract: the memory slot is exactly zero
    CHECK(ml.d_memory_vectors.rows() == 5);
    CHECK(ml.d_memory_vectors.isZero(0.0));

    auto f_w = [&](const Eigen::MatrixXd& w) { return memory_loss_cls(entries, head_from(w)).value; };
    CHECK(testutil::grad_rel_err(ml.d_weights, testutil::numeric_grad(f_w, head.weights())) < 1e-4);

    // and the value is just cross-entropy of the memorized features
    Eigen::MatrixXd mem(5, 4);
    std::vector<int> labels(5);
    for (std::size_t i = 0; i < 5; ++i) {
        mem.row(static_cast<Eigen::Index>(i)) = entries[i].vector.transpose();
        labels[i] = entries[i].label;
    }
    CHECK(ml.value == Catch::Approx(cross_entropy(mem, labels, head).value).epsilon(1e-12));
}

TEST_CASE("empty memory contributes exactly nothing") {
    Rng rng(7);
    auto head = ClassifierHead::random_init(3, 4, false, rng);
    MemoryClsLoss ml = memory_loss_cls({}, head);
    CHECK(ml.value == 0.0);
    CHECK(ml.d_weights.isZero(0.0));
}

TEST_CASE("memory loss rejects mismatched vectors") {
    Rng rng(8);
    auto head = ClassifierHead::random_init(3, 4, false, rng);
    MemoryEntry e;
    e.vector = Eigen::VectorXd::Zero(7);
    CHECK_THROWS_AS(memory_loss_cls({e}, head), DataError);
}

TEST_CASE("loss fusion is eta * memory + batch") {
    CHECK(fuse_losses(2.0, 3.0, 15.0) == Catch::Approx(33.0).epsilon(1e-12));
    CHECK(fuse_losses(2.0, 3.0, 0.0) == Catch::Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(fuse_losses(std::numeric_limits<double>::infinity(), 1.0, 1.0), NumericError);
    CHECK_THROWS_AS(fuse_losses(1.0, std::numeric_limits<double>::quiet_NaN(), 1.0), NumericError);
}

TEST_CASE("cosface matches the hand-computed margin value") {
    // unit x at angle acos(0.9) from prototype 0; prototype 1 a further
    // acos(0.3) away, so cos_y = 0.9 and cos_other = 0.3 exactly.
    double t0 = std::acos(0.9);
    double t1 = t0 + std::acos(0.3);
    Eigen::MatrixXd w(2, 2);
    w << 1.0, 0.0, std::cos(t1), std::sin(t1);
    Eigen::VectorXd x(2);
    x << std::cos(t0), std::sin(t0);

    SampleLoss sl = cosface_loss(x, 0, head_from(w, true), 30.0, 0.35);
    CHECK(sl.value == Catch::Approx(std::log1p(std::exp(-7.5))).margin(1e-10));
    CHECK(sl.value == Catch::Approx(0.0005529314753607964).margin(1e-9));
}

TEST_CASE("cosface with zero margin is scaled cosine cross-entropy") {
    Rng rng(9);
    auto head = ClassifierHead::random_init(3, 4, true, rng, 0.7);
    Eigen::VectorXd x = Eigen::VectorXd::Random(4);
    const double alpha = 11.0;
    SampleLoss sl = cosface_loss(x, 1, head, alpha, 0.0);

    Eigen::MatrixXd wu = head.weights();
    for (int k = 0; k < 3; ++k) wu.row(k).normalize();
    Eigen::MatrixXd logits = alpha * (x.transpose() / x.norm()) * wu.transpose();
    CHECK(sl.value == Catch::Approx(cross_entropy_from_logits(logits, {1}).value).epsilon(1e-12));
}

TEST_CASE("cosface gradients match finite differences") {
    Rng rng(10);
    auto head = ClassifierHead::random_init(4, 5, true, rng, 0.7);
    Eigen::VectorXd x = Eigen::VectorXd::Random(5);
    SampleLoss sl = cosface_loss(x, 2, head, 30.0, 0.35);

    auto f_x = [&](const Eigen::MatrixXd& xx) {
        return cosface_loss(xx.col(0), 2, head, 30.0, 0.35).value;
    };
    Eigen::MatrixXd num_x = testutil::numeric_grad(f_x, x);
    CHECK(testutil::grad_rel_err(sl.d_embedding, num_x) < 1e-4);

    auto f_w = [&](const Eigen::MatrixXd& w) {
        return cosface_loss(x, 2, head_from(w, true), 30.0, 0.35).value;
    };
    CHECK(testutil::grad_rel_err(sl.d_weights, testutil::numeric_grad(f_w, head.weights())) < 1e-4);
}

TEST_CASE("cosface validates its inputs") {
    Rng rng(11);
    auto head = ClassifierHead::random_init(2, 3, true, rng);
    Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(cosface_loss(x, 0, head, 0.0, 0.35), ConfigError);
    CHECK_THROWS_AS(cosface_loss(x, 5, head, 30.0, 0.35), DataError);
    CHECK_THROWS_AS(cosface_loss(Eigen::VectorXd::Ones(4), 0, head, 30.0, 0.35), DataError);
    CHECK_THROWS_AS(cosface_loss(Eigen::VectorXd::Zero(3), 0, head, 30.0, 0.35), NumericError);
}

TEST_CASE("circle memory loss matches the single-pair hand value") {
    Eigen::VectorXd x(2);
    x << 1.0, 0.0;
    Eigen::MatrixXd pos(1, 2), neg(1, 2);
    pos << 0.8, 0.6;                        // u'x = 0.8
    neg << 0.2, std::sqrt(1.0 - 0.04);      // v'x = 0.2
    CircleMemoryLoss cl = circle_memory_loss(x, pos, neg, 1.0, 0.0);
    CHECK(cl.value == Catch::Approx(0.4374879504858856).margin(1e-9));
    CHECK(cl.value == Catch::Approx(std::log1p(std::exp(-0.6))).margin(1e-12));
}

TEST_CASE("circle memory loss is exactly zero without pairs") {
    Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    Eigen::MatrixXd none(0, 3), some = Eigen::MatrixXd::Identity(2, 3);
    for (auto [p, n] : {std::pair{&none, &some}, std::pair{&some, &none}, std::pair{&none, &none}}) {
        CircleMemoryLoss cl = circle_memory_loss(x, *p, *n, 30.0, 0.35);
        CHECK(cl.value == 0.0);
        CHECK(cl.d_embedding.isZero(0.0));
    }
}

TEST_CASE("circle memory loss blocks gradients into the bank") {
    Rng rng(12);
    Eigen::VectorXd x = Eigen::VectorXd::Random(4);
    Eigen::MatrixXd pos(2, 4), neg(3, 4);
    for (int i = 0; i < 2; ++i) pos.row(i) = unit(Eigen::VectorXd::Random(4)).transpose();
    for (int j = 0; j < 3; ++j) neg.row(j) = unit(Eigen::VectorXd::Random(4)).transpose();
    CircleMemoryLoss cl = circle_memory_loss(x, pos, neg, 30.0, 0.35);
    CHECK(cl.value > 0.0);
    CHECK(cl.d_positives.rows() == 2);
    CHECK(cl.d_negatives.rows() == 3);
    CHECK(cl.d_positives.isZero(0.0));
    CHECK(cl.d_negatives.isZero(0.0));

    auto f_x = [&](const Eigen::MatrixXd& xx) {
        return circle_memory_loss(xx.col(0), pos, neg, 30.0, 0.35).value;
    };
    CHECK(testutil::grad_rel_err(cl.d_embedding, testutil::numeric_grad(f_x, x)) < 1e-4);
}

TEST_CASE("circle memory loss enforces unit-norm prototypes") {
    Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    Eigen::MatrixXd pos = Eigen::MatrixXd::Identity(1, 3);
    Eigen::MatrixXd bad = 2.0 * Eigen::MatrixXd::Identity(1, 3);
    CHECK_THROWS_AS(circle_memory_loss(x, bad, pos, 1.0, 0.0), NumericError);
    CHECK_THROWS_AS(circle_memory_loss(x, pos, bad, 1.0, 0.0), NumericError);
    CHECK_THROWS_AS(circle_memory_loss(Eigen::VectorXd::Zero(3), pos, pos, 1.0, 0.0), NumericError);
    CHECK_THROWS_AS(circle_memory_loss(x, pos, Eigen::MatrixXd::Identity(1, 4), 1.0, 0.0), DataError);
    CHECK_THROWS_AS(circle_memory_loss(x, pos, pos, -1.0, 0.0), ConfigError);
}

TEST_CASE("circle loss stays finite under extreme scale") {
    Eigen::VectorXd x(2);
    x << 0.0, 1.0;
    Eigen::MatrixXd pos(1, 2), neg(1, 2);
    pos << 0.0, -1.0;  // worst case: positive opposite, negative aligned
    neg << 0.0, 1.0;
    CircleMemoryLoss cl = circle_memory_loss(x, pos, neg, 500.0, 0.35);
    CHECK(std::isfinite(cl.value));
    // exponent is 500 * 2.35; the stable form returns ~the exponent itself
    CHECK(cl.value == Catch::Approx(500.0 * 2.35).epsilon(1e-9));
}
