#include "mbj/model.hpp"

#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <memory>
#include <vector>

using namespace mbj;

namespace {

EmbeddingModel make_mlp_model(std::uint64_t seed, int in_dim = 6, int hidden = 8, int emb = 4,
                              int classes = 3) {
    Rng rng(seed);
    auto ext = std::make_unique<MlpExtractor>(in_dim, hidden, emb, rng);
    auto head = ClassifierHead::random_init(classes, emb, false, rng);
    return EmbeddingModel(std::move(ext), std::move(head));
}

}  // namespace

TEST_CASE("mlp extractor shapes and identity") {
    Rng rng(1);
    MlpExtractor mlp(6, 8, 4, rng);
    CHECK(mlp.input_dim() == 6);
    CHECK(mlp.embedding_dim() == 4);
    CHECK(mlp.backbone_id() == "mlp");
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 6);
    Eigen::MatrixXd emb = mlp.forward(x, false);
    CHECK(emb.rows() == 5);
    CHECK(emb.cols() == 4);
}

TEST_CASE("mlp extractor backward matches finite differences") {
    Rng rng(2);
    MlpExtractor mlp(4, 6, 3, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 4);
    Eigen::MatrixXd g = Eigen::MatrixXd::Random(2, 3);
    mlp.forward(x, true);
    Eigen::MatrixXd dx = mlp.backward(g);
    auto f = [&](const Eigen::MatrixXd& xx) { return (mlp.forward(xx, false).array() * g.array()).sum(); };
    CHECK(testutil::grad_rel_err(dx, testutil::numeric_grad(f, x)) < 1e-4);
}

TEST_CASE("model validates head/extractor agreement and batches") {
    Rng rng(3);
    auto ext = std::make_unique<MlpExtractor>(6, 8, 4, rng);
    auto bad_head = ClassifierHead(3, 5, false);
    CHECK_THROWS_AS(EmbeddingModel(std::move(ext), std::move(bad_head)), ConfigError);

    EmbeddingModel model = make_mlp_model(4);
    CHECK_THROWS_AS(model.forward(Eigen::MatrixXd(0, 6), false), DataError);
    CHECK_THROWS_AS(model.forward(Eigen::MatrixXd::Zero(2, 7), false), DataError);
    ForwardResult r = model.forward(Eigen::MatrixXd::Random(2, 6), false);
    CHECK(r.embeddings.cols() == 4);
    CHECK(r.logits.cols() == 3);
}

TEST_CASE("prototype snapshots copy the head weights") {
    EmbeddingModel model = make_mlp_model(5);
    Eigen::MatrixXd proto = model.read_prototypes();
    CHECK((proto - model.head().weights()).norm() == 0.0);
    proto(0, 0) += 1.0;  // mutating the copy must not touch the model
    CHECK(model.head().weights()(0, 0) != proto(0, 0));
}

TEST_CASE("parameter list covers extractor and head") {
    EmbeddingModel model = make_mlp_model(6);
    auto params = model.parameters();
    REQUIRE(params.size() == 5);  // fc1 w/b, fc2 w/b, head
    CHECK(params.back().name == "head.weight");
    CHECK(params.back().decay);
    CHECK(model.head_grad().isZero(0.0));
    // the head ref aliases live storage
    *params.back().value = Eigen::MatrixXd::Ones(3, 4);
    CHECK(model.head().weights()(2, 3) == 1.0);
}

TEST_CASE("checkpoints restore the exact forward map") {
    std::string dir = testutil::scratch_dir("model_ckpt");
    EmbeddingModel a = make_mlp_model(7);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 6);
    Eigen::MatrixXd before = a.forward(x, false).logits;
    a.save(dir + "/m.ckpt");

    EmbeddingModel b = make_mlp_model(8);  // different init
    CHECK((b.forward(x, false).logits - before).norm() > 1e-8);
    b.load(dir + "/m.ckpt");
    CHECK((b.forward(x, false).logits - before).norm() == 0.0);
}

TEST_CASE("checkpoint loading rejects foreign files") {
    std::string dir = testutil::scratch_dir("model_ckpt_bad");
    {
        std::ofstream out(dir + "/junk.ckpt", std::ios::binary);
        out << "not a checkpoint at all";
    }
    EmbeddingModel m = make_mlp_model(9);
    CHECK_THROWS_AS(m.load(dir + "/junk.ckpt"), DataError);
    CHECK_THROWS_AS(m.load(dir + "/absent.ckpt"), DataError);

    EmbeddingModel wide = make_mlp_model(10, 6, 8, 4, 7);  // 7 classes
    m.save(dir + "/three.ckpt");
    CHECK_THROWS_AS(wide.load(dir + "/three.ckpt"), DataError);
}

TEST_CASE("small resnet embeds images and differentiates") {
    Rng rng(11);
    ResNetExtractor net(3, 8, 8, 1, rng, 4);
    CHECK(net.backbone_id() == "resnet8");
    CHECK(net.input_dim() == 3 * 8 * 8);
    CHECK(net.embedding_dim() == 16);  // base * 4 after three stages

    Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 3 * 8 * 8);
    Eigen::MatrixXd emb = net.forward(x, true);
    REQUIRE(emb.rows() == 2);
    REQUIRE(emb.cols() == 16);
    CHECK(all_finite(emb));

    Eigen::MatrixXd g = Eigen::MatrixXd::Random(2, 16);
    Eigen::MatrixXd dx = net.backward(g);
    auto f = [&](const Eigen::MatrixXd& xx) { return (net.forward(xx, true).array() * g.array()).sum(); };
    CHECK(testutil::grad_rel_err(dx, testutil::numeric_grad(f, x), 1e-4) < 1e-3);
}

TEST_CASE("resnet checkpoints carry batch-norm statistics") {
    std::string dir = testutil::scratch_dir("model_resnet_ckpt");
    Rng rng(12);
    auto net = std::make_unique<ResNetExtractor>(3, 8, 8, 1, rng, 4);
    auto head = ClassifierHead::random_init(2, net->embedding_dim(), false, rng);
    EmbeddingModel a(std::move(net), std::move(head));

    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3 * 8 * 8);
    for (int i = 0; i < 3; ++i) a.forward(x, true);  // move running stats off init
    Eigen::MatrixXd ref = a.forward(x, false).logits;
    a.save(dir + "/r.ckpt");

    Rng rng2(13);
    auto net2 = std::make_unique<ResNetExtractor>(3, 8, 8, 1, rng2, 4);
    auto head2 = ClassifierHead::random_init(2, net2->embedding_dim(), false, rng2);
    EmbeddingModel b(std::move(net2), std::move(head2));
    b.load(dir + "/r.ckpt");
    CHECK((b.forward(x, false).logits - ref).norm() == 0.0);

    // backbone mismatch is refused
    EmbeddingModel mlp = make_mlp_model(14, 3 * 8 * 8, 8, 16, 2);
    CHECK_THROWS_AS(mlp.load(dir + "/r.ckpt"), DataError);
}
