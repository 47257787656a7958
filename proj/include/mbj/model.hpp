#pragma once

// Trainable feature extractor + classifier head. Two extractors ship: a
// 2-layer perceptron for synthetic embedding data and a small residual CNN
// for 32x32-style images (depth 6n+2, configurable n).

#include "mbj/common.hpp"
#include "mbj/losses.hpp"
#include "mbj/nn.hpp"

#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace mbj {

class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual int input_dim() const = 0;
    virtual int embedding_dim() const = 0;
    virtual std::string backbone_id() const = 0;
    virtual Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) = 0;
    virtual Eigen::MatrixXd backward(const Eigen::MatrixXd& d_embeddings) = 0;
    virtual void collect(std::vector<ParamRef>& out) = 0;
    virtual void save(std::ostream& out) const = 0;
    virtual void load(std::istream& in) = 0;
};

class MlpExtractor final : public FeatureExtractor {
  public:
    MlpExtractor(int in_dim, int hidden_dim, int embedding_dim, Rng& rng)
        : in_dim_(in_dim), emb_dim_(embedding_dim),
          fc1_(in_dim, hidden_dim, rng, "fc1"), fc2_(hidden_dim, embedding_dim, rng, "fc2") {}

    int input_dim() const override { return in_dim_; }
    int embedding_dim() const override { return emb_dim_; }
    std::string backbone_id() const override { return "mlp"; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) override {
        return fc2_.forward(act_.forward(fc1_.forward(x, training), training), training);
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& d_emb) override {
        return fc1_.backward(act_.backward(fc2_.backward(d_emb)));
    }

    void collect(std::vector<ParamRef>& out) override {
        fc1_.collect(out);
        fc2_.collect(out);
    }

    void save(std::ostream& out) const override {
        fc1_.save(out);
        fc2_.save(out);
    }
    void load(std::istream& in) override {
        fc1_.load(in);
        fc2_.load(in);
    }

  private:
    int in_dim_, emb_dim_;
    Dense fc1_, fc2_;
    Relu act_;
};

// conv-bn-relu stem, three stages of residual blocks (16/32/64 channels),
// global average pooling; embedding dim is 64.
class ResNetExtractor final : public FeatureExtractor {
    struct Block {
        Conv2d conv1, conv2, proj;
        BatchNorm2d bn1, bn2, bn_proj;
        Relu relu1, relu2;
        bool has_proj = false;

        Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) {
            Eigen::MatrixXd main = bn2.forward(conv2.forward(
                relu1.forward(bn1.forward(conv1.forward(x, training), training), training), training), training);
            Eigen::MatrixXd sc = has_proj ? bn_proj.forward(proj.forward(x, training), training) : x;
            return relu2.forward(main + sc, training);
        }

        Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
            Eigen::MatrixXd d_sum = relu2.backward(dy);
            Eigen::MatrixXd d_main =
                conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(d_sum)))));
            Eigen::MatrixXd d_sc = has_proj ? proj.backward(bn_proj.backward(d_sum)) : d_sum;
            return d_main + d_sc;
        }

        void collect(std::vector<ParamRef>& out) {
            conv1.collect(out);
            bn1.collect(out);
            conv2.collect(out);
            bn2.collect(out);
            if (has_proj) {
                proj.collect(out);
                bn_proj.collect(out);
            }
        }
        void save(std::ostream& out) const {
            conv1.save(out);
            bn1.save(out);
            conv2.save(out);
            bn2.save(out);
            if (has_proj) {
                proj.save(out);
                bn_proj.save(out);
            }
        }
        void load(std::istream& in) {
            conv1.load(in);
            bn1.load(in);
            conv2.load(in);
            bn2.load(in);
            if (has_proj) {
                proj.load(in);
                bn_proj.load(in);
            }
        }
    };

  public:
    // blocks_per_stage n gives depth 6n+2 (n=1: resnet8, n=3: resnet20, n=5: resnet32)
    ResNetExtractor(int in_channels, int height, int width, int blocks_per_stage, Rng& rng,
                    int base_channels = 16)
        : in_c_(in_channels), h_(height), w_(width), n_(blocks_per_stage), base_(base_channels) {
        stem_conv_ = Conv2d(in_c_, base_, h_, w_, 3, 1, 1, rng, "stem.conv");
        stem_bn_ = BatchNorm2d(base_, h_, w_, "stem.bn");
        int ch = base_, hh = h_, ww = w_;
        int idx = 0;
        for (int stage = 0; stage < 3; ++stage) {
            int out_ch = base_ << stage;
            for (int b = 0; b < n_; ++b) {
                int stride = (stage > 0 && b == 0) ? 2 : 1;
                blocks_.push_back(make_block(ch, out_ch, hh, ww, stride, rng, idx++));
                hh = (hh + 2 - 3) / stride + 1;
                ww = (ww + 2 - 3) / stride + 1;
                ch = out_ch;
            }
        }
        pool_ = GlobalAvgPool(ch, hh, ww);
        emb_dim_ = ch;
    }

    int input_dim() const override { return in_c_ * h_ * w_; }
    int embedding_dim() const override { return emb_dim_; }
    std::string backbone_id() const override { return "resnet" + std::to_string(6 * n_ + 2); }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) override {
        Eigen::MatrixXd a = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, training), training), training);
        for (auto& blk : blocks_) a = blk->forward(a, training);
        return pool_.forward(a, training);
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& d_emb) override {
        Eigen::MatrixXd d = pool_.backward(d_emb);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
        return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(d)));
    }

    void collect(std::vector<ParamRef>& out) override {
        stem_conv_.collect(out);
        stem_bn_.collect(out);
        for (auto& blk : blocks_) blk->collect(out);
    }

    void save(std::ostream& out) const override {
        stem_conv_.save(out);
        stem_bn_.save(out);
        for (const auto& blk : blocks_) blk->save(out);
    }
    void load(std::istream& in) override {
        stem_conv_.load(in);
        stem_bn_.load(in);
        for (auto& blk : blocks_) blk->load(in);
    }

  private:
    std::unique_ptr<Block> make_block(int in_ch, int out_ch, int h, int w, int stride, Rng& rng, int idx) {
        auto blk = std::make_unique<Block>();
        std::string base = "block" + std::to_string(idx);
        blk->conv1 = Conv2d(in_ch, out_ch, h, w, 3, stride, 1, rng, base + ".conv1");
        int oh = (h + 2 - 3) / stride + 1, ow = (w + 2 - 3) / stride + 1;
        blk->bn1 = BatchNorm2d(out_ch, oh, ow, base + ".bn1");
        blk->conv2 = Conv2d(out_ch, out_ch, oh, ow, 3, 1, 1, rng, base + ".conv2");
        blk->bn2 = BatchNorm2d(out_ch, oh, ow, base + ".bn2");
        blk->has_proj = (stride != 1 || in_ch != out_ch);
        if (blk->has_proj) {
            blk->proj = Conv2d(in_ch, out_ch, h, w, 1, stride, 0, rng, base + ".proj");
            blk->bn_proj = BatchNorm2d(out_ch, oh, ow, base + ".bn_proj");
        }
        return blk;
    }

    int in_c_, h_, w_, n_, base_, emb_dim_ = 0;
    Conv2d stem_conv_;
    BatchNorm2d stem_bn_;
    Relu stem_relu_;
    std::vector<std::unique_ptr<Block>> blocks_;
    GlobalAvgPool pool_;
};

// --- model = extractor + head ------------------------------------------------

struct ForwardResult {
    Eigen::MatrixXd embeddings;  // (batch, d)
    Eigen::MatrixXd logits;      // (batch, C)
};

class EmbeddingModel {
  public:
    EmbeddingModel(std::unique_ptr<FeatureExtractor> extractor, ClassifierHead head)
        : extractor_(std::move(extractor)), head_(std::move(head)) {
        if (head_.dim() != extractor_->embedding_dim())
            throw ConfigError("classifier head dimension does not match extractor embedding dim");
    }

    int embedding_dim() const { return extractor_->embedding_dim(); }
    int class_count() const { return head_.class_count(); }
    FeatureExtractor& extractor() { return *extractor_; }
    ClassifierHead& head() { return head_; }
    const ClassifierHead& head() const { return head_; }

    ForwardResult forward(const Eigen::MatrixXd& batch, bool training) {
        if (batch.rows() == 0) throw DataError("empty batch in forward");
        if (batch.cols() != extractor_->input_dim()) throw DataError("batch width does not match extractor input dim");
        ForwardResult r;
        r.embeddings = extractor_->forward(batch, training);
        r.logits = head_.logits(r.embeddings);
        return r;
    }

    // gradient-blocked copies of the current prototypes, row k = class k
    Eigen::MatrixXd read_prototypes() const { return head_.weights(); }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        extractor_->collect(out);
        head_grad_.resize(head_.weights().rows(), head_.weights().cols());
        head_grad_.setZero();
        out.push_back({"head.weight", &head_.weights(), &head_grad_, true});
        return out;
    }

    Eigen::MatrixXd& head_grad() { return head_grad_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open checkpoint for writing: " + path);
        out.write("MBJC", 4);
        std::int32_t version = 1;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        io::write_string(out, extractor_->backbone_id());
        std::int32_t meta[3] = {static_cast<std::int32_t>(extractor_->embedding_dim()),
                                static_cast<std::int32_t>(head_.class_count()),
                                head_.normalized() ? 1 : 0};
        out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
        extractor_->save(out);
        io::write_matrix(out, head_.weights());
    }

    // Restores parameters into a structurally matching model.
    void load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint: " + path);
        char magic[4];
        in.read(magic, 4);
        if (!in || std::string(magic, 4) != "MBJC") throw DataError("not a model checkpoint: " + path);
        std::int32_t version = 0;
        in.read(reinterpret_cast<char*>(&version), sizeof(version));
        if (version != 1) throw DataError("unsupported checkpoint version");
        std::string backbone = io::read_string(in);
        if (backbone != extractor_->backbone_id())
            throw DataError("checkpoint backbone '" + backbone + "' does not match model '" +
                            extractor_->backbone_id() + "'");
        std::int32_t meta[3];
        in.read(reinterpret_cast<char*>(meta), sizeof(meta));
        if (meta[0] != extractor_->embedding_dim() || meta[1] != head_.class_count())
            throw DataError("checkpoint dimensions do not match model");
        extractor_->load(in);
        Eigen::MatrixXd w = io::read_matrix(in);
        if (w.rows() != head_.weights().rows() || w.cols() != head_.weights().cols())
            throw DataError("checkpoint head shape mismatch");
        head_.weights() = w;
    }

  private:
    std::unique_ptr<FeatureExtractor> extractor_;
    ClassifierHead head_;
    Eigen::MatrixXd head_grad_;
};

}  // namespace mbj
