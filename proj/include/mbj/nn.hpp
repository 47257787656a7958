#pragma once

// Minimal double-precision layers with explicit forward/backward, enough to
// back the two extractors (2-layer perceptron, small residual CNN) without
// an external autodiff dependency. Activations are (batch x flattened) row
// matrices; image rows are laid out channel-major (c, h, w).

#include "mbj/common.hpp"

#include <cmath>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace mbj {

struct ParamRef {
    std::string name;
    Eigen::MatrixXd* value;
    Eigen::MatrixXd* grad;
    bool decay = true;  // weight decay applies (skipped for BN scale/shift)
};

class Sgd {
  public:
    Sgd(std::vector<ParamRef> params, double lr, double momentum, double weight_decay)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        velocity_.reserve(params_.size());
        for (auto& p : params_) velocity_.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            Eigen::MatrixXd g = *p.grad;
            if (p.decay && weight_decay_ > 0.0) g += weight_decay_ * (*p.value);
            velocity_[i] = momentum_ * velocity_[i] + g;
            *p.value -= lr_ * velocity_[i];
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.grad->setZero();
    }

  private:
    std::vector<ParamRef> params_;
    std::vector<Eigen::MatrixXd> velocity_;
    double lr_, momentum_, weight_decay_;
};

namespace io {

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    std::int64_t r = m.rows(), c = m.cols();
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
    std::int64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    if (!in || r < 0 || c < 0) throw DataError("corrupt checkpoint: bad matrix header");
    Eigen::MatrixXd m(r, c);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw DataError("corrupt checkpoint: truncated matrix");
    return m;
}

inline void write_string(std::ostream& out, const std::string& s) {
    std::int64_t n = static_cast<std::int64_t>(s.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(s.data(), n);
}

inline std::string read_string(std::istream& in) {
    std::int64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!in || n < 0 || n > 1 << 20) throw DataError("corrupt checkpoint: bad string header");
    std::string s(static_cast<std::size_t>(n), '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("corrupt checkpoint: truncated string");
    return s;
}

}  // namespace io

// --- layers -------------------------------------------------------------

class Dense {
  public:
    Dense() = default;
    Dense(int in, int out, Rng& rng, const std::string& name) : name_(name) {
        double scale = std::sqrt(2.0 / in);  // He init
        weight_.resize(out, in);
        for (int i = 0; i < out; ++i)
            for (int j = 0; j < in; ++j) weight_(i, j) = scale * rng.normal();
        bias_ = Eigen::MatrixXd::Zero(1, out);
        d_weight_ = Eigen::MatrixXd::Zero(out, in);
        d_bias_ = Eigen::MatrixXd::Zero(1, out);
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) {
        if (training) input_ = x;
        return (x * weight_.transpose()).rowwise() + bias_.row(0);
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        d_weight_ += dy.transpose() * input_;
        d_bias_.row(0) += dy.colwise().sum();
        return dy * weight_;
    }

    void collect(std::vector<ParamRef>& out) {
        out.push_back({name_ + ".weight", &weight_, &d_weight_, true});
        out.push_back({name_ + ".bias", &bias_, &d_bias_, false});
    }

    void save(std::ostream& out) const {
        io::write_matrix(out, weight_);
        io::write_matrix(out, bias_);
    }
    void load(std::istream& in) {
        weight_ = io::read_matrix(in);
        bias_ = io::read_matrix(in);
        d_weight_ = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
        d_bias_ = Eigen::MatrixXd::Zero(1, bias_.cols());
    }

  private:
    std::string name_;
    Eigen::MatrixXd weight_, bias_, d_weight_, d_bias_;
    Eigen::MatrixXd input_;
};

class Relu {
  public:
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) {
        Eigen::MatrixXd y = x.cwiseMax(0.0);
        if (training) mask_ = (x.array() > 0.0).cast<double>();
        return y;
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) { return dy.array() * mask_.array(); }

  private:
    Eigen::ArrayXXd mask_;
};

// 3x3 / 1x1 convolution via im2col, no bias (BN follows).
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int h, int w, int kernel, int stride, int pad, Rng& rng, const std::string& name)
        : name_(name), in_c_(in_c), out_c_(out_c), h_(h), w_(w), k_(kernel), stride_(stride), pad_(pad) {
        oh_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
        ow_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
        double scale = std::sqrt(2.0 / (k_ * k_ * in_c));
        weight_.resize(out_c_, k_ * k_ * in_c_);
        for (int i = 0; i < weight_.rows(); ++i)
            for (int j = 0; j < weight_.cols(); ++j) weight_(i, j) = scale * rng.normal();
        d_weight_ = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
    }

    int out_h() const { return oh_; }
    int out_w() const { return ow_; }
    int out_channels() const { return out_c_; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) {
        const Eigen::Index n = x.rows();
        Eigen::MatrixXd y(n, out_c_ * oh_ * ow_);
        if (training) {
            cols_.resize(static_cast<std::size_t>(n));
        }
        Eigen::MatrixXd col(k_ * k_ * in_c_, oh_ * ow_);
        for (Eigen::Index b = 0; b < n; ++b) {
            im2col(x.row(b), col);
            if (training) cols_[static_cast<std::size_t>(b)] = col;
            // transpose so the column-major flattening is channel-major
            Eigen::MatrixXd out = (weight_ * col).transpose();  // (oh*ow) x out_c
            y.row(b) = Eigen::Map<const Eigen::RowVectorXd>(out.data(), out.size());
        }
        return y;
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        const Eigen::Index n = dy.rows();
        Eigen::MatrixXd dx(n, in_c_ * h_ * w_);
        for (Eigen::Index b = 0; b < n; ++b) {
            Eigen::VectorXd dyrow = dy.row(b);  // contiguous copy
            Eigen::Map<const Eigen::MatrixXd> dout(dyrow.data(), oh_ * ow_, out_c_);
            Eigen::MatrixXd dmat = dout.transpose();  // out_c x (oh*ow)
            d_weight_ += dmat * cols_[static_cast<std::size_t>(b)].transpose();
            Eigen::MatrixXd dcol = weight_.transpose() * dmat;
            dx.row(b) = col2im(dcol);
        }
        return dx;
    }

    void collect(std::vector<ParamRef>& out) { out.push_back({name_ + ".weight", &weight_, &d_weight_, true}); }

    void save(std::ostream& out) const { io::write_matrix(out, weight_); }
    void load(std::istream& in) {
        weight_ = io::read_matrix(in);
        d_weight_ = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
    }

  private:
    void im2col(const Eigen::Ref<const Eigen::RowVectorXd>& row, Eigen::MatrixXd& col) const {
        for (int oy = 0; oy < oh_; ++oy) {
            for (int ox = 0; ox < ow_; ++ox) {
                int out_idx = oy * ow_ + ox;
                int r = 0;
                for (int c = 0; c < in_c_; ++c) {
                    for (int ky = 0; ky < k_; ++ky) {
                        int iy = oy * stride_ + ky - pad_;
                        for (int kx = 0; kx < k_; ++kx, ++r) {
                            int ix = ox * stride_ + kx - pad_;
                            col(r, out_idx) = (iy < 0 || iy >= h_ || ix < 0 || ix >= w_)
                                                  ? 0.0
                                                  : row[(c * h_ + iy) * w_ + ix];
                        }
                    }
                }
            }
        }
    }

    Eigen::RowVectorXd col2im(const Eigen::MatrixXd& dcol) const {
        Eigen::RowVectorXd drow = Eigen::RowVectorXd::Zero(in_c_ * h_ * w_);
        for (int oy = 0; oy < oh_; ++oy) {
            for (int ox = 0; ox < ow_; ++ox) {
                int out_idx = oy * ow_ + ox;
                int r = 0;
                for (int c = 0; c < in_c_; ++c) {
                    for (int ky = 0; ky < k_; ++ky) {
                        int iy = oy * stride_ + ky - pad_;
                        for (int kx = 0; kx < k_; ++kx, ++r) {
                            int ix = ox * stride_ + kx - pad_;
                            if (iy >= 0 && iy < h_ && ix >= 0 && ix < w_)
                                drow[(c * h_ + iy) * w_ + ix] += dcol(r, out_idx);
                        }
                    }
                }
            }
        }
        return drow;
    }

    std::string name_;
    int in_c_ = 0, out_c_ = 0, h_ = 0, w_ = 0, k_ = 0, stride_ = 1, pad_ = 0, oh_ = 0, ow_ = 0;
    Eigen::MatrixXd weight_, d_weight_;
    std::vector<Eigen::MatrixXd> cols_;
};

// Per-channel batch norm over (n, h, w); running stats drive eval mode.
class BatchNorm2d {
  public:
    BatchNorm2d() = default;
    BatchNorm2d(int channels, int h, int w, const std::string& name)
        : name_(name), c_(channels), h_(h), w_(w) {
        gamma_ = Eigen::MatrixXd::Ones(1, c_);
        beta_ = Eigen::MatrixXd::Zero(1, c_);
        d_gamma_ = Eigen::MatrixXd::Zero(1, c_);
        d_beta_ = Eigen::MatrixXd::Zero(1, c_);
        running_mean_ = Eigen::MatrixXd::Zero(1, c_);
        running_var_ = Eigen::MatrixXd::Ones(1, c_);
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool training) {
        const Eigen::Index n = x.rows();
        const int hw = h_ * w_;
        Eigen::MatrixXd y(n, x.cols());
        if (training) {
            const double count = static_cast<double>(n) * hw;
            mean_.resize(c_);
            var_.resize(c_);
            for (int c = 0; c < c_; ++c) {
                double s = 0.0, s2 = 0.0;
                for (Eigen::Index b = 0; b < n; ++b)
                    for (int i = 0; i < hw; ++i) {
                        double v = x(b, c * hw + i);
                        s += v;
                        s2 += v * v;
                    }
                double mu = s / count;
                double var = s2 / count - mu * mu;
                if (var < 0) var = 0;
                mean_[c] = mu;
                var_[c] = var;
                running_mean_(0, c) = (1.0 - bn_momentum_) * running_mean_(0, c) + bn_momentum_ * mu;
                running_var_(0, c) = (1.0 - bn_momentum_) * running_var_(0, c) + bn_momentum_ * var;
            }
            xhat_.resize(n, x.cols());
            for (int c = 0; c < c_; ++c) {
                double inv = 1.0 / std::sqrt(var_[c] + eps_);
                for (Eigen::Index b = 0; b < n; ++b)
                    for (int i = 0; i < hw; ++i) {
                        double xh = (x(b, c * hw + i) - mean_[c]) * inv;
                        xhat_(b, c * hw + i) = xh;
                        y(b, c * hw + i) = gamma_(0, c) * xh + beta_(0, c);
                    }
            }
        } else {
            for (int c = 0; c < c_; ++c) {
                double inv = 1.0 / std::sqrt(running_var_(0, c) + eps_);
                for (Eigen::Index b = 0; b < n; ++b)
                    for (int i = 0; i < hw; ++i)
                        y(b, c * hw + i) = gamma_(0, c) * (x(b, c * hw + i) - running_mean_(0, c)) * inv + beta_(0, c);
            }
        }
        return y;
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        const Eigen::Index n = dy.rows();
        const int hw = h_ * w_;
        const double count = static_cast<double>(n) * hw;
        Eigen::MatrixXd dx(n, dy.cols());
        for (int c = 0; c < c_; ++c) {
            double inv = 1.0 / std::sqrt(var_[c] + eps_);
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (Eigen::Index b = 0; b < n; ++b)
                for (int i = 0; i < hw; ++i) {
                    double d = dy(b, c * hw + i);
                    sum_dy += d;
                    sum_dy_xhat += d * xhat_(b, c * hw + i);
                }
            d_gamma_(0, c) += sum_dy_xhat;
            d_beta_(0, c) += sum_dy;
            double g = gamma_(0, c);
            for (Eigen::Index b = 0; b < n; ++b)
                for (int i = 0; i < hw; ++i) {
                    double d = dy(b, c * hw + i);
                    double xh = xhat_(b, c * hw + i);
                    dx(b, c * hw + i) = g * inv * (d - sum_dy / count - xh * sum_dy_xhat / count);
                }
        }
        return dx;
    }

    void collect(std::vector<ParamRef>& out) {
        out.push_back({name_ + ".gamma", &gamma_, &d_gamma_, false});
        out.push_back({name_ + ".beta", &beta_, &d_beta_, false});
    }

    void save(std::ostream& out) const {
        io::write_matrix(out, gamma_);
        io::write_matrix(out, beta_);
        io::write_matrix(out, running_mean_);
        io::write_matrix(out, running_var_);
    }
    void load(std::istream& in) {
        gamma_ = io::read_matrix(in);
        beta_ = io::read_matrix(in);
        running_mean_ = io::read_matrix(in);
        running_var_ = io::read_matrix(in);
        d_gamma_ = Eigen::MatrixXd::Zero(1, c_);
        d_beta_ = Eigen::MatrixXd::Zero(1, c_);
    }

  private:
    std::string name_;
    int c_ = 0, h_ = 0, w_ = 0;
    double eps_ = 1e-5, bn_momentum_ = 0.1;
    Eigen::MatrixXd gamma_, beta_, d_gamma_, d_beta_;
    Eigen::MatrixXd running_mean_, running_var_;
    Eigen::VectorXd mean_, var_;
    Eigen::MatrixXd xhat_;
};

// (n, c, h, w) -> (n, c) spatial mean
class GlobalAvgPool {
  public:
    GlobalAvgPool() = default;
    GlobalAvgPool(int channels, int h, int w) : c_(channels), h_(h), w_(w) {}

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool) {
        const int hw = h_ * w_;
        Eigen::MatrixXd y(x.rows(), c_);
        for (Eigen::Index b = 0; b < x.rows(); ++b)
            for (int c = 0; c < c_; ++c) y(b, c) = x.row(b).segment(c * hw, hw).mean();
        return y;
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        const int hw = h_ * w_;
        Eigen::MatrixXd dx(dy.rows(), c_ * hw);
        for (Eigen::Index b = 0; b < dy.rows(); ++b)
            for (int c = 0; c < c_; ++c) dx.row(b).segment(c * hw, hw).setConstant(dy(b, c) / hw);
        return dx;
    }

  private:
    int c_ = 0, h_ = 0, w_ = 0;
};

}  // namespace mbj
