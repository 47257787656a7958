#pragma once

// Differentiable objectives: batch/memory cross-entropy with fusion
//   L_total = eta * L_memory + L_batch,
// the CosFace margin loss over cosine logits and the circle-style
// multi-positive memory loss
//   log(1 + sum_j sum_i exp(alpha * (v_j'x - u_i'x + delta))).
// Backward passes are explicit; memorized vectors/prototypes are constants,
// their gradient slots are exact zeros.

#include "mbj/common.hpp"
#include "mbj/memory_bank.hpp"

#include <cmath>
#include <vector>

namespace mbj {

struct LossConfig {
    double eta = 15.0;   // fusion weight
    double alpha = 30.0; // cosine scale
    double delta = 0.35; // cosine margin

    void validate() const {
        if (!std::isfinite(eta) || !std::isfinite(alpha) || !std::isfinite(delta))
            throw ConfigError("loss config values must be finite");
        if (alpha <= 0.0) throw ConfigError("loss scale alpha must be > 0");
        if (eta < 0.0) throw ConfigError("loss fusion weight eta must be >= 0");
        if (delta < 0.0) throw ConfigError("loss margin delta must be >= 0");
    }
};

// C weight vectors, one prototype per class. In cosine mode rows are
// unit-normalized at evaluation time (metric learning); classification mode
// uses raw inner products. No bias term.
class ClassifierHead {
  public:
    ClassifierHead() = default;
    ClassifierHead(int class_count, int dim, bool normalize)
        : weights_(Eigen::MatrixXd::Zero(class_count, dim)), normalize_(normalize) {}

    static ClassifierHead random_init(int class_count, int dim, bool normalize, Rng& rng, double scale = 0.05) {
        ClassifierHead h(class_count, dim, normalize);
        for (int c = 0; c < class_count; ++c)
            for (int j = 0; j < dim; ++j) h.weights_(c, j) = scale * rng.normal();
        return h;
    }

    int class_count() const { return static_cast<int>(weights_.rows()); }
    int dim() const { return static_cast<int>(weights_.cols()); }
    bool normalized() const { return normalize_; }

    Eigen::MatrixXd& weights() { return weights_; }
    const Eigen::MatrixXd& weights() const { return weights_; }

    // raw inner-product logits, one row per embedding
    Eigen::MatrixXd logits(const Eigen::MatrixXd& embeddings) const { return embeddings * weights_.transpose(); }

  private:
    Eigen::MatrixXd weights_;
    bool normalize_ = false;
};

// --- building block: stable softmax cross-entropy over given logits --------

struct LogitLoss {
    double value = 0.0;
    Eigen::MatrixXd d_logits;  // gradient of the mean loss
};

inline LogitLoss cross_entropy_from_logits(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
    const Eigen::Index n = logits.rows(), c = logits.cols();
    if (n == 0) throw DataError("cross entropy needs at least one sample");
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DataError("logits/labels size mismatch");
    LogitLoss out;
    out.d_logits.resize(n, c);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw DataError("label out of range: " + std::to_string(y));
        double m = logits.row(i).maxCoeff();
        Eigen::ArrayXd ex = (logits.row(i).array() - m).exp();
        double z = ex.sum();
        total += -(logits(i, y) - m - std::log(z));
        out.d_logits.row(i) = (ex / z).matrix();
        out.d_logits(i, y) -= 1.0;
    }
    out.value = total / static_cast<double>(n);
    out.d_logits /= static_cast<double>(n);
    return out;
}

// --- batch cross-entropy (classification mode) ------------------------------

struct BatchLoss {
    double value = 0.0;
    Eigen::MatrixXd d_embeddings;
    Eigen::MatrixXd d_weights;
};

inline BatchLoss cross_entropy(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                               const ClassifierHead& head) {
    auto ll = cross_entropy_from_logits(head.logits(embeddings), labels);
    BatchLoss out;
    out.value = ll.value;
    out.d_embeddings = ll.d_logits * head.weights();
    out.d_weights = ll.d_logits.transpose() * embeddings;
    return out;
}

// --- memory cross-entropy ----------------------------------------------------

// Mean cross-entropy of memorized features against the current head.
// Gradients flow into the head only; d_memory_vectors is the blocked slot
// and is exactly zero. An empty bank contributes nothing.
struct MemoryClsLoss {
    double value = 0.0;
    Eigen::MatrixXd d_weights;
    Eigen::MatrixXd d_memory_vectors;  // exact zeros, gradient-blocking contract
};

inline MemoryClsLoss memory_loss_cls(const std::vector<MemoryEntry>& entries, const ClassifierHead& head) {
    MemoryClsLoss out;
    out.d_weights = Eigen::MatrixXd::Zero(head.class_count(), head.dim());
    out.d_memory_vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(entries.size()), head.dim());
    if (entries.empty()) return out;

    Eigen::MatrixXd mem(static_cast<Eigen::Index>(entries.size()), head.dim());
    std::vector<int> labels(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].vector.size() != head.dim()) throw DataError("memorized vector dimension mismatch");
        mem.row(static_cast<Eigen::Index>(i)) = entries[i].vector.transpose();
        labels[i] = entries[i].label;
    }
    auto ll = cross_entropy_from_logits(head.logits(mem), labels);
    out.value = ll.value;
    out.d_weights = ll.d_logits.transpose() * mem;
    return out;
}

inline double fuse_losses(double l_memory, double l_batch, double eta) {
    if (!std::isfinite(l_memory) || !std::isfinite(l_batch)) throw NumericError("non-finite loss before fusion");
    return eta * l_memory + l_batch;
}

// --- CosFace -----------------------------------------------------------------

namespace detail {

// dL/dx for u = x/|x| given dL/du
inline Eigen::VectorXd through_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& d_unit) {
    double n = x.norm();
    if (n <= 0.0) throw NumericError("zero-norm vector in normalization backward");
    Eigen::VectorXd u = x / n;
    return (d_unit - u * (u.dot(d_unit))) / n;
}

}  // namespace detail

struct SampleLoss {
    double value = 0.0;
    Eigen::VectorXd d_embedding;  // w.r.t. the raw (unnormalized) embedding
    Eigen::MatrixXd d_weights;    // w.r.t. the raw head weights
};

// -log exp(a(cos_y - delta)) / (exp(a(cos_y - delta)) + sum_{k!=y} exp(a cos_k))
inline SampleLoss cosface_loss(const Eigen::VectorXd& x, int y, const ClassifierHead& head, double alpha,
                               double delta) {
    if (alpha <= 0.0) throw ConfigError("cosface scale alpha must be > 0");
    const int c = head.class_count();
    if (y < 0 || y >= c) throw DataError("label out of range in cosface loss");
    if (x.size() != head.dim()) throw DataError("embedding dimension mismatch in cosface loss");

    double xn = x.norm();
    if (xn <= 0.0) throw NumericError("zero-norm embedding in cosface loss");
    Eigen::VectorXd xu = x / xn;

    Eigen::VectorXd wnorm(c);
    Eigen::MatrixXd wu(c, head.dim());
    for (int k = 0; k < c; ++k) {
        double n = head.weights().row(k).norm();
        if (n <= 0.0) throw NumericError("zero-norm prototype in cosface loss");
        wnorm[k] = n;
        wu.row(k) = head.weights().row(k) / n;
    }

    Eigen::VectorXd z = alpha * (wu * xu);
    z[y] -= alpha * delta;

    double m = z.maxCoeff();
    Eigen::ArrayXd ex = (z.array() - m).exp();
    double zsum = ex.sum();

    SampleLoss out;
    out.value = -(z[y] - m - std::log(zsum));

    Eigen::VectorXd g = (ex / zsum).matrix();  // softmax
    g[y] -= 1.0;
    g *= alpha;  // dL/dcos_k

    out.d_embedding = detail::through_norm(x, wu.transpose() * g);
    out.d_weights.resize(c, head.dim());
    for (int k = 0; k < c; ++k) {
        Eigen::VectorXd d_unit = g[k] * xu;
        Eigen::VectorXd uk = wu.row(k).transpose();
        out.d_weights.row(k) = ((d_unit - uk * uk.dot(d_unit)) / wnorm[k]).transpose();
    }
    return out;
}

// --- circle-style memory loss --------------------------------------------

// log(1 + sum_{j<=L} sum_{i<=K} exp(alpha (v_j'x - u_i'x + delta))) with
// memorized prototypes held constant; K=0 or L=0 gives exactly 0.
struct CircleMemoryLoss {
    double value = 0.0;
    Eigen::VectorXd d_embedding;   // w.r.t. the raw embedding
    Eigen::MatrixXd d_positives;   // exact zeros, gradient-blocking contract
    Eigen::MatrixXd d_negatives;   // exact zeros
};

inline CircleMemoryLoss circle_memory_loss(const Eigen::VectorXd& x, const Eigen::MatrixXd& positives,
                                           const Eigen::MatrixXd& negatives, double alpha, double delta) {
    if (alpha <= 0.0) throw ConfigError("circle loss scale alpha must be > 0");
    CircleMemoryLoss out;
    out.d_embedding = Eigen::VectorXd::Zero(x.size());
    out.d_positives = Eigen::MatrixXd::Zero(positives.rows(), positives.cols());
    out.d_negatives = Eigen::MatrixXd::Zero(negatives.rows(), negatives.cols());
    const Eigen::Index K = positives.rows(), L = negatives.rows();
    if (K == 0 || L == 0) return out;
    if (positives.cols() != x.size() || negatives.cols() != x.size())
        throw DataError("prototype dimension mismatch in circle loss");
    for (Eigen::Index i = 0; i < K; ++i)
        if (std::abs(positives.row(i).norm() - 1.0) > 1e-6)
            throw NumericError("memorized positive prototype is not unit-norm");
    for (Eigen::Index j = 0; j < L; ++j)
        if (std::abs(negatives.row(j).norm() - 1.0) > 1e-6)
            throw NumericError("memorized negative prototype is not unit-norm");

    double xn = x.norm();
    if (xn <= 0.0) throw NumericError("zero-norm embedding in circle loss");
    Eigen::VectorXd xu = x / xn;

    Eigen::VectorXd pos_sim = positives * xu;  // u_i'x
    Eigen::VectorXd neg_sim = negatives * xu;  // v_j'x

    // z_ji = alpha (neg_j - pos_i + delta); L = log(1 + sum e^z), stable form
    double zmax = 0.0;  // the implicit +1 term corresponds to exponent 0
    for (Eigen::Index j = 0; j < L; ++j)
        for (Eigen::Index i = 0; i < K; ++i)
            zmax = std::max(zmax, alpha * (neg_sim[j] - pos_sim[i] + delta));

    double denom = std::exp(-zmax);  // e^{0 - zmax}
    Eigen::MatrixXd w(L, K);
    for (Eigen::Index j = 0; j < L; ++j)
        for (Eigen::Index i = 0; i < K; ++i) {
            w(j, i) = std::exp(alpha * (neg_sim[j] - pos_sim[i] + delta) - zmax);
            denom += w(j, i);
        }
    out.value = zmax + std::log(denom);

    Eigen::VectorXd d_xu = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index j = 0; j < L; ++j)
        for (Eigen::Index i = 0; i < K; ++i) {
            double coeff = (w(j, i) / denom) * alpha;
            d_xu += coeff * (negatives.row(j).transpose() - positives.row(i).transpose());
        }
    out.d_embedding = detail::through_norm(x, d_xu);
    return out;
}

}  // namespace mbj
