#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices. Every operation records its output value and, when recording is
// enabled and any input requires a gradient, a closure that propagates the
// output gradient back into its inputs.

#include "mpruner/common.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace mpruner::ad {

struct Var {
    std::size_t id = 0;
};

template <typename Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    using Backward = std::function<void(Tape&, const Mat&)>;

    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const noexcept { return record_; }

    Var constant(Mat value) { return push(std::move(value), false, {}); }

    Var parameter(Mat value) { return push(std::move(value), record_, {}); }

    const Mat& value(Var v) const { return nodes_[v.id].value; }

    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient accumulated into `v` by the last backward(); zero-sized if none flowed.
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    /// Gradient buffer for an input, zero-initialized on first touch.
    Mat& grad_buffer(Var v) {
        auto& node = nodes_[v.id];
        if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
        return node.grad;
    }

    Var push(Mat value, bool requires_grad, Backward backward) {
        Node node;
        node.value = std::move(value);
        node.requires_grad = requires_grad && record_;
        if (node.requires_grad) node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return Var{nodes_.size() - 1};
    }

    /// Seeds d(out)/d(out) = 1 for a 1x1 output and sweeps the tape backwards.
    void backward(Var out) {
        if (value(out).size() != 1) throw ShapeError("backward() needs a scalar output");
        if (!nodes_[out.id].requires_grad) return;
        grad_buffer(out).setOnes();
        for (std::size_t i = out.id + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (!node.backward || node.grad.size() == 0) continue;
            // Copy out the gradient: the closure may grow other nodes' buffers.
            const Mat upstream = node.grad;
            node.backward(*this, upstream);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        Backward backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

/// y = x * W^T + b, with W stored (out x in) and b as a 1 x out row.
template <typename Scalar>
Var linear(Tape<Scalar>& t, Var x, Var w, Var b) {
    using Mat = Matrix<Scalar>;
    const Mat& xv = t.value(x);
    const Mat& wv = t.value(w);
    if (xv.cols() != wv.cols()) throw ShapeError("linear: input width does not match weight");
    Mat y(xv.rows(), wv.rows());
    y.noalias() = xv * wv.transpose();
    y.rowwise() += t.value(b).row(0);
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return t.push(std::move(y), rg, [x, w, b](Tape<Scalar>& tp, const Mat& dy) {
        if (tp.requires_grad(x)) tp.grad_buffer(x).noalias() += dy * tp.value(w);
        if (tp.requires_grad(w)) tp.grad_buffer(w).noalias() += dy.transpose() * tp.value(x);
        if (tp.requires_grad(b)) tp.grad_buffer(b) += dy.colwise().sum();
    });
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
    using Mat = Matrix<Scalar>;
    if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
        throw ShapeError("add: operand shapes differ");
    Mat y = t.value(a) + t.value(b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(std::move(y), rg, [a, b](Tape<Scalar>& tp, const Mat& dy) {
        if (tp.requires_grad(a)) tp.grad_buffer(a) += dy;
        if (tp.requires_grad(b)) tp.grad_buffer(b) += dy;
    });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Var gelu(Tape<Scalar>& t, Var a) {
    using Mat = Matrix<Scalar>;
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    Mat y = t.value(a).unaryExpr([inv_sqrt2](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
    });
    return t.push(std::move(y), t.requires_grad(a), [a, inv_sqrt2](Tape<Scalar>& tp, const Mat& dy) {
        const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
        const Mat local = tp.value(a).unaryExpr([&](Scalar v) {
            const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
            const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
            return cdf + v * pdf;
        });
        tp.grad_buffer(a) += dy.cwiseProduct(local);
    });
}

/// Per-row layer normalization with learned gain and bias (both 1 x d).
template <typename Scalar>
Var layer_norm(Tape<Scalar>& t, Var x, Var gain, Var bias, Scalar eps = Scalar(1e-5)) {
    using Mat = Matrix<Scalar>;
    const Mat& xv = t.value(x);
    const auto d = xv.cols();
    Mat normalized(xv.rows(), d);
    std::vector<Scalar> inv_std(static_cast<std::size_t>(xv.rows()));
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const Scalar mean = xv.row(r).mean();
        const Scalar var = (xv.row(r).array() - mean).square().mean();
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        normalized.row(r) = (xv.row(r).array() - mean) * is;
    }
    Mat y = normalized.array().rowwise() * t.value(gain).row(0).array();
    y.rowwise() += t.value(bias).row(0);
    const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
    return t.push(std::move(y), rg,
                  [x, gain, bias, normalized = std::move(normalized),
                   inv_std = std::move(inv_std)](Tape<Scalar>& tp, const Mat& dy) {
                      if (tp.requires_grad(gain))
                          tp.grad_buffer(gain) += dy.cwiseProduct(normalized).colwise().sum();
                      if (tp.requires_grad(bias)) tp.grad_buffer(bias) += dy.colwise().sum();
                      if (!tp.requires_grad(x)) return;
                      const Mat dxhat = dy.array().rowwise() * tp.value(gain).row(0).array();
                      Mat& dx = tp.grad_buffer(x);
                      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                          const Scalar m1 = dxhat.row(r).mean();
                          const Scalar m2 = dxhat.row(r).cwiseProduct(normalized.row(r)).mean();
                          dx.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                                               (dxhat.row(r).array() - m1 - normalized.row(r).array() * m2);
                      }
                  });
}

/// Single-head scaled dot-product attention. Rows of q, k, v are tokens;
/// consecutive groups of `seq_len` rows form one sample and attend only
/// within that sample.
template <typename Scalar>
Var attention(Tape<Scalar>& t, Var q, Var k, Var v, std::size_t seq_len) {
    using Mat = Matrix<Scalar>;
    const Mat& qv = t.value(q);
    const auto tokens = qv.rows();
    const auto d = qv.cols();
    const auto T = static_cast<Eigen::Index>(seq_len);
    if (T == 0 || tokens % T != 0) throw ShapeError("attention: row count is not a multiple of seq_len");
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
    const auto samples = tokens / T;
    Mat probs(tokens, T);
    Mat y(tokens, d);
    for (Eigen::Index s = 0; s < samples; ++s) {
        const auto rows = Eigen::seqN(s * T, T);
        Mat scores = (qv(rows, Eigen::all) * t.value(k)(rows, Eigen::all).transpose()) * scale;
        for (Eigen::Index r = 0; r < T; ++r) {
            const Scalar mx = scores.row(r).maxCoeff();
            scores.row(r) = (scores.row(r).array() - mx).exp();
            scores.row(r) /= scores.row(r).sum();
        }
        probs(rows, Eigen::all) = scores;
        y(rows, Eigen::all).noalias() = scores * t.value(v)(rows, Eigen::all);
    }
    const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
    return t.push(std::move(y), rg,
                  [q, k, v, T, samples, scale, probs = std::move(probs)](Tape<Scalar>& tp, const Mat& dy) {
                      for (Eigen::Index s = 0; s < samples; ++s) {
                          const auto rows = Eigen::seqN(s * T, T);
                          const Mat p = probs(rows, Eigen::all);
                          const Mat dyr = dy(rows, Eigen::all);
                          if (tp.requires_grad(v))
                              tp.grad_buffer(v)(rows, Eigen::all).noalias() += p.transpose() * dyr;
                          if (!tp.requires_grad(q) && !tp.requires_grad(k)) continue;
                          const Mat dp = dyr * tp.value(v)(rows, Eigen::all).transpose();
                          Mat ds = p.cwiseProduct(dp);
                          for (Eigen::Index r = 0; r < T; ++r) ds.row(r) -= p.row(r) * ds.row(r).sum();
                          ds *= scale;
                          if (tp.requires_grad(q))
                              tp.grad_buffer(q)(rows, Eigen::all).noalias() += ds * tp.value(k)(rows, Eigen::all);
                          if (tp.requires_grad(k))
                              tp.grad_buffer(k)(rows, Eigen::all).noalias() +=
                                  ds.transpose() * tp.value(q)(rows, Eigen::all);
                      }
                  });
}

/// Averages each group of `seq_len` consecutive rows: (n*T x d) -> (n x d).
template <typename Scalar>
Var mean_tokens(Tape<Scalar>& t, Var x, std::size_t seq_len) {
    using Mat = Matrix<Scalar>;
    const auto T = static_cast<Eigen::Index>(seq_len);
    const Mat& xv = t.value(x);
    if (T == 0 || xv.rows() % T != 0) throw ShapeError("mean_tokens: row count is not a multiple of seq_len");
    if (T == 1) {
        Mat y = xv;
        return t.push(std::move(y), t.requires_grad(x),
                      [x](Tape<Scalar>& tp, const Mat& dy) { tp.grad_buffer(x) += dy; });
    }
    const auto samples = xv.rows() / T;
    Mat y(samples, xv.cols());
    for (Eigen::Index s = 0; s < samples; ++s) y.row(s) = xv(Eigen::seqN(s * T, T), Eigen::all).colwise().mean();
    return t.push(std::move(y), t.requires_grad(x), [x, T, samples](Tape<Scalar>& tp, const Mat& dy) {
        Mat& dx = tp.grad_buffer(x);
        const Scalar inv = Scalar(1) / static_cast<Scalar>(T);
        for (Eigen::Index s = 0; s < samples; ++s)
            for (Eigen::Index r = 0; r < T; ++r) dx.row(s * T + r) += dy.row(s) * inv;
    });
}

/// Mean softmax cross-entropy over the batch; returns a 1x1 node.
template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& t, Var logits, std::span<const int> labels) {
    using Mat = Matrix<Scalar>;
    const Mat& z = t.value(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size())
        throw ShapeError("softmax_cross_entropy: label count does not match batch");
    Mat probs(z.rows(), z.cols());
    Scalar total = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const int label = labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= z.cols()) throw IndexError("softmax_cross_entropy: label out of range");
        const Scalar mx = z.row(r).maxCoeff();
        probs.row(r) = (z.row(r).array() - mx).exp();
        const Scalar sum = probs.row(r).sum();
        probs.row(r) /= sum;
        total += -(z(r, label) - mx - std::log(sum));
    }
    Mat y(1, 1);
    y(0, 0) = total / static_cast<Scalar>(z.rows());
    std::vector<int> owned(labels.begin(), labels.end());
    return t.push(std::move(y), t.requires_grad(logits),
                  [logits, probs = std::move(probs), owned = std::move(owned)](Tape<Scalar>& tp, const Mat& dy) {
                      Mat d = probs;
                      for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, owned[static_cast<std::size_t>(r)]) -= Scalar(1);
                      tp.grad_buffer(logits) += d * (dy(0, 0) / static_cast<Scalar>(d.rows()));
                  });
}

}  // namespace mpruner::ad
