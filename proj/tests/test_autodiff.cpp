#include "doctest.h"
#include "oracles.hpp"

#include "mpruner/autodiff.hpp"
#include "mpruner/model.hpp"

#include <functional>
#include <random>

using namespace mpruner;
using Mat = Matrix<double>;

namespace {

/// Central-difference check of a scalar function of one matrix input built on a tape.
double op_gradient_error(Mat x, const std::function<ad::Var(ad::Tape<double>&, ad::Var)>& build) {
    auto run = [&](const Mat& in, Mat* grad) {
        ad::Tape<double> t(grad != nullptr);
        const ad::Var v = t.parameter(in);
        const ad::Var out = build(t, v);
        if (grad) {
            t.backward(out);
            *grad = t.grad(v);
        }
        return t.value(out)(0, 0);
    };
    Mat g;
    run(x, &g);
    double worst = 0;
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double s = x.data()[i];
        x.data()[i] = s + h;
        const double up = run(x, nullptr);
        x.data()[i] = s - h;
        const double down = run(x, nullptr);
        x.data()[i] = s;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(g.data()[i] - num) / std::max(std::abs(g.data()[i]) + std::abs(num), 1e-7));
    }
    return worst;
}

/// Reduces any matrix to a scalar with fixed random weights so every output entry matters.
ad::Var weighted_sum(ad::Tape<double>& t, ad::Var v, unsigned seed) {
    std::mt19937_64 rng(seed);
    const Mat& val = t.value(v);
    const Mat w = oracle::random_matrix<double>(1, val.cols(), rng);
    const Mat ones = Mat::Ones(1, val.rows());
    // s = ones * v * w^T via two linears
    const ad::Var a = ad::linear(t, v, t.constant(w), t.constant(Mat::Zero(1, 1)));  // n x 1
    const ad::Var at = t.push(t.value(a).transpose(), t.requires_grad(a), [a](ad::Tape<double>& tp, const Mat& g) {
        tp.grad_buffer(a) += g.transpose();
    });
    return ad::linear(t, at, t.constant(ones), t.constant(Mat::Zero(1, 1)));
}

Mat rnd(Eigen::Index r, Eigen::Index c, unsigned seed) {
    std::mt19937_64 rng(seed);
    return oracle::random_matrix<double>(r, c, rng);
}

}  // namespace

TEST_CASE("linear gradients") {
    const Mat w = rnd(3, 4, 1), b = rnd(1, 3, 2);
    CHECK(op_gradient_error(rnd(5, 4, 3), [&](auto& t, ad::Var x) {
              return weighted_sum(t, ad::linear(t, x, t.constant(w), t.constant(b)), 9);
          }) < 1e-6);
    const Mat x = rnd(5, 4, 3);
    CHECK(op_gradient_error(w, [&](auto& t, ad::Var wv) {
              return weighted_sum(t, ad::linear(t, t.constant(x), wv, t.constant(b)), 9);
          }) < 1e-6);
    CHECK(op_gradient_error(b, [&](auto& t, ad::Var bv) {
              return weighted_sum(t, ad::linear(t, t.constant(x), t.constant(w), bv), 9);
          }) < 1e-6);
}

TEST_CASE("gelu gradients") {
    CHECK(op_gradient_error(rnd(4, 3, 4), [](auto& t, ad::Var x) { return weighted_sum(t, ad::gelu(t, x), 1); }) <
          1e-6);
}

TEST_CASE("add accumulates into both operands") {
    const Mat y = rnd(4, 3, 5);
    CHECK(op_gradient_error(rnd(4, 3, 4), [&](auto& t, ad::Var x) {
              return weighted_sum(t, ad::add(t, x, ad::add(t, x, t.constant(y))), 2);
          }) < 1e-6);
}

TEST_CASE("layer norm gradients for input, gain and bias") {
    const Mat x = rnd(4, 5, 6), g = rnd(1, 5, 7), b = rnd(1, 5, 8);
    CHECK(op_gradient_error(x, [&](auto& t, ad::Var v) {
              return weighted_sum(t, ad::layer_norm(t, v, t.constant(g), t.constant(b)), 3);
          }) < 1e-5);
    CHECK(op_gradient_error(g, [&](auto& t, ad::Var v) {
              return weighted_sum(t, ad::layer_norm(t, t.constant(x), v, t.constant(b)), 3);
          }) < 1e-6);
    CHECK(op_gradient_error(b, [&](auto& t, ad::Var v) {
              return weighted_sum(t, ad::layer_norm(t, t.constant(x), t.constant(g), v), 3);
          }) < 1e-6);
}

TEST_CASE("attention gradients for queries, keys and values") {
    const Mat q = rnd(6, 4, 1), k = rnd(6, 4, 2), v = rnd(6, 4, 3);
    for (int which = 0; which < 3; ++which) {
        const Mat& probe = which == 0 ? q : which == 1 ? k : v;
        CHECK(op_gradient_error(probe, [&](auto& t, ad::Var p) {
                  const ad::Var qv = which == 0 ? p : t.constant(q);
                  const ad::Var kv = which == 1 ? p : t.constant(k);
                  const ad::Var vv = which == 2 ? p : t.constant(v);
                  return weighted_sum(t, ad::attention(t, qv, kv, vv, 3), 4);
              }) < 1e-5);
    }
}

TEST_CASE("mean over tokens gradients") {
    CHECK(op_gradient_error(rnd(6, 3, 9), [](auto& t, ad::Var x) {
              return weighted_sum(t, ad::mean_tokens(t, x, 3), 5);
          }) < 1e-6);
}

TEST_CASE("softmax cross-entropy value and gradients") {
    const std::vector<int> labels{0, 2, 1, 2};
    const Mat logits = rnd(4, 3, 10);
    CHECK(op_gradient_error(logits, [&](auto& t, ad::Var x) {
              return ad::softmax_cross_entropy(t, x, std::span<const int>(labels));
          }) < 1e-6);
    ad::Tape<double> t(false);
    const double v = t.value(ad::softmax_cross_entropy(t, t.constant(logits), std::span<const int>(labels)))(0, 0);
    double expect = 0;
    for (int i = 0; i < 4; ++i) {
        double z = 0;
        for (int c = 0; c < 3; ++c) z += std::exp(logits(i, c));
        expect += std::log(z) - logits(i, labels[static_cast<std::size_t>(i)]);
    }
    CHECK(v == doctest::Approx(expect / 4).epsilon(1e-12));
}

TEST_CASE("cross-entropy is stable for huge logits") {
    Mat logits(1, 2);
    logits << 1000.0, 0.0;
    const std::vector<int> labels{1};
    ad::Tape<double> t(false);
    CHECK(t.value(ad::softmax_cross_entropy(t, t.constant(logits), std::span<const int>(labels)))(0, 0) ==
          doctest::Approx(1000.0));
}

TEST_CASE("backward requires a scalar") {
    ad::Tape<double> t;
    const ad::Var x = t.parameter(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("model gradients match finite differences: residual stack") {
    const auto m = build_model<double>(3, 3, BlockSpec{BlockKind::ResidualMlp, 4, 6, 0}, 3, 17);
    const std::vector<int> labels{0, 1, 2, 1, 0};
    CHECK(oracle::max_gradient_error(m, rnd(5, 3, 11), labels) <= 1e-4);
}

TEST_CASE("model gradients match finite differences: encoder with two tokens") {
    const std::vector<BlockSpec> specs{{BlockKind::Encoder, 4, 6, 0},
                                       {BlockKind::ResidualMlp, 4, 5, 3},
                                       {BlockKind::Encoder, 3, 4, 0}};
    const auto m = build_model<double>(2, std::span<const BlockSpec>(specs), 3, 5, 2);
    const std::vector<int> labels{2, 0, 1};
    CHECK(oracle::max_gradient_error(m, rnd(3, 4, 12), labels) <= 1e-4);
}

TEST_CASE("frozen parameters receive no gradient") {
    auto m = build_model<double>(3, 2, BlockSpec{BlockKind::ResidualMlp, 4, 6, 0}, 2, 1);
    m.blocks[0].trainable = false;
    m.embed_trainable = false;
    const std::vector<int> labels{0, 1};
    const auto lg = loss_and_gradients(m, rnd(2, 3, 1), std::span<const int>(labels));
    std::size_t i = 0;
    m.for_each_parameter([&](const Mat&, const ParamOwner& owner, const char*) {
        CHECK((lg.gradients[i].size() == 0) == !m.is_trainable(owner));
        ++i;
    });
}
