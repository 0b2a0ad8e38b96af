#include "doctest.h"
#include "oracles.hpp"

#include "mpruner/cka.hpp"
#include "mpruner/model.hpp"

#include <cstdlib>
#include <random>

using namespace mpruner;
using Mat = Matrix<double>;

namespace {

Mat rnd(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) { return oracle::random_matrix<double>(r, c, rng); }

double max_abs_diff(const Mat& a, const oracle::Grid& b) {
    double worst = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    return worst;
}

std::vector<Tensor> seed_batches(std::size_t count, Eigen::Index rows, Eigen::Index cols, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(oracle::random_matrix(rows, cols, rng));
    return out;
}

Model<float> identity_model(std::size_t blocks) {
    auto m = build_model<float>(4, blocks, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0}, 3, 3);
    for (auto& b : m.blocks) b.zero_residual_branches();
    return m;
}

}  // namespace

TEST_CASE("gram examples") {
    CHECK(gram(Mat::Identity(2, 2)).isApprox(Mat::Identity(2, 2)));
    CHECK(gram(Mat::Zero(3, 2)).isZero(0.0));
    Mat x(3, 2);
    x << 1, 0, 0, 1, 1, 1;
    Mat expect(3, 3);
    expect << 1, 0, 1, 0, 1, 1, 1, 1, 2;
    CHECK(gram(x) == expect);
    CHECK_THROWS_AS(gram(Mat::Ones(1, 3)), InvalidArgument);
}

TEST_CASE("gram of float activations is accumulated in double") {
    Tensor x(2, 1);
    x << 16777217.0f / 2, 1.0f;  // not exactly representable products in float
    const Mat k = gram(x);
    CHECK(k(0, 0) == static_cast<double>(x(0, 0)) * static_cast<double>(x(0, 0)));
}

TEST_CASE("center examples") {
    CHECK(center(Mat::Constant(5, 5, 3.5)).cwiseAbs().maxCoeff() < 1e-12);
    Mat h2(2, 2);
    h2 << 0.5, -0.5, -0.5, 0.5;
    CHECK(centering_matrix(2).isApprox(h2));
    CHECK_THROWS_AS(center(Mat::Ones(2, 3)), ShapeError);
}

TEST_CASE("center agrees with the explicit H K H product") {
    std::mt19937_64 rng(5);
    const Mat a = rnd(4, 4, rng);
    const Mat k = a + a.transpose();
    const Mat kc = center(k);
    CHECK(kc.rowwise().sum().cwiseAbs().maxCoeff() < 1e-6);
    const auto h = oracle::centering(4);
    CHECK(max_abs_diff(kc, oracle::matmul(oracle::matmul(h, oracle::to_grid(k)), h)) < 1e-12);
}

TEST_CASE("hsic examples") {
    std::mt19937_64 rng(6);
    const Mat x = rnd(6, 3, rng);
    CHECK(hsic(gram(x), Mat::Zero(6, 6)) == 0.0);
    const Mat v = rnd(6, 1, rng);
    CHECK(hsic(gram(v), gram(v)) > 0.0);
}

TEST_CASE("hsic matches the double-sum and printed-form oracles") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng() % 15);
        const Mat k = gram(rnd(n, 1 + static_cast<Eigen::Index>(rng() % 6), rng));
        const Mat l = gram(rnd(n, 1 + static_cast<Eigen::Index>(rng() % 6), rng));
        const auto kg = oracle::to_grid(k), lg = oracle::to_grid(l);
        const double ours = hsic(k, l);
        CHECK(ours == doctest::Approx(oracle::hsic_double_sum(kg, lg)).epsilon(1e-8).scale(1.0));
        CHECK(ours == doctest::Approx(oracle::hsic_printed_form(kg, lg)).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("cka self-similarity and invariances") {
    std::mt19937_64 rng(8);
    const Mat x = rnd(16, 8, rng);
    CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-6));
    const Mat q = oracle::random_orthogonal(8, rng);
    CHECK(cka(x, Mat(x * q)) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(cka(x, Mat(3.7 * x)) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(cka(x, Mat(0.01 * x * q)) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cka on independent normals matches the from-scratch reference") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat x = rnd(16, 8, rng), y = rnd(16, 8, rng);
        const double ours = cka(x, y);
        CHECK(ours == doctest::Approx(oracle::cka(oracle::to_grid(x), oracle::to_grid(y))).epsilon(1e-8).scale(1.0));
        CHECK(ours >= 0.0);
        CHECK(ours <= 1.0);
    }
}

TEST_CASE("cka accepts different feature widths") {
    std::mt19937_64 rng(10);
    const Mat x = rnd(10, 3, rng), y = rnd(10, 7, rng);
    CHECK(cka(x, y) == doctest::Approx(oracle::cka(oracle::to_grid(x), oracle::to_grid(y))).epsilon(1e-8));
    CHECK_THROWS_AS(cka(x, rnd(9, 3, rng)), ShapeError);
}

TEST_CASE("constant activations raise a degenerate error naming the operand") {
    std::mt19937_64 rng(11);
    const Mat x = rnd(6, 3, rng);
    const Mat c = Mat::Constant(6, 3, 2.0);
    try {
        (void)cka(x, c);
        FAIL("expected DegenerateActivation");
    } catch (const DegenerateActivation& e) {
        CHECK(e.hook() == 1);
    }
    try {
        (void)cka(c, x);
        FAIL("expected DegenerateActivation");
    } catch (const DegenerateActivation& e) {
        CHECK(e.hook() == 0);
    }
}

TEST_CASE("chain over identity blocks is all ones") {
    const auto m = identity_model(5);
    const auto seeds = seed_batches(3, 12, 4, 1);
    const IndexList hooks{0, 1, 2, 3, 4};
    const auto chain = cka_chain(m, hooks, seeds);
    CHECK(chain.seed_count == 3);
    REQUIRE(chain.values.size() == 4);
    for (double v : chain.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    const auto mat = cka_full_matrix(m, hooks, seeds);
    CHECK((mat.values.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("chain equals the plain average of per-batch cka values") {
    const auto m = build_model<float>(4, 4, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0}, 3, 21);
    const IndexList hooks{0, 2, 3};
    for (std::size_t count : {1u, 2u, 3u, 5u}) {
        const auto seeds = seed_batches(count, 10, 4, 100 + static_cast<unsigned>(count));
        const auto chain = cka_chain(m, hooks, seeds);
        for (std::size_t j = 1; j < hooks.size(); ++j) {
            double sum = 0;
            for (const auto& s : seeds) {
                const auto acts = capture_activations(m, s, hooks);
                sum += cka(acts.outputs[j - 1], acts.outputs[j]);
            }
            CHECK(std::abs(chain.values[j - 1] - sum / static_cast<double>(count)) < 1e-9);
        }
    }
}

TEST_CASE("thread count does not change the chain") {
    const auto m = build_model<float>(4, 4, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0}, 3, 22);
    const auto seeds = seed_batches(7, 10, 4, 3);
    const IndexList hooks{0, 1, 2, 3};
    ::setenv("MPRUNER_THREADS", "1", 1);
    const auto serial = cka_chain(m, hooks, seeds);
    ::setenv("MPRUNER_THREADS", "3", 1);
    CHECK(analysis_threads() == 3);
    const auto threaded = cka_chain(m, hooks, seeds);
    ::unsetenv("MPRUNER_THREADS");
    CHECK(serial.values == threaded.values);
}

TEST_CASE("full matrix is symmetric and its superdiagonal is the chain") {
    const auto m = build_model<float>(4, 4, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0}, 3, 23);
    const auto seeds = seed_batches(2, 12, 4, 4);
    const IndexList hooks{0, 1, 2, 3};
    const auto mat = cka_full_matrix(m, hooks, seeds);
    const auto chain = cka_chain(m, hooks, seeds);
    CHECK((mat.values - mat.values.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(mat.values.minCoeff() >= 0.0);
    CHECK(mat.values.maxCoeff() <= 1.0);
    for (Eigen::Index j = 1; j < 4; ++j)
        CHECK(std::abs(mat.values(j - 1, j) - chain.values[static_cast<std::size_t>(j - 1)]) < 1e-9);
}

TEST_CASE("chain input validation") {
    const auto m = identity_model(3);
    const auto seeds = seed_batches(1, 6, 4, 1);
    CHECK_THROWS_AS(cka_chain(m, IndexList{0, 3}, seeds), IndexError);
    CHECK_THROWS_AS(cka_chain(m, IndexList{0, 1}, std::span<const Tensor>{}), InvalidArgument);
    const auto tiny = seed_batches(1, 1, 4, 1);
    CHECK_THROWS_AS(cka_chain(m, IndexList{0, 1}, tiny), InvalidArgument);
}

TEST_CASE("degenerate activations surface the hook id") {
    // A projecting block with zero skip weights and a constant bias emits a constant.
    std::vector<BlockSpec> specs(4, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0});
    specs[2].out_width = 6;
    specs[3].width = 6;
    auto d = build_model<float>(4, std::span<const BlockSpec>(specs), 3, 9);
    d.blocks[2].skip.weight.setZero();
    d.blocks[2].zero_residual_branches();
    d.blocks[2].skip.bias.setConstant(1.0f);
    const auto seeds = seed_batches(2, 8, 4, 2);
    try {
        (void)cka_chain(d, IndexList{0, 1, 2}, seeds);
        FAIL("expected DegenerateActivation");
    } catch (const DegenerateActivation& e) {
        CHECK(e.hook() == 2);
    }
}

TEST_CASE("chain CSV round trip is exact") {
    CkaChain chain{{0, 3, 5, 9}, {0.1234567890123456789, 1.0, 0.98000000000000001}, 4};
    const auto back = chain_from_csv(chain_to_csv(chain));
    CHECK(back.hooks == chain.hooks);
    CHECK(back.values == chain.values);
    CHECK_THROWS_AS(chain_from_csv("a,b\n"), FormatError);
    CHECK_THROWS_AS(chain_from_csv("hook_a,hook_b,cka\n0,1,0.5\n2,3,0.5\n"), FormatError);
}

TEST_CASE("matrix JSON round trip") {
    const auto m = build_model<float>(4, 3, BlockSpec{BlockKind::ResidualMlp, 8, 16, 0}, 3, 24);
    const auto mat = cka_full_matrix(m, IndexList{0, 1, 2}, seed_batches(2, 8, 4, 6));
    const auto back = matrix_from_json(matrix_to_json(mat));
    CHECK(back.hooks == mat.hooks);
    CHECK(back.seed_count == 2);
    CHECK(back.values == mat.values);
    CHECK_THROWS_AS(matrix_from_json("{\"hooks\":[0,1],\"matrix\":[[1]]}"), FormatError);
    CHECK_THROWS_AS(matrix_from_json("not json"), FormatError);
    const std::string csv = matrix_to_csv(mat);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
