#include "mpruner/cka.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace mpruner {

Matrix<double> centering_matrix(Eigen::Index n) {
    return Matrix<double>::Identity(n, n) - Matrix<double>::Constant(n, n, 1.0 / static_cast<double>(n));
}

double hsic_centered(const Matrix<double>& kc, const Matrix<double>& lc) {
    if (kc.rows() != lc.rows() || kc.cols() != lc.cols() || kc.rows() != kc.cols())
        throw ShapeError("hsic: Gram matrices must be square and the same size");
    const auto n = static_cast<double>(kc.rows());
    if (kc.rows() < 2) throw InvalidArgument("hsic: need at least 2 samples");
    // tr(A B) for symmetric A equals the elementwise product sum.
    return kc.cwiseProduct(lc.transpose()).sum() / ((n - 1.0) * (n - 1.0));
}

double hsic(const Matrix<double>& k, const Matrix<double>& l) {
    if (k.rows() != l.rows() || k.cols() != l.cols()) throw ShapeError("hsic: Gram matrices differ in size");
    return hsic_centered(center(k), center(l));
}

namespace detail {

double cka_from_grams(const Matrix<double>& k, const Matrix<double>& l) {
    const Matrix<double> kc = center(k);
    const Matrix<double> lc = center(l);
    const double kk = hsic_centered(kc, kc);
    const double ll = hsic_centered(lc, lc);
    if (kk < kDegenerateHsic) throw DegenerateActivation("cka: constant activations (self-HSIC vanishes)", 0);
    if (ll < kDegenerateHsic) throw DegenerateActivation("cka: constant activations (self-HSIC vanishes)", 1);
    const double value = hsic_centered(kc, lc) / std::sqrt(kk * ll);
    if (!(value > -1e-4 && value < 1.0 + 1e-4))
        throw std::logic_error("cka: value " + std::to_string(value) + " outside [0, 1] beyond rounding");
    return std::clamp(value, 0.0, 1.0);
}

}  // namespace detail

std::size_t CkaChain::count_at_least(double tau) const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [tau](double v) { return v >= tau; }));
}

std::size_t analysis_threads() {
    if (const char* env = std::getenv("MPRUNER_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;  // positions into the hook list

/// CKA for each listed pair of hook positions on one seed batch.
std::vector<double> batch_pairs(const Model<float>& model, std::span<const std::size_t> hooks, const Tensor& batch,
                                const PairList& pairs) {
    if (batch.rows() < 2) throw InvalidArgument("seed batches need at least 2 samples");
    const auto acts = capture_activations(model, batch, hooks);
    std::vector<Matrix<double>> grams;
    grams.reserve(acts.outputs.size());
    for (const auto& a : acts.outputs) grams.push_back(gram(a));
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
        try {
            out.push_back(detail::cka_from_grams(grams[a], grams[b]));
        } catch (const DegenerateActivation& e) {
            const std::size_t hook = e.hook() == 0 ? hooks[a] : hooks[b];
            throw DegenerateActivation("degenerate (constant) activations at hook " + std::to_string(hook), hook);
        }
    }
    return out;
}

/// Running mean over seed batches, contributions reduced in batch order.
std::vector<double> averaged_pairs(const Model<float>& model, std::span<const std::size_t> hooks,
                                   std::span<const Tensor> seeds, const PairList& pairs) {
    validate_hooks(hooks, model.block_count());
    if (seeds.empty()) throw InvalidArgument("similarity analysis needs at least one seed batch");
    std::vector<double> mean(pairs.size(), 0.0);
    const std::size_t threads = std::min(analysis_threads(), seeds.size());
    for (std::size_t wave = 0; wave < seeds.size(); wave += threads) {
        const std::size_t count = std::min(threads, seeds.size() - wave);
        std::vector<std::vector<double>> results(count);
        std::vector<std::exception_ptr> errors(count);
        auto work = [&](std::size_t i) {
            try {
                results[i] = batch_pairs(model, hooks, seeds[wave + i], pairs);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        };
        if (count == 1) {
            work(0);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t i = 0; i < count; ++i) pool.emplace_back(work, i);
        }
        for (std::size_t i = 0; i < count; ++i) {
            if (errors[i]) std::rethrow_exception(errors[i]);
            const auto idx = static_cast<double>(wave + i);
            for (std::size_t p = 0; p < pairs.size(); ++p) mean[p] = (mean[p] * idx + results[i][p]) / (idx + 1.0);
        }
    }
    return mean;
}

}  // namespace

CkaChain cka_chain(const Model<float>& model, std::span<const std::size_t> hooks, std::span<const Tensor> seeds) {
    PairList pairs;
    for (std::size_t j = 1; j < hooks.size(); ++j) pairs.emplace_back(j - 1, j);
    CkaChain chain;
    chain.hooks.assign(hooks.begin(), hooks.end());
    chain.values = averaged_pairs(model, hooks, seeds, pairs);
    chain.seed_count = seeds.size();
    return chain;
}

CkaMatrix cka_full_matrix(const Model<float>& model, std::span<const std::size_t> hooks,
                          std::span<const Tensor> seeds) {
    PairList pairs;
    for (std::size_t a = 0; a < hooks.size(); ++a)
        for (std::size_t b = a + 1; b < hooks.size(); ++b) pairs.emplace_back(a, b);
    const auto values = averaged_pairs(model, hooks, seeds, pairs);
    const auto n = static_cast<Eigen::Index>(hooks.size());
    CkaMatrix m;
    m.hooks.assign(hooks.begin(), hooks.end());
    m.values = Matrix<double>::Identity(n, n);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto a = static_cast<Eigen::Index>(pairs[p].first);
        const auto b = static_cast<Eigen::Index>(pairs[p].second);
        m.values(a, b) = m.values(b, a) = values[p];
    }
    m.seed_count = seeds.size();
    return m;
}

namespace {
std::string format_g(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}
}  // namespace

std::string matrix_to_csv(const CkaMatrix& m) {
    std::string out;
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
            if (c) out += ',';
            out += format_g(m.values(r, c), 9);
        }
        out += '\n';
    }
    return out;
}

std::string matrix_to_json(const CkaMatrix& m) {
    nlohmann::json j;
    j["hooks"] = m.hooks;
    j["seed_count"] = m.seed_count;
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) row.push_back(m.values(r, c));
        rows.push_back(std::move(row));
    }
    j["matrix"] = std::move(rows);
    return j.dump(2);
}

CkaMatrix matrix_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        CkaMatrix m;
        m.hooks = j.at("hooks").get<IndexList>();
        m.seed_count = j.value("seed_count", std::size_t{0});
        const auto n = static_cast<Eigen::Index>(m.hooks.size());
        const auto& rows = j.at("matrix");
        if (rows.size() != m.hooks.size()) throw FormatError("matrix row count does not match hooks");
        m.values.resize(n, n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& row = rows.at(static_cast<std::size_t>(r));
            if (row.size() != m.hooks.size()) throw FormatError("matrix is not square");
            for (Eigen::Index c = 0; c < n; ++c) m.values(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed CKA matrix JSON: ") + e.what());
    }
}

std::string chain_to_csv(const CkaChain& chain) {
    std::string out = "hook_a,hook_b,cka\n";
    for (std::size_t j = 1; j < chain.hooks.size(); ++j) {
        out += std::to_string(chain.hooks[j - 1]) + ',' + std::to_string(chain.hooks[j]) + ',' +
               format_g(chain.values[j - 1], 17) + '\n';
    }
    return out;
}

CkaChain chain_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "hook_a,hook_b,cka") throw FormatError("chain CSV: missing header");
    CkaChain chain;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t a = 0, b = 0;
        double v = 0;
        char c1 = 0, c2 = 0;
        std::istringstream row(line);
        if (!(row >> a >> c1 >> b >> c2 >> v) || c1 != ',' || c2 != ',')
            throw FormatError("chain CSV: malformed row '" + line + "'");
        if (chain.hooks.empty()) chain.hooks.push_back(a);
        else if (chain.hooks.back() != a) throw FormatError("chain CSV: rows are not consecutive hook pairs");
        chain.hooks.push_back(b);
        chain.values.push_back(v);
    }
    return chain;
}

}  // namespace mpruner
