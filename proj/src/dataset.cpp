#include "mpruner/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>

namespace mpruner {

SyntheticKind synthetic_kind_from_string(const std::string& name) {
    if (name == "gaussian_clusters") return SyntheticKind::GaussianClusters;
    if (name == "ring_xor") return SyntheticKind::RingXor;
    throw InvalidArgument("unknown synthetic dataset kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
    return kind == SyntheticKind::GaussianClusters ? "gaussian_clusters" : "ring_xor";
}

namespace {

Split gather(const Tensor& inputs, const std::vector<int>& labels, std::span<const std::size_t> idx) {
    Split s;
    s.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
    s.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        s.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(idx[i]));
        s.labels.push_back(labels[idx[i]]);
    }
    return s;
}

}  // namespace

Dataset split_dataset(const Tensor& inputs, const std::vector<int>& labels, std::size_t num_classes, unsigned seed) {
    const std::size_t n = labels.size();
    if (static_cast<std::size_t>(inputs.rows()) != n) throw ShapeError("inputs and labels differ in length");
    if (num_classes == 0) throw InvalidArgument("num_classes must be positive");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw InvalidArgument("label out of range");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) ^ 0x5eed5a1175ULL);
    std::shuffle(order.begin(), order.end(), rng);

    const auto tenth = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    std::size_t n_val = tenth, n_eval = tenth;
    while (n_val + n_eval >= n && (n_val + n_eval) > 0) {
        if (n_val >= n_eval && n_val > 0) --n_val;
        else --n_eval;
    }
    const std::size_t n_train = n - n_val - n_eval;

    Dataset d;
    d.input_dim = static_cast<std::size_t>(inputs.cols());
    d.num_classes = num_classes;
    std::span<const std::size_t> all(order);
    d.train = gather(inputs, labels, all.subspan(0, n_train));
    d.validation = gather(inputs, labels, all.subspan(n_train, n_val));
    d.eval = gather(inputs, labels, all.subspan(n_train + n_val, n_eval));
    return d;
}

Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t n, std::size_t input_dim, std::size_t num_classes,
                               unsigned seed, double separation) {
    if (input_dim == 0 || num_classes == 0) throw InvalidArgument("dataset dimensions must be positive");
    if (n < num_classes) throw InvalidArgument("need at least one sample per class");
    if (kind == SyntheticKind::RingXor && input_dim < 2) throw InvalidArgument("ring_xor needs input_dim >= 2");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim));
    std::vector<int> labels(n);

    if (kind == SyntheticKind::GaussianClusters) {
        Matrix<double> centres(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(input_dim));
        for (Eigen::Index c = 0; c < centres.rows(); ++c) {
            for (Eigen::Index j = 0; j < centres.cols(); ++j) centres(c, j) = normal(rng);
            const double norm = centres.row(c).norm();
            centres.row(c) *= separation / (norm > 0 ? norm : 1.0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<Eigen::Index>(i % num_classes);
            labels[i] = static_cast<int>(c);
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                x(static_cast<Eigen::Index>(i), j) = static_cast<float>(centres(c, j) + normal(rng));
        }
    } else {
        const double median_radius = std::sqrt(2.0 * std::log(2.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < x.cols(); ++j) x(static_cast<Eigen::Index>(i), j) = static_cast<float>(normal(rng));
            const double a = x(static_cast<Eigen::Index>(i), 0), b = x(static_cast<Eigen::Index>(i), 1);
            const int xor_bit = (a > 0) != (b > 0) ? 1 : 0;
            const int ring = std::hypot(a, b) > median_radius ? 1 : 0;
            labels[i] = (xor_bit + 2 * ring) % static_cast<int>(num_classes);
        }
    }
    return split_dataset(x, labels, num_classes, seed);
}

Dataset load_csv_dataset(const std::filesystem::path& path, unsigned seed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read dataset CSV: " + path.string());
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> values;
        std::istringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) {
                numeric = false;
                break;
            }
            values.push_back(v);
        }
        if (!numeric) {
            if (line_no == 1) continue;  // header
            throw FormatError("dataset CSV line " + std::to_string(line_no) + " is not numeric");
        }
        if (values.size() < 2) throw FormatError("dataset CSV line " + std::to_string(line_no) + " needs features and a label");
        if (!rows.empty() && values.size() - 1 != rows.front().size())
            throw FormatError("dataset CSV line " + std::to_string(line_no) + " has a different column count");
        const double label = values.back();
        if (label < 0 || label != std::floor(label)) throw FormatError("dataset CSV labels must be non-negative integers");
        labels.push_back(static_cast<int>(label));
        values.pop_back();
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw FormatError("dataset CSV has no rows: " + path.string());
    Tensor x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(rows[i][j]);
    const auto classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    return split_dataset(x, labels, classes, seed);
}

std::vector<Tensor> select_seed_batches(const Split& split, std::size_t count, std::size_t batch_size,
                                        unsigned shuffle_seed) {
    if (count == 0 || batch_size < 2) throw InvalidArgument("seed batches: need count >= 1 and batch_size >= 2");
    if (split.size() < 2) throw InvalidArgument("seed batches: split has fewer than 2 samples");
    std::vector<std::size_t> order(split.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t size = std::min(batch_size, split.size());
    const std::size_t available = std::max<std::size_t>(1, split.size() / size);
    std::vector<Tensor> batches;
    for (std::size_t b = 0; b < std::min(count, available); ++b) {
        Tensor t(static_cast<Eigen::Index>(size), split.inputs.cols());
        for (std::size_t i = 0; i < size; ++i)
            t.row(static_cast<Eigen::Index>(i)) = split.inputs.row(static_cast<Eigen::Index>(order[b * size + i]));
        batches.push_back(std::move(t));
    }
    return batches;
}

Tensor calibration_batch(const Split& split, std::size_t size, unsigned seed) {
    if (split.empty()) throw InvalidArgument("calibration: split is empty");
    std::vector<std::size_t> order(split.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t m = std::min(size, split.size());
    Tensor t(static_cast<Eigen::Index>(m), split.inputs.cols());
    for (std::size_t i = 0; i < m; ++i) t.row(static_cast<Eigen::Index>(i)) = split.inputs.row(static_cast<Eigen::Index>(order[i]));
    return t;
}

}  // namespace mpruner
