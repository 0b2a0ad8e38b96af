#pragma once

// Prunable-stack model: embed -> ordered dimension-preserving blocks -> head.
// Templated on the scalar so the same arithmetic can run in double for
// gradient checking; production paths use Model<float>.

#include "mpruner/autodiff.hpp"
#include "mpruner/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mpruner {

enum class BlockKind : std::uint8_t { ResidualMlp = 0, Encoder = 1 };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& name);

struct BlockSpec {
    BlockKind kind = BlockKind::ResidualMlp;
    std::size_t width = 0;
    std::size_t inner_width = 0;
    /// Output width; 0 means "same as width". A value different from width
    /// adds a projection on the skip path and makes the block non-deletable.
    std::size_t out_width = 0;

    std::size_t input_width() const noexcept { return width; }
    std::size_t output_width() const noexcept { return out_width == 0 ? width : out_width; }
    bool projects() const noexcept { return output_width() != width; }

    bool operator==(const BlockSpec&) const = default;
};

/// Closed-form parameter count of one block.
std::size_t analytic_block_parameter_count(const BlockSpec& spec);

/// Closed-form parameter count of a whole model.
std::size_t analytic_parameter_count(std::size_t input_dim, std::span<const BlockSpec> blocks,
                                     std::size_t num_classes);

template <typename Scalar>
struct Linear {
    Matrix<Scalar> weight;  // out x in
    Matrix<Scalar> bias;    // 1 x out

    Eigen::Index in() const { return weight.cols(); }
    Eigen::Index out() const { return weight.rows(); }
    std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

template <typename Scalar>
struct LayerNormParams {
    Matrix<Scalar> gain;  // 1 x d
    Matrix<Scalar> bias;  // 1 x d
};

template <typename Scalar>
struct Block {
    BlockSpec spec;
    bool trainable = true;

    // Encoder blocks only.
    LayerNormParams<Scalar> attn_norm;
    Linear<Scalar> query, key, value, attn_out;

    LayerNormParams<Scalar> mlp_norm;
    Linear<Scalar> up, down;

    // Only when spec.projects().
    Linear<Scalar> skip;

    /// Visits every parameter tensor in canonical order.
    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        visit_(*this, std::forward<Fn>(fn));
    }
    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        visit_(*this, std::forward<Fn>(fn));
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for_each_parameter([&](const Matrix<Scalar>& m, const char*) { total += static_cast<std::size_t>(m.size()); });
        return total;
    }

    /// Zeroes the residual branches so the block computes the identity (or
    /// just its skip projection when it changes width).
    void zero_residual_branches() {
        if (spec.kind == BlockKind::Encoder) {
            attn_out.weight.setZero();
            attn_out.bias.setZero();
        }
        down.weight.setZero();
        down.bias.setZero();
    }

private:
    template <typename Self, typename Fn>
    static void visit_(Self& self, Fn&& fn) {
        auto lin = [&](auto& l, const char* w, const char* b) {
            fn(l.weight, w);
            fn(l.bias, b);
        };
        if (self.spec.kind == BlockKind::Encoder) {
            fn(self.attn_norm.gain, "attn_norm.gain");
            fn(self.attn_norm.bias, "attn_norm.bias");
            lin(self.query, "query.weight", "query.bias");
            lin(self.key, "key.weight", "key.bias");
            lin(self.value, "value.weight", "value.bias");
            lin(self.attn_out, "attn_out.weight", "attn_out.bias");
        }
        fn(self.mlp_norm.gain, "mlp_norm.gain");
        fn(self.mlp_norm.bias, "mlp_norm.bias");
        lin(self.up, "up.weight", "up.bias");
        lin(self.down, "down.weight", "down.bias");
        if (self.spec.projects()) lin(self.skip, "skip.weight", "skip.bias");
    }
};

/// Who owns a parameter tensor.
struct ParamOwner {
    enum class Kind { Embed, Block, Head } kind;
    std::size_t block = 0;
};

template <typename Scalar>
struct Model {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    /// Tokens per sample. A batch row holds seq_len * input_dim features.
    std::size_t seq_len = 1;

    Linear<Scalar> embed;
    bool embed_trainable = true;
    std::vector<Block<Scalar>> blocks;
    Linear<Scalar> head;
    bool head_trainable = true;

    /// Block indices whose outputs are captured for similarity analysis.
    IndexList hook_positions;

    std::size_t block_count() const noexcept { return blocks.size(); }

    std::size_t embed_width() const { return static_cast<std::size_t>(embed.out()); }

    /// Feature width (per token) flowing into the head.
    std::size_t output_width() const { return blocks.empty() ? embed_width() : blocks.back().spec.output_width(); }

    std::vector<BlockSpec> block_specs() const {
        std::vector<BlockSpec> specs;
        specs.reserve(blocks.size());
        for (const auto& b : blocks) specs.push_back(b.spec);
        return specs;
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        visit_(*this, std::forward<Fn>(fn));
    }
    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        visit_(*this, std::forward<Fn>(fn));
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for_each_parameter([&](const Matrix<Scalar>& m, const ParamOwner&, const char*) {
            total += static_cast<std::size_t>(m.size());
        });
        return total;
    }

    std::size_t nonzero_parameter_count() const {
        std::size_t total = 0;
        for_each_parameter([&](const Matrix<Scalar>& m, const ParamOwner&, const char*) {
            total += static_cast<std::size_t>((m.array() != Scalar(0)).count());
        });
        return total;
    }

    bool is_trainable(const ParamOwner& owner) const {
        switch (owner.kind) {
            case ParamOwner::Kind::Embed: return embed_trainable;
            case ParamOwner::Kind::Head: return head_trainable;
            case ParamOwner::Kind::Block: return blocks[owner.block].trainable;
        }
        return false;
    }

    std::size_t trainable_parameter_count() const {
        std::size_t total = 0;
        for_each_parameter([&](const Matrix<Scalar>& m, const ParamOwner& owner, const char*) {
            if (is_trainable(owner)) total += static_cast<std::size_t>(m.size());
        });
        return total;
    }

    template <typename Other>
    Model<Other> cast() const {
        Model<Other> out;
        out.input_dim = input_dim;
        out.num_classes = num_classes;
        out.seq_len = seq_len;
        out.embed_trainable = embed_trainable;
        out.head_trainable = head_trainable;
        out.hook_positions = hook_positions;
        out.blocks.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            out.blocks[i].spec = blocks[i].spec;
            out.blocks[i].trainable = blocks[i].trainable;
        }
        std::vector<const Matrix<Scalar>*> src;
        for_each_parameter([&](const Matrix<Scalar>& m, const ParamOwner&, const char*) { src.push_back(&m); });
        std::size_t at = 0;
        out.for_each_parameter([&](Matrix<Other>& m, const ParamOwner&, const char*) {
            m = src[at++]->template cast<Other>();
        });
        return out;
    }

private:
    template <typename Self, typename Fn>
    static void visit_(Self& self, Fn&& fn) {
        const ParamOwner embed_owner{ParamOwner::Kind::Embed, 0};
        fn(self.embed.weight, embed_owner, "embed.weight");
        fn(self.embed.bias, embed_owner, "embed.bias");
        for (std::size_t i = 0; i < self.blocks.size(); ++i) {
            const ParamOwner owner{ParamOwner::Kind::Block, i};
            self.blocks[i].for_each_parameter([&](auto& m, const char* name) { fn(m, owner, name); });
        }
        const ParamOwner head_owner{ParamOwner::Kind::Head, 0};
        fn(self.head.weight, head_owner, "head.weight");
        fn(self.head.bias, head_owner, "head.bias");
    }
};

/// Post-block activations for each hook, one n x (seq_len * width) matrix per hook.
template <typename Scalar>
struct ActivationSet {
    IndexList hooks;
    std::vector<Matrix<Scalar>> outputs;
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

template <typename Scalar>
Linear<Scalar> init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Linear<Scalar> l;
    l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    l.bias.resize(1, static_cast<Eigen::Index>(out));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<Scalar>(dist(rng));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = static_cast<Scalar>(dist(rng));
    return l;
}

template <typename Scalar>
LayerNormParams<Scalar> init_norm(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return {Matrix<Scalar>::Ones(1, n), Matrix<Scalar>::Zero(1, n)};
}

inline void validate_spec(const BlockSpec& spec) {
    if (spec.width == 0 || spec.inner_width == 0) throw InvalidArgument("block widths must be positive");
}

}  // namespace detail

/// Builds a block with uniform fan-in initialization drawn from `rng`.
template <typename Scalar>
Block<Scalar> make_block(const BlockSpec& spec, std::mt19937_64& rng) {
    detail::validate_spec(spec);
    Block<Scalar> b;
    b.spec = spec;
    const auto d = spec.width;
    if (spec.kind == BlockKind::Encoder) {
        b.attn_norm = detail::init_norm<Scalar>(d);
        b.query = detail::init_linear<Scalar>(d, d, rng);
        b.key = detail::init_linear<Scalar>(d, d, rng);
        b.value = detail::init_linear<Scalar>(d, d, rng);
        b.attn_out = detail::init_linear<Scalar>(d, d, rng);
    }
    b.mlp_norm = detail::init_norm<Scalar>(d);
    b.up = detail::init_linear<Scalar>(d, spec.inner_width, rng);
    b.down = detail::init_linear<Scalar>(spec.inner_width, spec.output_width(), rng);
    if (spec.projects()) b.skip = detail::init_linear<Scalar>(d, spec.output_width(), rng);
    return b;
}

/// General builder: one spec per block. Consecutive specs must chain widths.
template <typename Scalar = float>
Model<Scalar> build_model(std::size_t input_dim, std::span<const BlockSpec> specs, std::size_t num_classes,
                          unsigned seed, std::size_t seq_len = 1) {
    if (input_dim == 0 || num_classes == 0 || seq_len == 0) throw InvalidArgument("model dimensions must be positive");
    if (specs.empty()) throw InvalidArgument("a model needs at least one block");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        detail::validate_spec(specs[i]);
        if (i > 0 && specs[i - 1].output_width() != specs[i].input_width())
            throw ShapeError("block " + std::to_string(i) + " input width does not match its predecessor");
    }
    std::mt19937_64 rng(seed);
    Model<Scalar> m;
    m.input_dim = input_dim;
    m.num_classes = num_classes;
    m.seq_len = seq_len;
    m.embed = detail::init_linear<Scalar>(input_dim, specs.front().input_width(), rng);
    m.blocks.reserve(specs.size());
    for (const auto& s : specs) m.blocks.push_back(make_block<Scalar>(s, rng));
    m.head = detail::init_linear<Scalar>(specs.back().output_width(), num_classes, rng);
    m.hook_positions.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) m.hook_positions[i] = i;
    return m;
}

/// Uniform stack of `num_blocks` copies of `spec`; hooks default to every block.
template <typename Scalar = float>
Model<Scalar> build_model(std::size_t input_dim, std::size_t num_blocks, const BlockSpec& spec,
                          std::size_t num_classes, unsigned seed, std::size_t seq_len = 1) {
    if (num_blocks == 0) throw InvalidArgument("a model needs at least one block");
    if (spec.projects()) throw InvalidArgument("a uniform stack needs width-preserving blocks");
    const std::vector<BlockSpec> specs(num_blocks, spec);
    return build_model<Scalar>(input_dim, std::span<const BlockSpec>(specs), num_classes, seed, seq_len);
}

/// Throws unless hooks are strictly increasing valid block indices.
void validate_hooks(std::span<const std::size_t> hooks, std::size_t block_count);

// ---------------------------------------------------------------------------
// Forward graph

/// Optional observers invoked while the graph is built.
template <typename Scalar>
struct ForwardObserver {
    /// Post-block (post-residual-sum) output, (n * seq_len) x width.
    std::function<void(std::size_t block, const Matrix<Scalar>&)> block_output;
    /// Input fed to a linear layer, (rows) x in.
    std::function<void(const Linear<Scalar>&, const Matrix<Scalar>&)> linear_input;
    /// Stop after this block (no head). npos runs the whole model.
    std::size_t stop_after_block = std::numeric_limits<std::size_t>::max();
};

template <typename Scalar>
struct ForwardGraph {
    ad::Var output;  // logits, or last computed block output when stopped early
    /// Parameter tensors bound as differentiable leaves (trainable ones only).
    std::vector<std::pair<const Matrix<Scalar>*, ad::Var>> parameters;
};

namespace detail {

template <typename Scalar>
struct GraphBuilder {
    ad::Tape<Scalar>& tape;
    const ForwardObserver<Scalar>* observer;
    std::vector<std::pair<const Matrix<Scalar>*, ad::Var>> bound;

    ad::Var bind(const Matrix<Scalar>& m, bool trainable) {
        if (trainable && tape.recording()) {
            const ad::Var v = tape.parameter(m);
            bound.emplace_back(&m, v);
            return v;
        }
        return tape.constant(m);
    }

    ad::Var linear(ad::Var x, const Linear<Scalar>& l, bool trainable) {
        if (observer && observer->linear_input) observer->linear_input(l, tape.value(x));
        return ad::linear(tape, x, bind(l.weight, trainable), bind(l.bias, trainable));
    }

    ad::Var norm(ad::Var x, const LayerNormParams<Scalar>& p, bool trainable) {
        return ad::layer_norm(tape, x, bind(p.gain, trainable), bind(p.bias, trainable));
    }

    ad::Var block(ad::Var x, const Block<Scalar>& b, std::size_t seq_len) {
        const bool tr = b.trainable;
        if (b.spec.kind == BlockKind::Encoder) {
            const ad::Var h = norm(x, b.attn_norm, tr);
            const ad::Var q = linear(h, b.query, tr);
            const ad::Var k = linear(h, b.key, tr);
            const ad::Var v = linear(h, b.value, tr);
            const ad::Var a = ad::attention(tape, q, k, v, seq_len);
            x = ad::add(tape, x, linear(a, b.attn_out, tr));
        }
        const ad::Var h = norm(x, b.mlp_norm, tr);
        const ad::Var branch = linear(ad::gelu(tape, linear(h, b.up, tr)), b.down, tr);
        const ad::Var skip = b.spec.projects() ? linear(x, b.skip, tr) : x;
        return ad::add(tape, skip, branch);
    }
};

}  // namespace detail

/// Records the forward computation of `model` on `batch` into `tape`.
template <typename Scalar>
ForwardGraph<Scalar> build_forward(ad::Tape<Scalar>& tape, const Model<Scalar>& model, const Matrix<Scalar>& batch,
                                   const ForwardObserver<Scalar>* observer = nullptr) {
    const auto row_width = static_cast<Eigen::Index>(model.seq_len * model.input_dim);
    if (batch.cols() != row_width)
        throw ShapeError("batch width " + std::to_string(batch.cols()) + " does not match model input width " +
                         std::to_string(row_width));
    const auto tokens = batch.rows() * static_cast<Eigen::Index>(model.seq_len);
    Matrix<Scalar> token_rows =
        Eigen::Map<const Matrix<Scalar>>(batch.data(), tokens, static_cast<Eigen::Index>(model.input_dim));

    detail::GraphBuilder<Scalar> g{tape, observer, {}};
    ad::Var x = g.linear(tape.constant(std::move(token_rows)), model.embed, model.embed_trainable);
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        x = g.block(x, model.blocks[i], model.seq_len);
        if (observer && observer->block_output) observer->block_output(i, tape.value(x));
        if (observer && i >= observer->stop_after_block) return {x, std::move(g.bound)};
    }
    x = ad::mean_tokens(tape, x, model.seq_len);
    x = g.linear(x, model.head, model.head_trainable);
    return {x, std::move(g.bound)};
}

/// Logits, n x num_classes. Pure in (model, batch).
template <typename Scalar>
Matrix<Scalar> forward(const Model<Scalar>& model, const Matrix<Scalar>& batch) {
    ad::Tape<Scalar> tape(false);
    const auto graph = build_forward(tape, model, batch);
    return tape.value(graph.output);
}

/// Post-block activations at each hook, reshaped to one row per sample.
template <typename Scalar>
ActivationSet<Scalar> capture_activations(const Model<Scalar>& model, const Matrix<Scalar>& batch,
                                          std::span<const std::size_t> hooks) {
    validate_hooks(hooks, model.block_count());
    ActivationSet<Scalar> set;
    set.hooks.assign(hooks.begin(), hooks.end());
    set.outputs.resize(hooks.size());
    if (hooks.empty()) return set;
    ForwardObserver<Scalar> obs;
    std::size_t next = 0;
    const auto n = batch.rows();
    obs.block_output = [&](std::size_t block, const Matrix<Scalar>& out) {
        if (next < hooks.size() && hooks[next] == block) {
            set.outputs[next] = Eigen::Map<const Matrix<Scalar>>(out.data(), n, out.size() / std::max<Eigen::Index>(n, 1));
            ++next;
        }
    };
    obs.stop_after_block = hooks.back();
    ad::Tape<Scalar> tape(false);
    build_forward(tape, model, batch, &obs);
    return set;
}

/// Mean cross-entropy and gradients for every trainable parameter, in
/// canonical parameter order (frozen parameters get an empty matrix).
template <typename Scalar>
struct LossAndGradients {
    Scalar loss = 0;
    std::vector<Matrix<Scalar>> gradients;
};

template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const Model<Scalar>& model, const Matrix<Scalar>& batch,
                                            std::span<const int> labels) {
    ad::Tape<Scalar> tape(true);
    const auto graph = build_forward(tape, model, batch);
    const ad::Var loss = ad::softmax_cross_entropy(tape, graph.output, labels);
    tape.backward(loss);
    LossAndGradients<Scalar> out;
    out.loss = tape.value(loss)(0, 0);
    std::unordered_map<const Matrix<Scalar>*, ad::Var> bound(graph.parameters.begin(), graph.parameters.end());
    model.for_each_parameter([&](const Matrix<Scalar>& m, const ParamOwner&, const char*) {
        const auto it = bound.find(&m);
        if (it == bound.end()) {
            out.gradients.emplace_back();
            return;
        }
        const auto& g = tape.grad(it->second);
        out.gradients.push_back(g.size() == 0 ? Matrix<Scalar>::Zero(m.rows(), m.cols()) : g);
    });
    return out;
}

/// Mean cross-entropy loss only.
template <typename Scalar>
Scalar loss(const Model<Scalar>& model, const Matrix<Scalar>& batch, std::span<const int> labels) {
    ad::Tape<Scalar> tape(false);
    const auto graph = build_forward(tape, model, batch);
    return tape.value(ad::softmax_cross_entropy(tape, graph.output, labels))(0, 0);
}

// ---------------------------------------------------------------------------
// Structural edits

namespace detail {
inline IndexList reindex_hooks_after_delete(const IndexList& hooks, std::size_t index) {
    IndexList out;
    out.reserve(hooks.size());
    for (auto h : hooks) {
        if (h == index) continue;
        out.push_back(h > index ? h - 1 : h);
    }
    return out;
}
}  // namespace detail

/// Copy of `model` without block `index`. Hooks on the deleted block are
/// dropped, later hooks shift down by one.
template <typename Scalar>
Model<Scalar> delete_block(const Model<Scalar>& model, std::size_t index) {
    if (index >= model.blocks.size())
        throw IndexError("delete_block: index " + std::to_string(index) + " out of range for " +
                         std::to_string(model.blocks.size()) + " blocks");
    Model<Scalar> out = model;
    out.blocks.erase(out.blocks.begin() + static_cast<std::ptrdiff_t>(index));
    out.hook_positions = detail::reindex_hooks_after_delete(model.hook_positions, index);
    return out;
}

/// Copy of `model` with `block` inserted before position `index` (index ==
/// block_count appends). Hooks at or after `index` shift up; the new block is
/// not hooked.
template <typename Scalar>
Model<Scalar> insert_block(const Model<Scalar>& model, std::size_t index, Block<Scalar> block) {
    if (index > model.blocks.size()) throw IndexError("insert_block: index out of range");
    const std::size_t in = index == 0 ? model.embed_width() : model.blocks[index - 1].spec.output_width();
    const std::size_t out_next =
        index == model.blocks.size() ? static_cast<std::size_t>(model.head.in()) : model.blocks[index].spec.input_width();
    if (block.spec.input_width() != in || block.spec.output_width() != out_next)
        throw ShapeError("insert_block: block widths do not fit at this position");
    Model<Scalar> out = model;
    out.blocks.insert(out.blocks.begin() + static_cast<std::ptrdiff_t>(index), std::move(block));
    for (auto& h : out.hook_positions)
        if (h >= index) ++h;
    return out;
}

}  // namespace mpruner
