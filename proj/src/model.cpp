#include "mpruner/model.hpp"

namespace mpruner {

std::string to_string(BlockKind kind) {
    switch (kind) {
        case BlockKind::ResidualMlp: return "residual_mlp";
        case BlockKind::Encoder: return "encoder";
    }
    return "unknown";
}

BlockKind block_kind_from_string(const std::string& name) {
    if (name == "residual_mlp") return BlockKind::ResidualMlp;
    if (name == "encoder") return BlockKind::Encoder;
    throw InvalidArgument("unknown block kind '" + name + "'");
}

std::size_t analytic_block_parameter_count(const BlockSpec& spec) {
    const std::size_t d = spec.width;
    const std::size_t inner = spec.inner_width;
    const std::size_t out = spec.output_width();
    std::size_t count = 2 * d                // mlp norm gain + bias
                        + inner * d + inner  // up projection
                        + out * inner + out; // down projection
    if (spec.kind == BlockKind::Encoder) count += 2 * d + 4 * (d * d + d);
    if (spec.projects()) count += out * d + out;
    return count;
}

std::size_t analytic_parameter_count(std::size_t input_dim, std::span<const BlockSpec> blocks,
                                     std::size_t num_classes) {
    if (blocks.empty()) return 0;
    std::size_t count = input_dim * blocks.front().width + blocks.front().width;
    for (const auto& b : blocks) count += analytic_block_parameter_count(b);
    count += blocks.back().output_width() * num_classes + num_classes;
    return count;
}

void validate_hooks(std::span<const std::size_t> hooks, std::size_t block_count) {
    for (std::size_t i = 0; i < hooks.size(); ++i) {
        if (hooks[i] >= block_count)
            throw IndexError("hook " + std::to_string(hooks[i]) + " is not a valid block index (model has " +
                             std::to_string(block_count) + " blocks)");
        if (i > 0 && hooks[i] <= hooks[i - 1]) throw IndexError("hook positions must be strictly increasing");
    }
}

}  // namespace mpruner
