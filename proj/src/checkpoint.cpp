#include "mpruner/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mpruner {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'R', 'K'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename T>
    void le(T value) {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
    void u8(std::uint8_t v) { le(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::size_t v) {
        if (v > UINT32_MAX) throw FormatError("value too large for checkpoint field");
        le(static_cast<std::uint32_t>(v));
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }

    std::vector<std::uint8_t> take() { return std::move(out_); }
    const std::vector<std::uint8_t>& data() const { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    template <typename T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    std::uint8_t u8() { return le<std::uint8_t>(); }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::size_t u32() { return le<std::uint32_t>(); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    void bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

bool is_vector_param(const char* name) {
    const std::string n(name);
    return n.ends_with(".bias") || n.ends_with(".gain");
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const Model<float>& model) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u16(kCheckpointVersion);
    w.u32(model.input_dim);
    w.u32(model.num_classes);
    w.u32(model.seq_len);
    w.u32(model.blocks.size());
    for (const auto& b : model.blocks) {
        w.u8(static_cast<std::uint8_t>(b.spec.kind));
        w.u32(b.spec.width);
        w.u32(b.spec.inner_width);
        w.u32(b.spec.output_width());
        w.u8(b.trainable ? 1 : 0);
    }
    w.u8(model.embed_trainable ? 1 : 0);
    w.u8(model.head_trainable ? 1 : 0);
    w.u32(model.hook_positions.size());
    for (auto h : model.hook_positions) w.u32(h);

    std::size_t tensors = 0;
    model.for_each_parameter([&](const Tensor&, const ParamOwner&, const char*) { ++tensors; });
    w.u32(tensors);
    model.for_each_parameter([&](const Tensor& m, const ParamOwner&, const char* name) {
        if (is_vector_param(name)) {
            w.u8(1);
            w.u32(static_cast<std::size_t>(m.size()));
        } else {
            w.u8(2);
            w.u32(static_cast<std::size_t>(m.rows()));
            w.u32(static_cast<std::size_t>(m.cols()));
        }
        for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
    });
    const std::uint32_t crc = crc_of(w.data());
    w.le(crc);
    return w.take();
}

Model<float> load_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof kMagic + 2 + 4) throw FormatError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not an MPRK checkpoint (bad magic)");

    Reader r(bytes.first(bytes.size() - 4));
    char magic[4];
    r.bytes(magic, sizeof magic);
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    Reader tail(bytes.last(4));
    if (tail.le<std::uint32_t>() != crc_of(bytes.first(bytes.size() - 4)))
        throw FormatError("checkpoint checksum mismatch");

    const auto input_dim = r.u32();
    const auto num_classes = r.u32();
    const auto seq_len = r.u32();
    const auto num_blocks = r.u32();
    std::vector<BlockSpec> specs;
    std::vector<bool> trainable;
    for (std::size_t i = 0; i < num_blocks; ++i) {
        const auto kind = r.u8();
        if (kind > static_cast<std::uint8_t>(BlockKind::Encoder)) throw FormatError("unknown block kind in checkpoint");
        BlockSpec s;
        s.kind = static_cast<BlockKind>(kind);
        s.width = r.u32();
        s.inner_width = r.u32();
        const auto out = r.u32();
        s.out_width = out == s.width ? 0 : out;
        specs.push_back(s);
        trainable.push_back(r.u8() != 0);
    }
    Model<float> model;
    try {
        model = build_model<float>(input_dim, std::span<const BlockSpec>(specs), num_classes, 0, seq_len);
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("inconsistent checkpoint header: ") + e.what());
    }
    for (std::size_t i = 0; i < num_blocks; ++i) model.blocks[i].trainable = trainable[i];
    model.embed_trainable = r.u8() != 0;
    model.head_trainable = r.u8() != 0;
    const auto num_hooks = r.u32();
    if (num_hooks > num_blocks) throw FormatError("more hooks than blocks in checkpoint");
    model.hook_positions.clear();
    for (std::size_t i = 0; i < num_hooks; ++i) model.hook_positions.push_back(r.u32());
    try {
        validate_hooks(model.hook_positions, num_blocks);
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid hooks in checkpoint: ") + e.what());
    }

    std::size_t expected = 0;
    model.for_each_parameter([&](const Tensor&, const ParamOwner&, const char*) { ++expected; });
    if (r.u32() != expected) throw FormatError("tensor count does not match block header");
    model.for_each_parameter([&](Tensor& m, const ParamOwner&, const char* name) {
        const auto rank = r.u8();
        if (rank != 1 && rank != 2) throw FormatError(std::string("bad tensor rank for ") + name);
        const auto rows = rank == 1 ? std::size_t{1} : r.u32();
        const auto cols = r.u32();
        if (rows != static_cast<std::size_t>(m.rows()) || cols != static_cast<std::size_t>(m.cols()))
            throw FormatError(std::string("tensor shape mismatch for ") + name);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const float v = r.f32();
            if (!std::isfinite(v)) throw FormatError(std::string("non-finite value in ") + name);
            m.data()[i] = v;
        }
    });
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
    return model;
}

void save_checkpoint_file(const Model<float>& model, const std::filesystem::path& path) {
    const auto bytes = save_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Model<float> load_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

}  // namespace mpruner
