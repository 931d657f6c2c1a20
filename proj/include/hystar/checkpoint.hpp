#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hystar/dataset.hpp"
#include "hystar/errors.hpp"
#include "hystar/training.hpp"

namespace hystar {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char checkpoint_magic[4] = {'H', 'Y', 'S', 'T'};
inline constexpr std::uint8_t checkpoint_version = 1;
inline constexpr std::uint8_t dtype_f32 = 0;

namespace detail {

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::string take(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const noexcept { return pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (end_ - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    const std::string& bytes_;
    std::size_t end_, pos_ = 0;
};

} // namespace detail

/// Serializes every named tensor of the model (frozen ones included) as f32.
inline std::string checkpoint_bytes(Model<float>& model) {
    const auto tensors = model.named_tensors();
    std::string out(checkpoint_magic, 4);
    detail::put<std::uint8_t>(out, checkpoint_version);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw ContractError("checkpoint: tensor name too long");
        detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        const auto& shape = t.value->shape();
        if (shape.size() > 0xFF) throw ContractError("checkpoint: rank too large");
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
        for (std::size_t d : shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        detail::put<std::uint8_t>(out, dtype_f32);
        out.append(reinterpret_cast<const char*>(t.value->data()), t.value->numel() * sizeof(float));
    }
    detail::put<std::uint32_t>(out, detail::crc32_of(out));
    return out;
}

inline void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
    const std::string bytes = checkpoint_bytes(model);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write to '" + path.string() + "' failed");
}

/// Restores the writable tensors of a model built from the same configuration
/// and seed. Frozen tensors in the file must equal the model's bit for bit, so
/// a checkpoint cannot be applied to a different backbone.
inline void load_checkpoint_bytes(Model<float>& model, const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), checkpoint_magic, 4) != 0)
        throw FormatError("checkpoint: bad magic");
    if (bytes.size() < 5) throw FormatError("checkpoint truncated while reading version");
    const auto version = static_cast<std::uint8_t>(bytes[4]);
    if (version != checkpoint_version)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    if (bytes.size() < 9) throw FormatError("checkpoint truncated while reading tensor count");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body, 4);
    if (detail::crc32_of(bytes.substr(0, body)) != stored_crc) throw FormatError("checkpoint: checksum mismatch");

    detail::Reader r(bytes, body);
    r.take(5, "header");
    const auto tensors = model.named_tensors();
    const auto count = r.get<std::uint32_t>("tensor count");
    if (count != tensors.size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(tensors.size()));
    // Parse everything before touching the model so a bad file leaves it intact.
    std::vector<std::vector<float>> values;
    for (const auto& t : tensors) {
        const auto len = r.get<std::uint16_t>("name length");
        const std::string name = r.take(len, "name");
        if (name != t.name) throw FormatError("checkpoint: expected tensor '" + t.name + "', found '" + name + "'");
        const auto rank = r.get<std::uint8_t>("rank");
        Shape shape;
        for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint32_t>("dims"));
        if (shape != t.value->shape())
            throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                              shape_str(t.value->shape()));
        if (r.get<std::uint8_t>("dtype") != dtype_f32) throw FormatError("checkpoint: tensor '" + name + "' is not f32");
        std::vector<float> v(t.value->numel());
        const std::string raw = r.take(v.size() * sizeof(float), "tensor data");
        std::memcpy(v.data(), raw.data(), raw.size());
        if (!t.writable && std::memcmp(v.data(), t.value->data(), raw.size()) != 0)
            throw FormatError("checkpoint: frozen tensor '" + name + "' differs from the model's");
        values.push_back(std::move(v));
    }
    if (r.pos() != body) throw FormatError("checkpoint: trailing bytes before checksum");
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i].writable) std::copy(values[i].begin(), values[i].end(), tensors[i].writable->data());
}

inline void load_checkpoint(Model<float>& model, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("checkpoint '" + path.string() + "' not found");
    load_checkpoint_bytes(model, detail::read_file(path));
}

} // namespace hystar
