#include "shapemoire/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace shapemoire {

namespace {

constexpr char kMagic[4] = {'S', 'H', 'P', 'M'};

template <class T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw IoError(std::string("checkpoint truncated while reading ") + what);
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
    return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    std::set<std::string> seen;
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        if (name.empty() || name.size() > 0xFFFF) throw ValidationError("checkpoint: bad tensor name length");
        if (!seen.insert(name).second) throw ValidationError("checkpoint: duplicate tensor name " + name);
        if (!tensor.defined() || tensor.rank() > 0xFF) throw ValidationError("checkpoint: bad tensor " + name);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (auto d : tensor.dims()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw IoError("checkpoint: write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("checkpoint: missing SHPM magic");
    }
    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in, "tensor count");
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto len = get_le<std::uint16_t>(in, "name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("checkpoint truncated while reading a name");
        const auto rank = get_le<std::uint8_t>(in, "rank");
        Dims dims(rank);
        for (auto& d : dims) {
            d = get_le<std::uint32_t>(in, "dims");
            if (d == 0) throw ValidationError("checkpoint: zero dim in " + name);
        }
        std::vector<float> values(static_cast<std::size_t>(numel_of(dims)));
        for (auto& v : values) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "tensor data"));
        tensors.push_back({std::move(name), Tensor(std::move(dims), std::move(values))});
    }
    return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("checkpoint not found: " + path.string());
    return read_checkpoint(in);
}

}  // namespace shapemoire
