#include "cmn/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "cmn/errors.hpp"

namespace cmn {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'M', 'N', 'T'};
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void write_le(std::ostream& out, T value) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) throw FormatError("unexpected end of tensor stream");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const auto n = read_u64(in);
    if (n > (1ULL << 32)) throw FormatError("string length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated string");
    return s;
}

void write_tensor(std::ostream& out, const Tensor& t, DType dtype) {
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, static_cast<std::uint32_t>(dtype));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) write_u64(out, e);
    for (Real v : t.data()) {
        if (dtype == DType::Float32) {
            write_le(out, static_cast<float>(v));
        } else {
            write_le(out, static_cast<double>(v));
        }
    }
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) throw FormatError("missing tensor header");
    if (magic != kMagic) throw FormatError("bad tensor magic");
    const auto dtype = read_u32(in);
    if (dtype > 1) throw FormatError("unknown tensor dtype " + std::to_string(dtype));
    const auto rank = read_u32(in);
    if (rank == 0 || rank > kMaxRank) throw FormatError("unsupported tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
        const auto extent = read_u64(in);
        if (extent == 0 || extent > (1ULL << 32)) {
            throw FormatError("implausible tensor extent " + std::to_string(extent));
        }
        e = static_cast<std::size_t>(extent);
        count *= extent;
        if (count > (1ULL << 34)) throw FormatError("tensor payload too large");
    }
    std::vector<Real> data(count);
    for (auto& v : data) {
        v = dtype == 0 ? static_cast<Real>(read_le<float>(in)) : static_cast<Real>(read_le<double>(in));
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write " + path.string());
    write_tensor(out, t, dtype);
    if (!out) throw FileError("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path.string());
    return read_tensor(in);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

}  // namespace cmn
