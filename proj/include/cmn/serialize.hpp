#pragma once

// Binary tensor files.
//
//   bytes 0..3   magic "CMNT"
//   u32          dtype: 0 = float32, 1 = float64
//   u32          rank
//   u64 x rank   extents
//   payload      product(extents) little-endian values, row-major
//
// Feature files use float32. Checkpoints store float64 so a save/load round
// trip reproduces the in-memory parameters exactly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "cmn/tensor.hpp"

namespace cmn {

enum class DType : std::uint32_t { Float32 = 0, Float64 = 1 };

void write_tensor(std::ostream& out, const Tensor& t, DType dtype = DType::Float32);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::Float32);
Tensor load_tensor(const std::filesystem::path& path);

// Little-endian primitives shared by the checkpoint writer.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);

/// 64-bit FNV-1a, used for golden checksums of generated artifacts.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace cmn
