#pragma once

// Named-tensor container shared by checkpoints and dataset sample files.
//
//   "GRDA" | u32 version (=1) | u32 count
//   per tensor: u16 name length | name bytes | u8 dtype (0 = f64) | u8 ndim |
//               u32 dims[ndim] | row-major f64 payload
//
// All integers and payload values are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "grda/tensor.hpp"

namespace grda {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::string encode_tensors(const std::vector<NamedTensor>& tensors);

/// Parses a whole container. Throws FormatError on a bad magic, truncation,
/// unknown dtype or trailing bytes, and VersionError on a version mismatch.
std::vector<NamedTensor> decode_tensors(std::string_view bytes);

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, std::string_view name);

}  // namespace grda
