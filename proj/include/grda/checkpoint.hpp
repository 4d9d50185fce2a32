#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "grda/tensor_io.hpp"
#include "grda/training.hpp"

namespace grda {

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_tensors(const std::vector<NamedTensor>& tensors);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Parses the whole file before returning; nothing is returned on failure.
/// Throws FormatError for corrupt or truncated files and VersionError for a
/// different container version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, then rejects a checkpoint whose parameters do not fit
/// `expected` with a ShapeMismatchError listing every differing tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

/// Empty when the parameters fit `expected`; otherwise one line per difference.
std::string shape_diff(const ModelParams& params, const ModelConfig& expected);

}  // namespace grda
