#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace grda {

/// Derives an independent seed for a named stream ("data", "init",
/// "shuffle", ...) from one master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t master, std::string_view stream) {
  return Engine(derive_seed(master, stream));
}

}  // namespace grda
