#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>

namespace panelmc {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Cell {
  Index row = 0;
  Index col = 0;
  auto operator<=>(const Cell&) const = default;
};

/// splitmix64 finaliser; derives independent stream seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace panelmc
