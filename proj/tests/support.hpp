#pragma once

#include "panelmc/types.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline panelmc::Matrix random_matrix(panelmc::Index r, panelmc::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  panelmc::Matrix m(r, c);
  for (panelmc::Index j = 0; j < c; ++j)
    for (panelmc::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

inline panelmc::BoolGrid random_mask(panelmc::Index r, panelmc::Index c, double missing, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  panelmc::BoolGrid m(r, c);
  for (panelmc::Index j = 0; j < c; ++j)
    for (panelmc::Index i = 0; i < r; ++i) m(i, j) = u(rng) >= missing;
  // keep every row and column identified
  for (panelmc::Index i = 0; i < r; ++i) m(i, i % c) = true;
  for (panelmc::Index j = 0; j < c; ++j) m(j % r, j) = true;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("panelmc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
