#pragma once

#include "panelmc/types.hpp"

#include <cstdint>

namespace panelmc {

/// Thin SVD, singular values descending. left: N x r, right: C x r.
struct SvdTriple {
  Matrix left;
  Vector singular;
  Matrix right;
};

struct SvdOptions {
  Index full_threshold = 512;  // min(N, C) at or below this uses the full decomposition
  Index oversample = 10;
  int power_iterations = 2;
  std::uint64_t seed = 0x5eed;
};

SvdTriple full_svd(const Matrix& m);

/// Randomised range finder (Halko et al.) with `rank + oversample` probes,
/// truncated back to `rank` components.
SvdTriple randomized_svd(const Matrix& m, Index rank, Index oversample, int power_iterations, std::uint64_t seed);

/// Result of shrinking singular values by a threshold.
struct ShrunkMatrix {
  Matrix low_rank;
  Vector singular;  // surviving shrunk values, descending
  Index rank = 0;
  double nuclear_norm = 0.0;
};

/// Replaces every sigma_i with max(sigma_i - threshold, 0) and reconstructs.
ShrunkMatrix soft_threshold(const SvdTriple& svd, double threshold);

/// Nuclear-norm proximal step on a dense matrix. Uses the full SVD up to
/// `full_threshold`, otherwise a randomised SVD that grows its rank from
/// `rank_hint` until the smallest computed value falls below the threshold.
ShrunkMatrix singular_value_shrink(const Matrix& m, double threshold, const SvdOptions& opts = {}, Index rank_hint = 0);

}  // namespace panelmc
