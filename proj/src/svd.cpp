#include "panelmc/svd.hpp"

#include "panelmc/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <random>

namespace panelmc {

SvdTriple full_svd(const Matrix& m) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD failed to converge");
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

SvdTriple randomized_svd(const Matrix& m, Index rank, Index oversample, int power_iterations, std::uint64_t seed) {
  const Index limit = std::min(m.rows(), m.cols());
  const Index probes = std::min(limit, rank + oversample);
  if (probes <= 0) return {Matrix(m.rows(), 0), Vector(0), Matrix(m.cols(), 0)};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix omega(m.cols(), probes);
  for (Index j = 0; j < probes; ++j)
    for (Index i = 0; i < m.cols(); ++i) omega(i, j) = normal(rng);

  Eigen::HouseholderQR<Matrix> qr(m * omega);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), probes);
  for (int it = 0; it < power_iterations; ++it) {
    Eigen::HouseholderQR<Matrix> qz(m.transpose() * q);
    Matrix z = qz.householderQ() * Matrix::Identity(m.cols(), probes);
    Eigen::HouseholderQR<Matrix> qy(m * z);
    q = qy.householderQ() * Matrix::Identity(m.rows(), probes);
  }
  const Matrix b = q.transpose() * m;  // probes x C
  Eigen::BDCSVD<Matrix> small(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (small.info() != Eigen::Success) throw NumericalError("SVD failed to converge");
  const Index keep = std::min(rank, probes);
  return {(q * small.matrixU()).leftCols(keep), small.singularValues().head(keep), small.matrixV().leftCols(keep)};
}

ShrunkMatrix soft_threshold(const SvdTriple& svd, double threshold) {
  if (!(threshold >= 0.0)) throw ValidationError("soft-threshold level must be nonnegative");
  ShrunkMatrix out;
  Index r = 0;
  while (r < svd.singular.size() && svd.singular(r) > threshold) ++r;
  out.rank = r;
  out.singular = (svd.singular.head(r).array() - threshold).matrix();
  out.nuclear_norm = out.singular.sum();
  out.low_rank = svd.left.leftCols(r) * out.singular.asDiagonal() * svd.right.leftCols(r).transpose();
  if (r == 0) out.low_rank = Matrix::Zero(svd.left.rows(), svd.right.rows());
  return out;
}

ShrunkMatrix singular_value_shrink(const Matrix& m, double threshold, const SvdOptions& opts, Index rank_hint) {
  const Index limit = std::min(m.rows(), m.cols());
  if (limit <= opts.full_threshold) return soft_threshold(full_svd(m), threshold);
  Index k = std::max<Index>(1, rank_hint + 1);
  std::uint64_t seed = opts.seed;
  while (true) {
    if (k + opts.oversample >= limit) return soft_threshold(full_svd(m), threshold);
    SvdTriple t = randomized_svd(m, k, opts.oversample, opts.power_iterations, seed++);
    if (t.singular.size() < k || t.singular(k - 1) <= threshold) return soft_threshold(t, threshold);
    k *= 2;
  }
}

}  // namespace panelmc
