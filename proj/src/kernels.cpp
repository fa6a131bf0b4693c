#include "panelmc/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace panelmc::kernels {

MaskCounts count_mask(const BoolGrid& mask) {
  MaskCounts c;
  c.rows = mask.cast<double>().rowwise().sum().matrix();
  c.cols = mask.cast<double>().colwise().sum().transpose().matrix();
  c.total = c.rows.sum();
  return c;
}

namespace {

int g_threads = 0;

// Row sums over a band of rows [r0, r1), columns visited in ascending order.
void row_band_sums(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& col_effects, Index r0,
                   Index r1, Vector& sums) {
  for (Index j = 0; j < y.cols(); ++j) {
    const double d = col_effects(j);
    for (Index i = r0; i < r1; ++i)
      if (mask(i, j)) sums(i) += y(i, j) - low_rank(i, j) - d;
  }
}

double finish_rows(const Vector& sums, const Vector& counts, Index r0, Index r1, Vector& effects) {
  double change = 0.0;
  for (Index i = r0; i < r1; ++i) {
    const double next = counts(i) > 0 ? sums(i) / counts(i) : 0.0;
    change = std::max(change, std::abs(next - effects(i)));
    effects(i) = next;
  }
  return change;
}

double col_sum(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& row_effects, Index j) {
  double s = 0.0;
  for (Index i = 0; i < y.rows(); ++i)
    if (mask(i, j)) s += y(i, j) - low_rank(i, j) - row_effects(i);
  return s;
}

double col_sse(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, double d, const BoolGrid& mask,
               Index j) {
  double s = 0.0;
  for (Index i = 0; i < y.rows(); ++i) {
    if (!mask(i, j)) continue;
    const double e = y(i, j) - low_rank(i, j) - row_effects(i) - d;
    s += e * e;
  }
  return s;
}

constexpr Index kRowBand = 64;

}  // namespace

void set_thread_budget(int threads) {
  g_threads = std::max(0, threads);
  if (g_threads > 0) omp_set_num_threads(g_threads);
}

int thread_budget() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

namespace serial {

double update_row_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& row_counts,
                          const Vector& col_effects, Vector& row_effects) {
  Vector sums = Vector::Zero(y.rows());
  row_band_sums(y, low_rank, mask, col_effects, 0, y.rows(), sums);
  return finish_rows(sums, row_counts, 0, y.rows(), row_effects);
}

double update_col_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& col_counts,
                          const Vector& row_effects, Vector& col_effects) {
  double change = 0.0;
  for (Index j = 0; j < y.cols(); ++j) {
    const double s = col_sum(y, low_rank, mask, row_effects, j);
    const double next = col_counts(j) > 0 ? s / col_counts(j) : 0.0;
    change = std::max(change, std::abs(next - col_effects(j)));
    col_effects(j) = next;
  }
  return change;
}

void fill_target(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                 const BoolGrid& mask, Matrix& target) {
  target.resize(y.rows(), y.cols());
  for (Index j = 0; j < y.cols(); ++j)
    for (Index i = 0; i < y.rows(); ++i)
      target(i, j) = mask(i, j) ? y(i, j) - row_effects(i) - col_effects(j) : low_rank(i, j);
}

double masked_sse(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                  const BoolGrid& mask) {
  double total = 0.0;
  for (Index j = 0; j < y.cols(); ++j) total += col_sse(y, low_rank, row_effects, col_effects(j), mask, j);
  return total;
}

}  // namespace serial

namespace parallel {

double update_row_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& row_counts,
                          const Vector& col_effects, Vector& row_effects) {
  const Index n = y.rows();
  const Index bands = (n + kRowBand - 1) / kRowBand;
  Vector sums = Vector::Zero(n);
  Vector band_change = Vector::Zero(bands);
#pragma omp parallel for schedule(static)
  for (Index b = 0; b < bands; ++b) {
    const Index r0 = b * kRowBand;
    const Index r1 = std::min(n, r0 + kRowBand);
    row_band_sums(y, low_rank, mask, col_effects, r0, r1, sums);
    band_change(b) = finish_rows(sums, row_counts, r0, r1, row_effects);
  }
  return bands ? band_change.maxCoeff() : 0.0;
}

double update_col_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& col_counts,
                          const Vector& row_effects, Vector& col_effects) {
  const Index c = y.cols();
  Vector change = Vector::Zero(c);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < c; ++j) {
    const double s = col_sum(y, low_rank, mask, row_effects, j);
    const double next = col_counts(j) > 0 ? s / col_counts(j) : 0.0;
    change(j) = std::abs(next - col_effects(j));
    col_effects(j) = next;
  }
  return c ? change.maxCoeff() : 0.0;
}

void fill_target(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                 const BoolGrid& mask, Matrix& target) {
  target.resize(y.rows(), y.cols());
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < y.cols(); ++j)
    for (Index i = 0; i < y.rows(); ++i)
      target(i, j) = mask(i, j) ? y(i, j) - row_effects(i) - col_effects(j) : low_rank(i, j);
}

double masked_sse(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                  const BoolGrid& mask) {
  Vector per_col(y.cols());
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < y.cols(); ++j) per_col(j) = col_sse(y, low_rank, row_effects, col_effects(j), mask, j);
  double total = 0.0;
  for (Index j = 0; j < y.cols(); ++j) total += per_col(j);
  return total;
}

}  // namespace parallel

}  // namespace panelmc::kernels
