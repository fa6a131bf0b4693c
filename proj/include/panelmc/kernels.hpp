#pragma once

// Inner loops of the completion estimator.
//
// Each kernel exists twice: `serial` is the reference, `parallel` splits the
// same work across OpenMP threads. Every output element is accumulated in the
// same order in both, so results agree bit for bit regardless of thread count.

#include "panelmc/types.hpp"

namespace panelmc::kernels {

/// Observed-cell counts per row and per column of a mask.
struct MaskCounts {
  Vector rows;
  Vector cols;
  double total = 0.0;
};

MaskCounts count_mask(const BoolGrid& mask);

namespace serial {

/// gamma_u = mean over observed t of (Y - L - delta)_ut. Returns max |change|.
double update_row_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& row_counts,
                          const Vector& col_effects, Vector& row_effects);

/// delta_t = mean over observed u of (Y - L - gamma)_ut. Returns max |change|.
double update_col_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& col_counts,
                          const Vector& row_effects, Vector& col_effects);

/// target = mask ? Y - gamma - delta : L
void fill_target(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                 const BoolGrid& mask, Matrix& target);

/// Sum over observed cells of (Y - L - gamma - delta)^2.
double masked_sse(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                  const BoolGrid& mask);

}  // namespace serial

namespace parallel {

double update_row_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& row_counts,
                          const Vector& col_effects, Vector& row_effects);
double update_col_effects(const Matrix& y, const Matrix& low_rank, const BoolGrid& mask, const Vector& col_counts,
                          const Vector& row_effects, Vector& col_effects);
void fill_target(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                 const BoolGrid& mask, Matrix& target);
double masked_sse(const Matrix& y, const Matrix& low_rank, const Vector& row_effects, const Vector& col_effects,
                  const BoolGrid& mask);

}  // namespace parallel

/// Worker budget for parallel kernels and fold/bootstrap loops (0 = OpenMP default).
void set_thread_budget(int threads);
int thread_budget();

}  // namespace panelmc::kernels
