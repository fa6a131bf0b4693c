#pragma once

// Nuclear-norm regularised matrix completion with unpenalised two-way fixed
// effects:
//
//   min_{L, gamma, delta}  (1/|O|) sum_{(u,t) in O} (Y_ut - L_ut - gamma_u - delta_t)^2
//                          + lambda * ||L||_*
//
// Solved by block-coordinate descent. The fixed-effect block is minimised
// exactly by alternating observed-cell means; the L block takes one
// majorise-minimise step (fill unobserved cells with the current L, then
// soft-threshold the singular values at lambda * |O| / 2). Both steps never
// increase the objective.

#include "panelmc/svd.hpp"
#include "panelmc/types.hpp"

#include <filesystem>
#include <vector>

namespace panelmc {

struct FitOptions {
  int max_iter = 500;
  double tol = 1e-6;         // relative objective change
  double inner_tol = 1e-8;   // fixed-effect sweep
  int max_inner = 1000;
  bool fixed_effects = true;
  bool parallel = true;      // OpenMP kernels; results are identical either way
  SvdOptions svd;
};

struct CompletionModel {
  Matrix low_rank;
  Vector row_effects;
  Vector col_effects;
  double lambda = 0.0;
  std::vector<double> trace;  // objective after every outer iteration
  Index rank = 0;
  int iterations = 0;
  bool converged = false;
  double nuclear_norm = 0.0;

  double final_objective() const { return trace.empty() ? 0.0 : trace.back(); }
};

/// Singular-value threshold corresponding to `lambda` for a fit on `n_observed` cells.
inline double shrink_level(double lambda, double n_observed) { return lambda * n_observed / 2.0; }

/// Throws ValidationError on shape mismatch, an all-masked row or column,
/// a non-finite observed value or a negative lambda.
CompletionModel fit(const Matrix& y, const BoolGrid& fit_mask, double lambda, const FitOptions& opts = {},
                    const CompletionModel* warm_start = nullptr);

/// low_rank + row_effects 1' + 1 col_effects'
Matrix predict(const CompletionModel& model);

/// Objective value; the nuclear norm is recomputed from model.low_rank.
double objective(const Matrix& y, const BoolGrid& mask, const CompletionModel& model, double lambda);

/// Smallest lambda that zeroes L when started from the fixed-effect-only fit.
double lambda_max(const Matrix& y, const BoolGrid& fit_mask, const FitOptions& opts = {});

/// `n` geometric points from `lambda_hi` down to `lambda_hi * ratio`.
std::vector<double> lambda_grid(double lambda_hi, int n = 30, double ratio = 1e-4);

/// Clamps to [0,1] and thresholds (>= threshold -> 1).
Matrix binarize(const Matrix& predicted, double threshold = 0.5);

/// low_rank.csv, row_effects.csv, col_effects.csv, meta.json
void write_model_dir(const CompletionModel& model, const std::filesystem::path& dir);
CompletionModel read_model_dir(const std::filesystem::path& dir);

}  // namespace panelmc
