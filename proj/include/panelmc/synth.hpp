#pragma once

// Synthetic panels with known potential outcomes, plus brute-force oracles
// that share no code with the estimators they check.

#include "panelmc/outcome_matrix.hpp"
#include "panelmc/treatment.hpp"
#include "panelmc/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace panelmc {

enum class EffectRule { zero, constant, proportional };

std::string to_string(EffectRule r);
EffectRule parse_effect_rule(const std::string& text);

/// Columns are keys x periods (key-major) like the product layout; periods run
/// -(periods - post_periods) .. post_periods - 1 and tau is period 0.
struct DgpConfig {
  Index rows = 300;
  Index keys = 16;
  int periods = 3;
  int post_periods = 1;
  Index rank = 3;
  double baseline = 100.0;    // global level
  double row_fe_sd = 10.0;
  double col_fe_sd = 10.0;
  double factor_sd = 10.0;    // sd of each low-rank entry
  double noise_rel = 0.05;    // noise sd as a fraction of the noise-free signal sd
  double missing_fraction = 0.0;
  double treated_fraction = 0.2;
  EffectRule rule = EffectRule::constant;
  double effect = 0.1;
  bool effect_relative = true;  // constant rule: effect * mean(Y(0)) instead of an absolute amount
  std::uint64_t seed = 1;

  Index cols() const { return keys * periods; }
  /// Throws ValidationError on infeasible settings.
  void validate() const;
};

struct GroundTruth {
  Matrix signal;  // noise-free Y(0)
  Matrix y0;
  Matrix effect;  // zero off the treated cells
  Matrix y1;
  double signal_sd = 0.0;
  double noise_sd = 0.0;
};

struct SyntheticPanel {
  OutcomeMatrix matrix;  // treated cells hold Y(1), unobserved cells hold 0
  TreatmentMask treatment;
  GroundTruth truth;
};

SyntheticPanel generate(const DgpConfig& config);

/// Long format: unit,key,period,y0,effect,y1,treated,observed
std::string truth_csv(const SyntheticPanel& panel);
std::string dgp_json(const DgpConfig& config, const GroundTruth& truth);

/// Normal equations solved by a hand-written Cholesky factorisation.
/// Throws ValidationError when X'X is singular to working precision.
std::vector<double> oracle_ols(const Matrix& x, const Vector& y);

/// Nuclear-norm proximal operator argmin_L 0.5||M - L||_F^2 + threshold ||L||_*
/// through a one-sided Jacobi SVD. min(rows, cols) must be at most 8.
Matrix oracle_prox(const Matrix& m, double threshold);

}  // namespace panelmc
