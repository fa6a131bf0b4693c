#pragma once

#include "panelmc/mcnnm.hpp"
#include "panelmc/treatment.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace panelmc {

/// K disjoint held-out sets drawn from the fitting cells. Each fold holds out
/// the same share of fitting cells as the treated share of the whole grid.
struct FoldSet {
  int k = 0;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  std::size_t per_fold = 0;
  std::vector<std::vector<Cell>> held_out;
};

/// `fraction` = |M| / (|M| + |O|). Reshuffles up to 100 times if a fold would
/// leave a row or column without training cells, then throws ValidationError.
FoldSet make_folds(const BoolGrid& fit_mask, double fraction, int k, std::uint64_t seed);
FoldSet make_folds(const BoolGrid& fit_mask, const TreatmentMask& treatment, int k, std::uint64_t seed);

struct CvResult {
  std::vector<double> lambdas;              // descending
  std::vector<std::vector<double>> rmse;    // [lambda][fold], NaN when the fit failed
  std::vector<double> mean_rmse;            // NaN when excluded
  std::vector<bool> excluded;               // > 50% failed folds
  std::size_t best = 0;
  double lambda_star = 0.0;
  /// Held-out predictions at lambda*, fold by fold, aligned with FoldSet::held_out.
  std::vector<std::vector<double>> best_predictions;
};

/// Grid must be non-empty and sorted descending. Ties go to the larger lambda.
CvResult cross_validate(const Matrix& y, const BoolGrid& fit_mask, std::span<const double> grid, const FoldSet& folds,
                        const FitOptions& opts = {});

struct Metrics {
  double rmse = 0.0;
  double mean_outcome = 0.0;
  std::optional<double> si;     // rmse / mean * 100
  double q3 = 0.0;
  double y_min = 0.0;
  std::optional<double> nrmse;  // rmse / (q3 - y_min) * 100
  std::size_t n = 0;
};

std::optional<double> scatter_index(double rmse, double mean_outcome);
std::optional<double> normalized_rmse(double rmse, double q3, double y_min);

/// Linear-interpolation quantile (Hyndman-Fan type 7).
double quantile(std::vector<double> values, double p);

Metrics accuracy(const Matrix& predicted, const Matrix& actual, std::span<const Cell> cells);
Metrics accuracy(std::span<const double> predicted, std::span<const double> actual);

struct TuneOptions {
  int folds = 5;
  std::uint64_t seed = 1;
  int grid_size = 30;
  double grid_ratio = 1e-4;
  FitOptions fit;
};

struct TuneResult {
  FoldSet folds;
  CvResult cv;
  Metrics cv_metrics;  // pooled held-out predictions at lambda*
  CompletionModel model;
};

/// Folds, lambda grid, cross-validation and the final fit on every fitting cell.
TuneResult tune_and_fit(const Matrix& y, const BoolGrid& fit_mask, double fraction, const TuneOptions& opts = {});

std::string cv_report_csv(const CvResult& cv);
std::string cv_summary_json(const CvResult& cv, const Metrics& metrics);

}  // namespace panelmc
