#pragma once

// Post-estimation analytics: revealed comparative advantage, Welch t-tests,
// the two-way fixed-effects diff-in-diff benchmark, the diversion regression
// with one- and two-way clustered errors, and covariate association fits.

#include "panelmc/effects.hpp"
#include "panelmc/ingest.hpp"
#include "panelmc/types.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace panelmc {

struct RegressionResult {
  std::string dependent;
  std::vector<std::string> names;
  Vector coef;
  Vector se_plain;
  std::optional<Vector> se_robust;    // HC1
  std::optional<Vector> se_cluster1;  // first cluster dimension
  std::optional<Vector> se_cluster2;  // two-way
  std::vector<std::string> cluster_dims;
  double r2 = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_dropped = 0;
  std::size_t n_absorbed = 0;  // fixed effects swept out before OLS
  std::vector<std::string> warnings;
};

/// Cluster-robust sandwich (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1 scaled by
/// G/(G-1) * (n-1)/(n-k). Cluster ids are arbitrary integers.
Matrix cluster_covariance(const Matrix& x, const Vector& residuals, const Matrix& xtx_inv, std::span<const long> clusters,
                          Index k_params);

/// Two-way (inclusion-exclusion) covariance V_a + V_b - V_ab.
Matrix two_way_cluster_covariance(const Matrix& x, const Vector& residuals, const Matrix& xtx_inv,
                                  std::span<const long> a, std::span<const long> b, Index k_params);

struct OlsOptions {
  bool robust = false;
  std::vector<long> cluster_a;  // empty: no clustering
  std::vector<long> cluster_b;  // empty: one-way only
  std::string cluster_a_name;
  std::string cluster_b_name;
  Index absorbed = 0;  // extra parameters already swept out of x and y
};

RegressionResult ols(const Matrix& x, const Vector& y, std::vector<std::string> names, const OlsOptions& opts = {});

struct RcaValue {
  double value = 0.0;
  double focus_product = 0.0;  // X_CA,pt
  double focus_total = 0.0;    // X_CA,t
  double world_product = 0.0;  // X_W,pt
  double world_total = 0.0;    // X_W,t
  bool advantage() const { return value > 1.0; }
};

RcaValue rca_from_components(double focus_product, double focus_total, double world_product, double world_total);
RcaValue rca(const AnnualPanel& panel, const std::string& product, const std::string& focus, int period);
/// Every product with world exports in `period`, sorted by id.
std::map<std::string, RcaValue> rca_all(const AnnualPanel& panel, const std::string& focus, int period);

struct WelchResult {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double mean_diff = 0.0;  // mean_a - mean_b
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b);

enum class OutcomeKind { level, binary };
OutcomeKind parse_outcome_kind(const std::string& text);

struct PanelObservation {
  std::string unit;
  int period = 0;
  double y = 0.0;
  bool treated = false;
};

/// y_ut = c_u + g_t + beta_D D_ut + e by two-way within transformation; HC1 SEs.
/// Binary outcomes are a linear probability model.
RegressionResult diff_in_diff(std::span<const PanelObservation> obs, OutcomeKind kind = OutcomeKind::level);

struct DiversionObservation {
  std::string destination;
  std::string product;
  std::string product_class;
  double tet_destination = 0.0;
  double tet_focus = 0.0;
  double base_value = 0.0;
  std::optional<double> elasticity;
};

enum class ElasticitySubset { all, above_median, below_median };
ElasticitySubset parse_subset(const std::string& text);

/// Pairs each treated non-focus cell with the focus-destination effect of the
/// same product and period.
std::vector<DiversionObservation> diversion_observations(const EffectsTable& effects, const std::string& focus,
                                                         const std::map<std::string, double>& elasticity = {});

/// OLS of TET_dest on TET_focus (and the previous-period value) with a constant;
/// plain, country-clustered and country x class two-way clustered SEs.
RegressionResult diversion_regression(std::span<const DiversionObservation> obs,
                                      ElasticitySubset subset = ElasticitySubset::all, bool value_control = true);

struct MarginPoint {
  double x = 0.0;
  double fit = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct MarginResult {
  RegressionResult regression;
  std::vector<MarginPoint> grid;
};

/// y on x with a constant after listwise deletion; x must be present for at
/// least 80% of rows. Predicted margins with 95% CIs at `grid_points` evenly
/// spaced x values.
MarginResult margin_association(std::span<const std::optional<double>> y, std::span<const std::optional<double>> x,
                                int grid_points = 20, const std::string& dependent = "y",
                                const std::string& covariate = "x");

std::string regression_json(const RegressionResult& r);
/// Coefficient rows with SEs in parentheses, one column per model.
std::string regression_table(std::span<const RegressionResult> models);
std::string margins_csv(const MarginResult& m);

}  // namespace panelmc
