#include "panelmc/tune.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace panelmc {

namespace {

constexpr int kMaxShuffles = 100;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

double rmse_on(const Matrix& predicted, const Matrix& actual, const std::vector<Cell>& cells) {
  double s = 0.0;
  for (const auto& c : cells) {
    const double e = predicted(c.row, c.col) - actual(c.row, c.col);
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(cells.size()));
}

}  // namespace

FoldSet make_folds(const BoolGrid& fit_mask, double fraction, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("cross-validation needs K >= 2 folds");
  if (!(fraction > 0.0) || fraction >= 1.0) throw ValidationError("held-out fraction must lie in (0, 1)");
  std::vector<Cell> cells;
  for (Index j = 0; j < fit_mask.cols(); ++j)
    for (Index i = 0; i < fit_mask.rows(); ++i)
      if (fit_mask(i, j)) cells.push_back({i, j});
  const auto per_fold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cells.size()))));
  if (per_fold * static_cast<std::size_t>(k) > cells.size())
    throw ValidationError("cannot draw " + std::to_string(k) + " disjoint folds of " + std::to_string(per_fold) +
                          " cells from " + std::to_string(cells.size()) + " fitting cells");

  std::vector<int> row_count(static_cast<std::size_t>(fit_mask.rows()), 0);
  std::vector<int> col_count(static_cast<std::size_t>(fit_mask.cols()), 0);
  for (const auto& c : cells) {
    ++row_count[static_cast<std::size_t>(c.row)];
    ++col_count[static_cast<std::size_t>(c.col)];
  }

  for (int attempt = 0; attempt < kMaxShuffles; ++attempt) {
    std::vector<Cell> order = cells;
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> used(order.size(), false);
    FoldSet folds;
    folds.k = k;
    folds.seed = seed;
    folds.fraction = fraction;
    folds.per_fold = per_fold;
    bool ok = true;
    for (int f = 0; f < k && ok; ++f) {
      std::vector<int> row_left = row_count, col_left = col_count;
      std::vector<Cell> held;
      for (std::size_t n = 0; n < order.size() && held.size() < per_fold; ++n) {
        if (used[n]) continue;
        const auto r = static_cast<std::size_t>(order[n].row);
        const auto c = static_cast<std::size_t>(order[n].col);
        if (row_left[r] <= 1 || col_left[c] <= 1) continue;
        --row_left[r];
        --col_left[c];
        used[n] = true;
        held.push_back(order[n]);
      }
      ok = held.size() == per_fold;
      std::sort(held.begin(), held.end(), [](const Cell& a, const Cell& b) {
        return a.col != b.col ? a.col < b.col : a.row < b.row;
      });
      folds.held_out.push_back(std::move(held));
    }
    if (ok) return folds;
  }
  throw ValidationError("no fold assignment keeps every row and column covered after " +
                        std::to_string(kMaxShuffles) + " reshuffles");
}

FoldSet make_folds(const BoolGrid& fit_mask, const TreatmentMask& treatment, int k, std::uint64_t seed) {
  const double m = static_cast<double>(treatment.count());
  const double o = static_cast<double>(fit_mask.count());
  if (m == 0) throw ValidationError("treatment mask is empty: held-out fraction would be zero");
  return make_folds(fit_mask, m / (m + o), k, seed);
}

CvResult cross_validate(const Matrix& y, const BoolGrid& fit_mask, std::span<const double> grid, const FoldSet& folds,
                        const FitOptions& opts) {
  if (grid.empty()) throw ValidationError("lambda grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] < grid[i - 1])) throw ValidationError("lambda grid must be sorted strictly descending");
  const std::size_t n_lambda = grid.size();
  const auto n_folds = folds.held_out.size();

  CvResult cv;
  cv.lambdas.assign(grid.begin(), grid.end());
  cv.rmse.assign(n_lambda, std::vector<double>(n_folds, kNaN));
  std::vector<std::vector<std::vector<double>>> preds(n_lambda, std::vector<std::vector<double>>(n_folds));

#pragma omp parallel for schedule(dynamic)
  for (std::size_t f = 0; f < n_folds; ++f) {
    BoolGrid train = fit_mask;
    for (const auto& c : folds.held_out[f]) train(c.row, c.col) = false;
    CompletionModel warm;
    bool have_warm = false;
    for (std::size_t l = 0; l < n_lambda; ++l) {
      try {
        CompletionModel m = fit(y, train, grid[l], opts, have_warm ? &warm : nullptr);
        const Matrix p = predict(m);
        cv.rmse[l][f] = rmse_on(p, y, folds.held_out[f]);
        auto& out = preds[l][f];
        out.reserve(folds.held_out[f].size());
        for (const auto& c : folds.held_out[f]) out.push_back(p(c.row, c.col));
        warm = std::move(m);
        have_warm = true;
      } catch (const Error&) {
        cv.rmse[l][f] = kNaN;
      }
    }
  }

  cv.mean_rmse.assign(n_lambda, kNaN);
  cv.excluded.assign(n_lambda, false);
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t l = 0; l < n_lambda; ++l) {
    double s = 0.0;
    std::size_t ok = 0;
    for (double r : cv.rmse[l])
      if (std::isfinite(r)) {
        s += r;
        ++ok;
      }
    if (2 * (n_folds - ok) > n_folds || ok == 0) {
      cv.excluded[l] = true;
      continue;
    }
    cv.mean_rmse[l] = s / static_cast<double>(ok);
    if (cv.mean_rmse[l] < best) {
      best = cv.mean_rmse[l];
      cv.best = l;
      found = true;
    }
  }
  if (!found) throw NumericalError("every lambda failed cross-validation");
  cv.lambda_star = cv.lambdas[cv.best];
  cv.best_predictions = std::move(preds[cv.best]);
  return cv;
}

std::optional<double> scatter_index(double rmse, double mean_outcome) {
  if (mean_outcome == 0.0) return std::nullopt;
  return rmse / mean_outcome * 100.0;
}

std::optional<double> normalized_rmse(double rmse, double q3, double y_min) {
  if (q3 == y_min) return std::nullopt;
  return rmse / (q3 - y_min) * 100.0;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Metrics accuracy(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw ValidationError("accuracy: prediction and actual sizes differ");
  if (actual.empty()) throw ValidationError("accuracy: no evaluation cells");
  Metrics m;
  m.n = actual.size();
  double sse = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = predicted[i] - actual[i];
    sse += e * e;
    sum += actual[i];
  }
  m.rmse = std::sqrt(sse / static_cast<double>(m.n));
  m.mean_outcome = sum / static_cast<double>(m.n);
  m.q3 = quantile({actual.begin(), actual.end()}, 0.75);
  m.y_min = *std::min_element(actual.begin(), actual.end());
  m.si = scatter_index(m.rmse, m.mean_outcome);
  m.nrmse = normalized_rmse(m.rmse, m.q3, m.y_min);
  return m;
}

Metrics accuracy(const Matrix& predicted, const Matrix& actual, std::span<const Cell> cells) {
  std::vector<double> p, a;
  for (const auto& c : cells) {
    p.push_back(predicted(c.row, c.col));
    a.push_back(actual(c.row, c.col));
  }
  return accuracy(p, a);
}

TuneResult tune_and_fit(const Matrix& y, const BoolGrid& fit_mask, double fraction, const TuneOptions& opts) {
  TuneResult out;
  out.folds = make_folds(fit_mask, fraction, opts.folds, opts.seed);
  const auto grid = lambda_grid(lambda_max(y, fit_mask, opts.fit), opts.grid_size, opts.grid_ratio);
  out.cv = cross_validate(y, fit_mask, grid, out.folds, opts.fit);

  std::vector<double> pred, actual;
  for (std::size_t f = 0; f < out.folds.held_out.size(); ++f) {
    const auto& p = out.cv.best_predictions[f];
    if (p.size() != out.folds.held_out[f].size()) continue;  // fold failed at lambda*
    for (std::size_t n = 0; n < p.size(); ++n) {
      const auto& c = out.folds.held_out[f][n];
      pred.push_back(p[n]);
      actual.push_back(y(c.row, c.col));
    }
  }
  out.cv_metrics = accuracy(pred, actual);

  // Same warm-started path as the folds, stopping at lambda*.
  CompletionModel warm;
  for (std::size_t l = 0; l <= out.cv.best; ++l) {
    warm = fit(y, fit_mask, grid[l], opts.fit, l ? &warm : nullptr);
  }
  out.model = std::move(warm);
  return out;
}

std::string cv_report_csv(const CvResult& cv) {
  std::string text = "lambda,fold,rmse\n";
  for (std::size_t l = 0; l < cv.lambdas.size(); ++l)
    for (std::size_t f = 0; f < cv.rmse[l].size(); ++f)
      text += csv::format_double(cv.lambdas[l]) + "," + std::to_string(f) + "," + csv::format_double(cv.rmse[l][f]) + "\n";
  return text;
}

std::string cv_summary_json(const CvResult& cv, const Metrics& metrics) {
  nlohmann::json j;
  j["lambda_star"] = cv.lambda_star;
  j["best_index"] = cv.best;
  j["min_mean_rmse"] = cv.mean_rmse[cv.best];
  nlohmann::json path = nlohmann::json::array();
  for (std::size_t l = 0; l < cv.lambdas.size(); ++l) {
    nlohmann::json p;
    p["lambda"] = cv.lambdas[l];
    p["mean_rmse"] = std::isfinite(cv.mean_rmse[l]) ? nlohmann::json(cv.mean_rmse[l]) : nlohmann::json(nullptr);
    p["excluded"] = static_cast<bool>(cv.excluded[l]);
    path.push_back(p);
  }
  j["path"] = path;
  nlohmann::json m;
  m["rmse"] = metrics.rmse;
  m["mean_outcome"] = metrics.mean_outcome;
  m["si"] = metrics.si ? nlohmann::json(*metrics.si) : nlohmann::json(nullptr);
  m["q3"] = metrics.q3;
  m["y_min"] = metrics.y_min;
  m["nrmse"] = metrics.nrmse ? nlohmann::json(*metrics.nrmse) : nlohmann::json(nullptr);
  m["n_cells"] = metrics.n;
  j["metrics"] = m;
  return j.dump(2) + "\n";
}

}  // namespace panelmc
