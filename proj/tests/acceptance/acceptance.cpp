// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "panelmc/effects.hpp"
#include "panelmc/mcnnm.hpp"
#include "panelmc/posthoc.hpp"
#include "panelmc/svd.hpp"
#include "panelmc/synth.hpp"
#include "panelmc/tune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace panelmc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix normal_matrix(Index r, Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

BoolGrid covered_mask(Index r, Index c, double missing, std::mt19937_64& rng) {
  std::bernoulli_distribution drop(missing);
  BoolGrid m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = !drop(rng);
  for (Index i = 0; i < r; ++i) m(i, i % c) = true;
  for (Index j = 0; j < c; ++j) m(j % r, j) = true;
  return m;
}

double masked_relative_rmse(const Matrix& pred, const Matrix& truth, const BoolGrid& held) {
  double num = 0.0, den = 0.0;
  for (Index j = 0; j < truth.cols(); ++j)
    for (Index i = 0; i < truth.rows(); ++i)
      if (held(i, j)) {
        num += (pred(i, j) - truth(i, j)) * (pred(i, j) - truth(i, j));
        den += truth(i, j) * truth(i, j);
      }
  return std::sqrt(num / den);
}

double masked_rmse(const Matrix& pred, const Matrix& truth, const BoolGrid& held) {
  double num = 0.0;
  Index n = 0;
  for (Index j = 0; j < truth.cols(); ++j)
    for (Index i = 0; i < truth.rows(); ++i)
      if (held(i, j)) {
        num += (pred(i, j) - truth(i, j)) * (pred(i, j) - truth(i, j));
        ++n;
      }
  return std::sqrt(num / static_cast<double>(n));
}

struct PanelWatet {
  WatetResult estimate;
  double truth = 0.0;
};

// Fit on the fitting cells, then WATET against the estimated and the true counterfactual.
PanelWatet pipeline_watet(const SyntheticPanel& p, std::uint64_t seed) {
  const BoolGrid fm = p.treatment.fit_mask(p.matrix);
  const double treated = static_cast<double>(p.treatment.count());
  TuneOptions o;
  o.seed = mix_seed(seed, 1);
  o.fit.svd.seed = mix_seed(seed, 3);
  const auto r = tune_and_fit(p.matrix.values, fm, treated / (treated + static_cast<double>(fm.count())), o);
  WatetOptions wo;
  wo.bootstrap = 0;
  PanelWatet out;
  auto est = tet(p.matrix, predict(r.model), p.treatment);
  tet_pct(est, previous_period_values(est, p.matrix));
  out.estimate = watet(est, wo);
  auto tru = tet(p.matrix, p.truth.y0, p.treatment);
  tet_pct(tru, previous_period_values(tru, p.matrix));
  out.truth = watet(tru, wo).watet;
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PANELMC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome prox_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_real_distribution<double> frac(0.0, 1.2);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const Matrix m = normal_matrix(dim(rng), dim(rng), rng, 3.0);
    const double threshold = frac(rng) * full_svd(m).singular(0);
    const Matrix a = soft_threshold(full_svd(m), threshold).low_rank;
    const Matrix b = oracle_prox(m, threshold);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-10 && s < 10.0, fmt("max abs error %.3e over 1000 matrices, %.2f s", worst, s)};
}

Outcome monotone_descent() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<Index> dim(5, 200);
  std::uniform_int_distribution<Index> rank(1, 5);
  std::uniform_real_distribution<double> missing(0.0, 0.5), scale(0.002, 0.5);
  double worst = -INFINITY;
  int bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = dim(rng), c = dim(rng), r = rank(rng);
    const Matrix y = normal_matrix(n, r, rng) * normal_matrix(r, c, rng) + normal_matrix(n, c, rng, 0.5) +
                     normal_matrix(n, 1, rng, 2.0).replicate(1, c);
    const BoolGrid mask = covered_mask(n, c, missing(rng), rng);
    const auto m = fit(y, mask, lambda_max(y, mask) * scale(rng));
    bool ok = true;
    for (std::size_t t = 1; t < m.trace.size(); ++t) {
      worst = std::max(worst, m.trace[t] - m.trace[t - 1]);
      ok = ok && m.trace[t] <= m.trace[t - 1] + 1e-10;
    }
    bad += !ok;
  }
  return {bad == 0, fmt("%d of 100 traces increased; largest step change %+.3e", bad, worst)};
}

Outcome low_rank_recovery() {
  const auto t0 = Clock::now();
  DgpConfig c;
  c.rows = 300;
  c.keys = 16;
  c.periods = 3;
  c.rank = 3;
  c.noise_rel = 0.01;
  c.missing_fraction = 0.3;
  c.treated_fraction = 0.0;
  c.rule = EffectRule::zero;
  c.seed = 303;
  const auto p = generate(c);
  TuneOptions o;
  o.seed = mix_seed(c.seed, 1);
  o.folds = 3;  // disjoint folds of 30% each: at most three
  const auto r = tune_and_fit(p.matrix.values, p.matrix.observed, c.missing_fraction, o);
  const double rel = masked_relative_rmse(predict(r.model), p.truth.y0, !p.matrix.observed);
  const double s = seconds_since(t0);
  return {rel < 0.05 && s < 60.0, fmt("masked-cell relative RMSE %.4f%% at lambda %.3e, %.2f s", rel * 100.0,
                                      r.cv.lambda_star, s)};
}

// Held-out error is measured against the noise-free counterfactual; the
// ratio against noisy Y(0) is reported alongside.
Outcome fixed_effects_value() {
  int wins = 0;
  double worst = 0.0, noisy_worst = 0.0;
  for (int seed = 1; seed <= 20; ++seed) {
    DgpConfig c;
    c.rows = 200;
    c.keys = 10;
    c.periods = 3;
    c.rank = 2;
    c.row_fe_sd = 30.0;
    c.col_fe_sd = 30.0;
    c.factor_sd = 3.0;
    c.noise_rel = 0.05;
    c.missing_fraction = 0.2;
    c.treated_fraction = 0.0;
    c.rule = EffectRule::zero;
    c.seed = static_cast<std::uint64_t>(4000 + seed);
    const auto p = generate(c);
    const BoolGrid held = !p.matrix.observed;
    TuneOptions o;
    o.seed = mix_seed(c.seed, 1);
    const Matrix with_fe = predict(tune_and_fit(p.matrix.values, p.matrix.observed, 0.2, o).model);
    o.fit.fixed_effects = false;
    const Matrix without = predict(tune_and_fit(p.matrix.values, p.matrix.observed, 0.2, o).model);
    const double ratio = masked_rmse(with_fe, p.truth.signal, held) / masked_rmse(without, p.truth.signal, held);
    const double noisy = masked_rmse(with_fe, p.truth.y0, held) / masked_rmse(without, p.truth.y0, held);
    worst = std::max(worst, ratio);
    noisy_worst = std::max(noisy_worst, noisy);
    wins += ratio <= 0.8;
  }
  return {wins >= 18, fmt("ratio <= 0.8 in %d of 20 seeds (worst %.3f; against noisy Y(0) worst %.3f)", wins, worst,
                          noisy_worst)};
}

Outcome effect_recovery() {
  const auto t0 = Clock::now();
  int hits = 0;
  double worst = 0.0;
  for (int seed = 1; seed <= 50; ++seed) {
    DgpConfig c;  // defaults are the calibration setting
    c.seed = static_cast<std::uint64_t>(seed);
    const auto w = pipeline_watet(generate(c), c.seed);
    const double rel = std::abs(w.estimate.watet - w.truth) / std::abs(w.truth);
    worst = std::max(worst, rel);
    hits += rel <= 0.15;
  }
  const double s = seconds_since(t0);
  return {hits >= 40 && s < 600.0,
          fmt("within 15%% in %d of 50 seeds (worst %.1f%%), %.1f s", hits, worst * 100.0, s)};
}

Outcome placebo_validity() {
  int hits = 0;
  double worst = 0.0;
  for (int seed = 1; seed <= 50; ++seed) {
    DgpConfig c;
    c.rule = EffectRule::zero;
    c.seed = static_cast<std::uint64_t>(6000 + seed);
    const auto w = pipeline_watet(generate(c), c.seed);
    const double z = std::abs(w.estimate.watet) / *w.estimate.weighted_sd;
    worst = std::max(worst, z);
    hits += z < 2.0;
  }
  return {hits >= 45, fmt("|WATET| < 2 weighted SD in %d of 50 seeds (largest ratio %.3f)", hits, worst)};
}

Outcome metric_anchor() {
  const double published = 0.000100858;
  const double si = *scatter_index(7.12126, 7060711.0);
  const double rel = std::abs(si - published) / published;
  return {rel <= 1e-9, fmt("SI %.12g vs %.9g, relative difference %.3e (tolerance 1e-9)", si, published, rel)};
}

Outcome extensive_bookkeeping() {
  std::mt19937_64 rng(808);
  std::bernoulli_distribution coin(0.5), treat(0.3);
  int broken = 0;
  for (int rep = 0; rep < 200; ++rep) {
    OutcomeMatrix m;
    m.flavor = Flavor::extensive;
    const Index n = 30;
    m.values.resize(n, 6);
    m.observed = BoolGrid::Constant(n, 6, true);
    Matrix pred(n, 6);
    for (Index i = 0; i < m.values.size(); ++i) {
      m.values.data()[i] = coin(rng);
      pred.data()[i] = coin(rng);
    }
    for (Index i = 0; i < n; ++i) m.row_labels.push_back("u" + std::to_string(i));
    for (const char* k : {"CA", "DE"})
      for (int t = -2; t <= 0; ++t) m.columns.push_back({k, t});
    TreatmentMask mask;
    mask.treated = BoolGrid::Constant(n, 6, false);
    for (Index i = 0; i < n; ++i)
      if (treat(rng)) mask.treated(i, 2) = mask.treated(i, 5) = true;
    const auto r = extensive_margin(m, pred, mask, count_incumbents(m, "CA"));
    const bool ok = r.attributed_entries + r.attributed_exits + r.zero_effects == r.cells &&
                    r.cells == mask.count() && r.regular_entries + r.regular_exits <= r.zero_effects;
    broken += !ok;
  }
  const auto t = ExtensiveReport::from_counts(263, 123, 294, 106, 0);
  const bool table = t.total_exits() == 386 && t.total_entries() == 400;
  return {broken == 0 && table, fmt("partition held on %d of 200 instances; layout totals %zu/%zu", 200 - broken,
                                    t.total_exits(), t.total_entries())};
}

Outcome regression_oracle() {
  std::mt19937_64 rng(909);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> v(1.0, 100.0);
  std::bernoulli_distribution drop(0.1);
  double worst = 0.0;
  const char* dests[] = {"DE", "US", "GB", "JP", "CN"};
  const char* classes[] = {"I", "II", "III", "IV"};
  for (int rep = 0; rep < 100; ++rep) {
    // diversion design
    std::vector<DiversionObservation> obs;
    const int rows = 30 + rep;
    for (int i = 0; i < rows; ++i) {
      DiversionObservation o;
      o.destination = dests[i % 5];
      o.product_class = classes[(i / 5) % 4];
      o.tet_focus = 5.0 * n(rng);
      o.base_value = v(rng);
      o.tet_destination = 0.3 * o.tet_focus + 0.01 * o.base_value + n(rng);
      obs.push_back(o);
    }
    const auto r = diversion_regression(obs);
    Matrix x(rows, 3);
    Vector y(rows);
    for (int i = 0; i < rows; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = obs[static_cast<std::size_t>(i)].tet_focus;
      x(i, 2) = obs[static_cast<std::size_t>(i)].base_value;
      y(i) = obs[static_cast<std::size_t>(i)].tet_destination;
    }
    const auto o = oracle_ols(x, y);
    for (Index k = 0; k < 3; ++k)
      worst = std::max(worst, std::abs(r.coef(k) - o[static_cast<std::size_t>(k)]) /
                                  std::max(1.0, std::abs(o[static_cast<std::size_t>(k)])));

    // two-way fixed-effects diff-in-diff against the dummy-variable design
    const int units = 6 + rep % 10, periods = 3 + rep % 4;
    std::vector<PanelObservation> panel;
    for (int u = 0; u < units; ++u)
      for (int t = 0; t < periods; ++t) {
        if (u > 0 && t > 0 && drop(rng)) continue;
        const bool d = u % 2 == 0 && t >= periods - 1;
        panel.push_back({"u" + std::to_string(u), t, 0.5 * u + 0.2 * t + (d ? 1.0 : 0.0) + n(rng), d});
      }
    const auto did = diff_in_diff(panel);
    Matrix xd = Matrix::Zero(static_cast<Index>(panel.size()), 1 + units + periods - 1);
    Vector yd(xd.rows());
    for (Index i = 0; i < xd.rows(); ++i) {
      const auto& p = panel[static_cast<std::size_t>(i)];
      xd(i, 0) = p.treated;
      xd(i, 1 + std::stoi(p.unit.substr(1))) = 1.0;
      if (p.period > 0) xd(i, units + p.period) = 1.0;
      yd(i) = p.y;
    }
    worst = std::max(worst, std::abs(did.coef(0) - oracle_ols(xd, yd)[0]) / std::max(1.0, std::abs(did.coef(0))));
  }

  // planted coefficients on noiseless data
  std::vector<DiversionObservation> planted;
  for (int i = 0; i < 200; ++i) {
    DiversionObservation o;
    o.destination = dests[i % 5];
    o.product_class = classes[i % 4];
    o.tet_focus = 10.0 * n(rng);
    o.base_value = v(rng);
    o.tet_destination = 2.0 - 1.0 * o.tet_focus + 0.02 * o.base_value;
    planted.push_back(o);
  }
  const auto r = diversion_regression(planted);
  const double e1 = std::abs(r.coef(1) + 1.0), e2 = std::abs(r.coef(2) - 0.02);
  return {worst <= 1e-8 && e1 <= 1e-9 && e2 <= 1e-9,
          fmt("max relative gap to oracle %.3e over 100+100 fits; planted errors %.2e, %.2e", worst, e1, e2)};
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "panelmc_acceptance_determinism";
  const std::string d = root.string();
  auto pipeline = [&]() {
    fs::remove_all(root);
    fs::create_directories(root);
    int rc = run_cli("--seed 11 synth --rows 80 --keys 6 --periods 5 --missing 0.1 --out " + d + "/synth");
    rc = rc ? rc : run_cli("--seed 11 fit --matrix " + d + "/synth/matrix --treatment " + d +
                           "/synth/treatment --grid-size 10 --out " + d + "/fit");
    rc = rc ? rc : run_cli("--seed 11 effects --matrix " + d + "/synth/matrix --treatment " + d + "/synth/treatment --model " +
                           d + "/fit/model -B 200 --out " + d + "/effects");
    rc = rc ? rc : run_cli("--seed 11 placebo --matrix " + d + "/synth/matrix --treatment " + d +
                           "/synth/treatment --grid-size 10 -B 200 --out " + d + "/placebo");
    rc = rc ? rc : run_cli("--seed 11 report --input " + d + "/fit --input " + d + "/effects --out " + d + "/report");
    return rc;
  };
  const int rc1 = pipeline();
  const auto first = snapshot(root);
  const int rc2 = pipeline();
  const auto second = snapshot(root);
  fs::remove_all(root);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  const bool ok = rc1 == 0 && rc2 == 0 && first.size() == second.size() && differing == 0 && first.size() > 10;
  return {ok, fmt("exit codes %d/%d, %zu artifacts, %zu differ", rc1, rc2, first.size(), differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"prox-oracle", prox_oracle},
      {"monotone-descent", monotone_descent},
      {"low-rank-recovery", low_rank_recovery},
      {"fixed-effects-value", fixed_effects_value},
      {"effect-recovery", effect_recovery},
      {"placebo-validity", placebo_validity},
      {"metric-anchor", metric_anchor},
      {"extensive-bookkeeping", extensive_bookkeeping},
      {"regression-oracle", regression_oracle},
      {"cli-determinism", cli_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %-22s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed ? 1 : 0;
}
