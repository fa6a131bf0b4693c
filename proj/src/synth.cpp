#include "panelmc/synth.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace panelmc {

std::string to_string(EffectRule r) {
  switch (r) {
    case EffectRule::zero: return "zero";
    case EffectRule::constant: return "constant";
    case EffectRule::proportional: return "proportional";
  }
  return "zero";
}

EffectRule parse_effect_rule(const std::string& text) {
  if (text == "zero") return EffectRule::zero;
  if (text == "constant") return EffectRule::constant;
  if (text == "proportional") return EffectRule::proportional;
  throw ValidationError("unknown effect rule '" + text + "' (expected zero|constant|proportional)");
}

void DgpConfig::validate() const {
  if (rows < 2 || keys < 1) throw ValidationError("synth: need at least 2 rows and 1 key");
  if (periods < 2 || post_periods < 1 || post_periods >= periods)
    throw ValidationError("synth: need 1 <= post_periods < periods");
  if (rank < 0 || rank > std::min(rows, cols())) throw ValidationError("synth: rank must lie in [0, min(N, C)]");
  auto fraction_ok = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!fraction_ok(missing_fraction) || !fraction_ok(treated_fraction))
    throw ValidationError("synth: fractions must lie in [0, 1)");
  if (row_fe_sd < 0 || col_fe_sd < 0 || factor_sd < 0 || noise_rel < 0)
    throw ValidationError("synth: scales must be non-negative");
  if (!std::isfinite(effect)) throw ValidationError("synth: effect must be finite");
}

namespace {

std::string padded(const char* prefix, Index i, Index n) {
  const int width = static_cast<int>(std::to_string(std::max<Index>(n - 1, 0)).size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*ld", prefix, width, static_cast<long>(i));
  return buf;
}

}  // namespace

SyntheticPanel generate(const DgpConfig& cfg) {
  cfg.validate();
  const Index n = cfg.rows;
  const Index c = cfg.cols();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Index r, Index k, double sd) {
    Matrix m(r, k);
    for (Index j = 0; j < k; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = sd * normal(rng);
    return m;
  };

  const Vector gamma = draw(n, 1, cfg.row_fe_sd);
  const Vector delta = draw(c, 1, cfg.col_fe_sd);
  Matrix signal = Matrix::Zero(n, c);
  if (cfg.rank > 0) {
    const Matrix u = draw(n, cfg.rank, 1.0);
    const Matrix v = draw(c, cfg.rank, 1.0);
    signal = u * v.transpose() * (cfg.factor_sd / std::sqrt(static_cast<double>(cfg.rank)));
  }
  signal.colwise() += gamma;
  signal.rowwise() += delta.transpose();
  signal.array() += cfg.baseline;

  SyntheticPanel out;
  auto& truth = out.truth;
  const double mean = signal.mean();
  truth.signal_sd = std::sqrt((signal.array() - mean).square().mean());
  truth.noise_sd = cfg.noise_rel * truth.signal_sd;
  truth.signal = signal;
  truth.y0 = signal;
  if (truth.noise_sd > 0.0) truth.y0 += draw(n, c, truth.noise_sd);

  // Treated rows take every post-period column.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_treated = static_cast<Index>(std::llround(cfg.treated_fraction * static_cast<double>(n)));
  if (n_treated >= n) throw ValidationError("synth: treated fraction leaves no control rows");
  if (cfg.treated_fraction > 0.0 && n_treated == 0) throw ValidationError("synth: treated fraction rounds to zero rows");
  std::vector<Index> treated_rows(order.begin(), order.begin() + n_treated);
  std::sort(treated_rows.begin(), treated_rows.end());

  auto& m = out.matrix;
  m.layout = "synthetic";
  m.flavor = Flavor::intensive;
  const int first_period = cfg.post_periods - cfg.periods;
  for (Index i = 0; i < n; ++i) m.row_labels.push_back(padded("u", i, n));
  for (Index k = 0; k < cfg.keys; ++k)
    for (int p = first_period; p < cfg.post_periods; ++p) m.columns.push_back({padded("k", k, cfg.keys), p});

  auto& t = out.treatment;
  t.tau = 0;
  t.treated = BoolGrid::Constant(n, c, false);
  for (Index i : treated_rows) {
    t.treated_units.push_back(m.row_labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < c; ++j)
      if (m.columns[static_cast<std::size_t>(j)].period >= 0) t.treated(i, j) = true;
  }

  const double y0_mean = truth.y0.mean();
  truth.effect = Matrix::Zero(n, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < n; ++i) {
      if (!t.treated(i, j)) continue;
      switch (cfg.rule) {
        case EffectRule::zero: break;
        case EffectRule::constant: truth.effect(i, j) = cfg.effect_relative ? cfg.effect * y0_mean : cfg.effect; break;
        case EffectRule::proportional: truth.effect(i, j) = cfg.effect * truth.y0(i, j); break;
      }
    }
  truth.y1 = truth.y0 + truth.effect;

  // Missing cells among the fitting cells, never emptying a row or column.
  m.observed = BoolGrid::Constant(n, c, true);
  std::vector<Cell> candidates;
  std::vector<Index> row_left(static_cast<std::size_t>(n), 0), col_left(static_cast<std::size_t>(c), 0);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < n; ++i)
      if (!t.treated(i, j)) {
        candidates.push_back({i, j});
        ++row_left[static_cast<std::size_t>(i)];
        ++col_left[static_cast<std::size_t>(j)];
      }
  for (Index i = 0; i < n; ++i)
    if (row_left[static_cast<std::size_t>(i)] == 0) throw ValidationError("synth: a row has no untreated cell");
  const auto n_missing =
      static_cast<std::size_t>(std::llround(cfg.missing_fraction * static_cast<double>(n * c)));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::size_t removed = 0;
  for (const auto& cell : candidates) {
    if (removed == n_missing) break;
    auto& rl = row_left[static_cast<std::size_t>(cell.row)];
    auto& cl = col_left[static_cast<std::size_t>(cell.col)];
    if (rl <= 1 || cl <= 1) continue;
    --rl;
    --cl;
    m.observed(cell.row, cell.col) = false;
    ++removed;
  }
  if (removed < n_missing) throw ValidationError("synth: missing fraction is infeasible with full row/column coverage");

  m.values = truth.y1;
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < n; ++i)
      if (!m.observed(i, j)) m.values(i, j) = 0.0;
  return out;
}

std::string truth_csv(const SyntheticPanel& p) {
  std::string text = "unit,key,period,y0,effect,y1,treated,observed\n";
  const auto& m = p.matrix;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const auto& col = m.columns[static_cast<std::size_t>(j)];
      text += m.row_labels[static_cast<std::size_t>(i)] + "," + col.key + "," + std::to_string(col.period) + "," +
              csv::format_double(p.truth.y0(i, j)) + "," + csv::format_double(p.truth.effect(i, j)) + "," +
              csv::format_double(p.truth.y1(i, j)) + "," + (p.treatment.treated(i, j) ? "1" : "0") + "," +
              (m.observed(i, j) ? "1" : "0") + "\n";
    }
  return text;
}

std::string dgp_json(const DgpConfig& cfg, const GroundTruth& truth) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["rows"] = cfg.rows;
  j["keys"] = cfg.keys;
  j["periods"] = cfg.periods;
  j["post_periods"] = cfg.post_periods;
  j["rank"] = cfg.rank;
  j["baseline"] = cfg.baseline;
  j["row_fe_sd"] = cfg.row_fe_sd;
  j["col_fe_sd"] = cfg.col_fe_sd;
  j["factor_sd"] = cfg.factor_sd;
  j["noise_rel"] = cfg.noise_rel;
  j["missing_fraction"] = cfg.missing_fraction;
  j["treated_fraction"] = cfg.treated_fraction;
  j["rule"] = to_string(cfg.rule);
  j["effect"] = cfg.effect;
  j["effect_relative"] = cfg.effect_relative;
  j["seed"] = cfg.seed;
  j["noise_distribution"] = "gaussian";
  j["factor_distribution"] = "gaussian";
  j["signal_sd"] = truth.signal_sd;
  j["noise_sd"] = truth.noise_sd;
  return j.dump(2) + "\n";
}

std::vector<double> oracle_ols(const Matrix& x, const Vector& y) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto k = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(y.size()) != n) throw ValidationError("oracle_ols: size mismatch");
  if (k == 0 || n < k) throw ValidationError("oracle_ols: rank deficient design");
  std::vector<double> a(k * k, 0.0), b(k, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q <= p; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x(static_cast<Index>(i), static_cast<Index>(p)) * x(static_cast<Index>(i), static_cast<Index>(q));
      a[p * k + q] = a[q * k + p] = s;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(static_cast<Index>(i), static_cast<Index>(p)) * y(static_cast<Index>(i));
    b[p] = s;
  }
  double scale = 0.0;
  for (std::size_t p = 0; p < k; ++p) scale = std::max(scale, a[p * k + p]);

  // A = G G', lower triangular G stored in place.
  std::vector<double> g(k * k, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    double d = a[p * k + p];
    for (std::size_t q = 0; q < p; ++q) d -= g[p * k + q] * g[p * k + q];
    if (!(d > 1e-13 * scale)) throw ValidationError("oracle_ols: rank deficient design");
    g[p * k + p] = std::sqrt(d);
    for (std::size_t r = p + 1; r < k; ++r) {
      double s = a[r * k + p];
      for (std::size_t q = 0; q < p; ++q) s -= g[r * k + q] * g[p * k + q];
      g[r * k + p] = s / g[p * k + p];
    }
  }
  std::vector<double> z(k), beta(k);
  for (std::size_t p = 0; p < k; ++p) {
    double s = b[p];
    for (std::size_t q = 0; q < p; ++q) s -= g[p * k + q] * z[q];
    z[p] = s / g[p * k + p];
  }
  for (std::size_t p = k; p-- > 0;) {
    double s = z[p];
    for (std::size_t q = p + 1; q < k; ++q) s -= g[q * k + p] * beta[q];
    beta[p] = s / g[p * k + p];
  }
  return beta;
}

Matrix oracle_prox(const Matrix& input, double threshold) {
  const bool flip = input.rows() < input.cols();
  const Index rows = flip ? input.cols() : input.rows();
  const Index cols = flip ? input.rows() : input.cols();
  if (cols > 8) throw ValidationError("oracle_prox: smallest dimension must be at most 8");

  std::vector<std::vector<double>> a(static_cast<std::size_t>(cols), std::vector<double>(static_cast<std::size_t>(rows)));
  std::vector<std::vector<double>> v(static_cast<std::size_t>(cols), std::vector<double>(static_cast<std::size_t>(cols), 0.0));
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) a[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = flip ? input(j, i) : input(i, j);
    v[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] = 1.0;
  }

  // Hestenes one-sided Jacobi: rotate column pairs until mutually orthogonal.
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < a.size(); ++p)
      for (std::size_t q = p + 1; q < a.size(); ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < a[p].size(); ++i) {
          alpha += a[p][i] * a[p][i];
          beta += a[q][i] * a[q][i];
          gamma += a[p][i] * a[q][i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t i = 0; i < a[p].size(); ++i) {
          const double ap = a[p][i], aq = a[q][i];
          a[p][i] = cs * ap - sn * aq;
          a[q][i] = sn * ap + cs * aq;
        }
        for (std::size_t i = 0; i < v[p].size(); ++i) {
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = cs * vp - sn * vq;
          v[q][i] = sn * vp + cs * vq;
        }
      }
    if (!rotated) break;
  }

  // Column j of A is sigma_j u_j; v[j] is the matching right singular vector.
  Matrix out = Matrix::Zero(input.rows(), input.cols());
  for (std::size_t j = 0; j < a.size(); ++j) {
    double sigma = 0.0;
    for (double e : a[j]) sigma += e * e;
    sigma = std::sqrt(sigma);
    if (sigma <= threshold || sigma == 0.0) continue;
    const double f = (sigma - threshold) / sigma;
    for (Index i = 0; i < rows; ++i)
      for (Index l = 0; l < cols; ++l) {
        const double e = f * a[j][static_cast<std::size_t>(i)] * v[j][static_cast<std::size_t>(l)];
        if (flip) {
          out(l, i) += e;
        } else {
          out(i, l) += e;
        }
      }
  }
  return out;
}

}  // namespace panelmc
