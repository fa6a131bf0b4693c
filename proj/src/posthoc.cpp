#include "panelmc/posthoc.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"
#include "panelmc/tune.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

namespace panelmc {

using nlohmann::json;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<long> dense_ids(const std::vector<std::string>& labels) {
  std::map<std::string, long> ids;
  std::vector<long> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(ids.emplace(l, static_cast<long>(ids.size())).first->second);
  return out;
}

std::size_t distinct(std::span<const long> ids) { return std::set<long>(ids.begin(), ids.end()).size(); }

Vector sqrt_diag(const Matrix& v, std::vector<std::string>& warnings, const std::string& what) {
  Vector out(v.rows());
  for (Index i = 0; i < v.rows(); ++i) {
    if (v(i, i) < 0.0) {
      out(i) = kNaN;
      warnings.push_back(what + ": negative variance for coefficient " + std::to_string(i));
    } else {
      out(i) = std::sqrt(v(i, i));
    }
  }
  return out;
}

double t_quantile(double df, double p) {
  boost::math::students_t dist(df);
  return boost::math::quantile(dist, p);
}

}  // namespace

Matrix cluster_covariance(const Matrix& x, const Vector& residuals, const Matrix& xtx_inv, std::span<const long> clusters,
                          Index k_params) {
  const Index n = x.rows();
  const Index k = x.cols();
  std::map<long, Vector> scores;
  for (Index i = 0; i < n; ++i) {
    auto [it, inserted] = scores.try_emplace(clusters[static_cast<std::size_t>(i)], Vector::Zero(k));
    it->second += x.row(i).transpose() * residuals(i);
  }
  Matrix meat = Matrix::Zero(k, k);
  for (const auto& [g, s] : scores) meat += s * s.transpose();
  const double groups = static_cast<double>(scores.size());
  const double nn = static_cast<double>(n);
  const double factor = groups / (groups - 1.0) * (nn - 1.0) / (nn - static_cast<double>(k_params));
  return factor * xtx_inv * meat * xtx_inv;
}

Matrix two_way_cluster_covariance(const Matrix& x, const Vector& residuals, const Matrix& xtx_inv,
                                  std::span<const long> a, std::span<const long> b, Index k_params) {
  std::vector<std::string> pair_labels;
  pair_labels.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) pair_labels.push_back(std::to_string(a[i]) + ":" + std::to_string(b[i]));
  const auto ab = dense_ids(pair_labels);
  return cluster_covariance(x, residuals, xtx_inv, a, k_params) + cluster_covariance(x, residuals, xtx_inv, b, k_params) -
         cluster_covariance(x, residuals, xtx_inv, ab, k_params);
}

RegressionResult ols(const Matrix& x, const Vector& y, std::vector<std::string> names, const OlsOptions& opts) {
  const Index n = x.rows();
  const Index k = x.cols();
  if (y.size() != n) throw ValidationError("regression: y and X row counts differ");
  if (static_cast<Index>(names.size()) != k) throw ValidationError("regression: one name per column required");
  const Index k_total = k + opts.absorbed;
  if (n <= k_total) throw ValidationError("regression: need more observations than parameters");

  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < k) throw ValidationError("regression: design matrix is rank deficient");
  RegressionResult r;
  r.names = std::move(names);
  r.n_obs = static_cast<std::size_t>(n);
  r.n_absorbed = static_cast<std::size_t>(opts.absorbed);
  r.coef = qr.solve(y);

  const Matrix upper = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  const Matrix r_inv = upper.template triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
  const Matrix xtx_inv = qr.colsPermutation() * (r_inv * r_inv.transpose()) * qr.colsPermutation().transpose();

  const Vector e = y - x * r.coef;
  const double ssr = e.squaredNorm();
  const double dof = static_cast<double>(n - k_total);
  r.se_plain = sqrt_diag(xtx_inv * (ssr / dof), r.warnings, "plain");
  const double ybar = y.mean();
  const double sst = (y.array() - ybar).square().sum();
  r.r2 = sst > 0.0 ? 1.0 - ssr / sst : 0.0;

  if (opts.robust) {
    Matrix meat = x.transpose() * e.array().square().matrix().asDiagonal() * x;
    const Matrix v = (static_cast<double>(n) / dof) * xtx_inv * meat * xtx_inv;
    r.se_robust = sqrt_diag(v, r.warnings, "HC1");
  }
  if (!opts.cluster_a.empty()) {
    if (opts.cluster_a.size() != static_cast<std::size_t>(n)) throw ValidationError("cluster ids must align with rows");
    r.cluster_dims.push_back(opts.cluster_a_name);
    if (distinct(opts.cluster_a) < 2) {
      r.warnings.push_back("fewer than 2 clusters in " + opts.cluster_a_name + ": clustered SEs omitted");
    } else {
      r.se_cluster1 = sqrt_diag(cluster_covariance(x, e, xtx_inv, opts.cluster_a, k_total), r.warnings,
                                "cluster " + opts.cluster_a_name);
    }
    if (!opts.cluster_b.empty()) {
      if (opts.cluster_b.size() != static_cast<std::size_t>(n)) throw ValidationError("cluster ids must align with rows");
      r.cluster_dims.push_back(opts.cluster_b_name);
      if (distinct(opts.cluster_a) < 2 || distinct(opts.cluster_b) < 2) {
        r.warnings.push_back("fewer than 2 clusters in a dimension: two-way clustered SEs omitted");
      } else {
        r.se_cluster2 = sqrt_diag(two_way_cluster_covariance(x, e, xtx_inv, opts.cluster_a, opts.cluster_b, k_total),
                                  r.warnings, "two-way cluster");
      }
    }
  }
  return r;
}

RcaValue rca_from_components(double focus_product, double focus_total, double world_product, double world_total) {
  if (!(world_product > 0.0)) throw ValidationError("RCA undefined: product has no world exports");
  if (!(focus_total > 0.0) || !(world_total > 0.0)) throw ValidationError("RCA undefined: zero total exports");
  if (focus_product < 0.0) throw ValidationError("RCA: negative flow");
  RcaValue v{0.0, focus_product, focus_total, world_product, world_total};
  v.value = (focus_product / focus_total) / (world_product / world_total);
  return v;
}

RcaValue rca(const AnnualPanel& panel, const std::string& product, const std::string& focus, int period) {
  double fp = 0.0, ft = 0.0, wp = 0.0, wt = 0.0;
  for (const auto& [k, v] : panel.cells) {
    if (k.period != period) continue;
    wt += v;
    if (k.product == product) wp += v;
    if (k.destination == focus) {
      ft += v;
      if (k.product == product) fp += v;
    }
  }
  return rca_from_components(fp, ft, wp, wt);
}

std::map<std::string, RcaValue> rca_all(const AnnualPanel& panel, const std::string& focus, int period) {
  std::map<std::string, double> fp, wp;
  double ft = 0.0, wt = 0.0;
  for (const auto& [k, v] : panel.cells) {
    if (k.period != period) continue;
    wt += v;
    wp[k.product] += v;
    if (k.destination == focus) {
      ft += v;
      fp[k.product] += v;
    }
  }
  std::map<std::string, RcaValue> out;
  for (const auto& [p, w] : wp)
    if (w > 0.0) out[p] = rca_from_components(fp.count(p) ? fp.at(p) : 0.0, ft, w, wt);
  return out;
}

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("Welch t-test needs at least two observations per sample");
  auto moments = [](std::span<const double> s) {
    double m = 0.0;
    for (double v : s) m += v;
    m /= static_cast<double>(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(s.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  WelchResult r;
  r.mean_a = ma;
  r.mean_b = mb;
  r.mean_diff = ma - mb;
  const double qa = va / na, qb = vb / nb;
  const double se2 = qa + qb;
  if (se2 == 0.0) {
    r.df = na + nb - 2.0;
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = r.mean_diff > 0 ? INFINITY : -INFINITY;
      r.p = 0.0;
    }
    return r;
  }
  r.t = r.mean_diff / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

OutcomeKind parse_outcome_kind(const std::string& text) {
  if (text == "level") return OutcomeKind::level;
  if (text == "binary") return OutcomeKind::binary;
  throw ValidationError("unknown outcome kind '" + text + "' (expected level|binary)");
}

RegressionResult diff_in_diff(std::span<const PanelObservation> obs, OutcomeKind kind) {
  std::vector<std::string> unit_labels, period_labels;
  bool any_treated = false, any_control = false;
  for (const auto& o : obs) {
    if (!std::isfinite(o.y)) throw ValidationError("diff-in-diff: non-finite outcome for unit " + o.unit);
    if (kind == OutcomeKind::binary && o.y != 0.0 && o.y != 1.0)
      throw ValidationError("diff-in-diff: binary outcome must be 0/1");
    unit_labels.push_back(o.unit);
    period_labels.push_back(std::to_string(o.period));
    any_treated = any_treated || o.treated;
    any_control = any_control || !o.treated;
  }
  const auto units = dense_ids(unit_labels);
  const auto periods = dense_ids(period_labels);
  const auto n_units = distinct(units);
  const auto n_periods = distinct(periods);
  if (n_units < 2 || n_periods < 2) throw ValidationError("diff-in-diff needs at least two units and two periods");
  if (!any_treated || !any_control) throw ValidationError("diff-in-diff: treatment indicator has no variation");

  const auto n = static_cast<Index>(obs.size());
  Matrix z(n, 2);  // columns: y, D
  for (Index i = 0; i < n; ++i) {
    z(i, 0) = obs[static_cast<std::size_t>(i)].y;
    z(i, 1) = obs[static_cast<std::size_t>(i)].treated ? 1.0 : 0.0;
  }
  // Alternating projections onto the unit and period dummy spaces.
  auto sweep = [&](const std::vector<long>& ids, std::size_t groups) {
    Matrix sums = Matrix::Zero(static_cast<Index>(groups), 2);
    Vector counts = Vector::Zero(static_cast<Index>(groups));
    for (Index i = 0; i < n; ++i) {
      sums.row(ids[static_cast<std::size_t>(i)]) += z.row(i);
      counts(ids[static_cast<std::size_t>(i)]) += 1.0;
    }
    double change = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto g = ids[static_cast<std::size_t>(i)];
      const Eigen::RowVector2d m = sums.row(g) / counts(g);
      change = std::max(change, m.cwiseAbs().maxCoeff());
      z.row(i) -= m;
    }
    return change;
  };
  const double scale = 1.0 + z.cwiseAbs().maxCoeff();
  for (int it = 0; it < 100000; ++it) {
    const double c = std::max(sweep(units, n_units), sweep(periods, n_periods));
    if (c < 1e-14 * scale) break;
  }
  if (z.col(1).squaredNorm() < 1e-12 * static_cast<double>(n))
    throw ValidationError("diff-in-diff: no within variation in the treatment indicator");

  OlsOptions o;
  o.robust = true;
  o.absorbed = static_cast<Index>(n_units + n_periods - 1);
  RegressionResult r = ols(z.col(1), z.col(0), {"D"}, o);
  r.dependent = kind == OutcomeKind::binary ? "Pr(export) (LPM)" : "export value";
  return r;
}

ElasticitySubset parse_subset(const std::string& text) {
  if (text == "all") return ElasticitySubset::all;
  if (text == "above") return ElasticitySubset::above_median;
  if (text == "below") return ElasticitySubset::below_median;
  throw ValidationError("unknown elasticity subset '" + text + "' (expected all|above|below)");
}

std::vector<DiversionObservation> diversion_observations(const EffectsTable& effects, const std::string& focus,
                                                         const std::map<std::string, double>& elasticity) {
  std::map<std::pair<std::string, int>, double> focus_tet;
  for (const auto& r : effects.rows)
    if (r.key == focus) focus_tet[{r.unit, r.period}] = r.tet_level;
  if (focus_tet.empty()) throw ValidationError("effects table has no treated cells for " + focus);
  std::vector<DiversionObservation> out;
  for (const auto& r : effects.rows) {
    if (r.key == focus) continue;
    auto it = focus_tet.find({r.unit, r.period});
    if (it == focus_tet.end()) continue;
    DiversionObservation o;
    o.destination = r.key;
    o.product = r.product.empty() ? r.unit : r.product;
    o.product_class = r.product_class;
    o.tet_destination = r.tet_level;
    o.tet_focus = it->second;
    o.base_value = r.base ? *r.base : kNaN;
    auto e = elasticity.find(o.product);
    if (e != elasticity.end()) o.elasticity = e->second;
    out.push_back(std::move(o));
  }
  return out;
}

RegressionResult diversion_regression(std::span<const DiversionObservation> obs, ElasticitySubset subset,
                                      bool value_control) {
  std::vector<const DiversionObservation*> sample;
  std::size_t dropped = 0;
  for (const auto& o : obs) {
    const bool complete = std::isfinite(o.tet_destination) && std::isfinite(o.tet_focus) &&
                          (!value_control || std::isfinite(o.base_value)) &&
                          (subset == ElasticitySubset::all || o.elasticity.has_value());
    if (complete) {
      sample.push_back(&o);
    } else {
      ++dropped;
    }
  }
  if (subset != ElasticitySubset::all) {
    std::vector<double> e;
    for (const auto* o : sample) e.push_back(*o->elasticity);
    if (e.empty()) throw ValidationError("diversion: no observation carries an elasticity");
    const double median = quantile(e, 0.5);
    std::vector<const DiversionObservation*> kept;
    for (const auto* o : sample) {
      const bool above = *o->elasticity > median;
      if (above == (subset == ElasticitySubset::above_median)) kept.push_back(o);
    }
    sample = std::move(kept);
  }
  const auto n = static_cast<Index>(sample.size());
  const Index k = value_control ? 3 : 2;
  Matrix x(n, k);
  Vector y(n);
  std::vector<std::string> dest, cls;
  for (Index i = 0; i < n; ++i) {
    const auto* o = sample[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = o->tet_focus;
    if (value_control) x(i, 2) = o->base_value;
    y(i) = o->tet_destination;
    dest.push_back(o->destination);
    cls.push_back(o->product_class);
  }
  OlsOptions opts;
  opts.cluster_a = dense_ids(dest);
  opts.cluster_a_name = "country";
  opts.cluster_b = dense_ids(cls);
  opts.cluster_b_name = "product_class";
  std::vector<std::string> names{"const", "TET_focus"};
  if (value_control) names.emplace_back("value_prev");
  RegressionResult r = ols(x, y, names, opts);
  r.dependent = "TET_destination (levels)";
  r.n_dropped = dropped;
  return r;
}

MarginResult margin_association(std::span<const std::optional<double>> y, std::span<const std::optional<double>> x,
                                int grid_points, const std::string& dependent, const std::string& covariate) {
  if (y.size() != x.size()) throw ValidationError("margins: outcome and covariate lengths differ");
  if (y.empty()) throw ValidationError("margins: no observations");
  std::size_t present = 0;
  for (const auto& v : x) present += v.has_value();
  if (static_cast<double>(present) < 0.8 * static_cast<double>(x.size()))
    throw ValidationError("margins: covariate present for fewer than 80% of rows");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (x[i] && y[i] && std::isfinite(*x[i]) && std::isfinite(*y[i])) {
      xs.push_back(*x[i]);
      ys.push_back(*y[i]);
    }
  if (xs.size() < 3) throw ValidationError("margins: fewer than three complete rows");
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  const double x_lo = *lo_it, x_hi = *hi_it;
  if (x_lo == x_hi) throw ValidationError("margins: covariate is constant");

  const auto n = static_cast<Index>(xs.size());
  Matrix design(n, 2);
  Vector yy(n);
  for (Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = xs[static_cast<std::size_t>(i)];
    yy(i) = ys[static_cast<std::size_t>(i)];
  }
  MarginResult out;
  out.regression = ols(design, yy, {"const", covariate});
  out.regression.dependent = dependent;
  out.regression.n_dropped = y.size() - xs.size();

  const Vector e = yy - design * out.regression.coef;
  const double dof = static_cast<double>(n - 2);
  const Matrix v = (design.transpose() * design).inverse() * (e.squaredNorm() / dof);
  const double tq = t_quantile(dof, 0.975);
  const int points = std::max(2, grid_points);
  for (int g = 0; g < points; ++g) {
    const double xv = x_lo + (x_hi - x_lo) * g / (points - 1);
    const Eigen::Vector2d w(1.0, xv);
    const double fit = w.dot(out.regression.coef);
    const double se = std::sqrt(std::max(0.0, w.dot(v * w)));
    out.grid.push_back({xv, fit, fit - tq * se, fit + tq * se});
  }
  return out;
}

namespace {

json vec_json(const std::optional<Vector>& v) {
  if (!v) return nullptr;
  json a = json::array();
  for (Index i = 0; i < v->size(); ++i) a.push_back(std::isfinite((*v)(i)) ? json((*v)(i)) : json(nullptr));
  return a;
}

}  // namespace

std::string regression_json(const RegressionResult& r) {
  json j;
  j["dependent"] = r.dependent;
  j["names"] = r.names;
  j["coef"] = vec_json(std::optional<Vector>(r.coef));
  j["se_plain"] = vec_json(std::optional<Vector>(r.se_plain));
  j["se_robust_hc1"] = vec_json(r.se_robust);
  j["se_cluster_one_way"] = vec_json(r.se_cluster1);
  j["se_cluster_two_way"] = vec_json(r.se_cluster2);
  j["cluster_dims"] = r.cluster_dims;
  j["r2"] = r.r2;
  j["n_obs"] = r.n_obs;
  j["n_dropped"] = r.n_dropped;
  j["n_absorbed_effects"] = r.n_absorbed;
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

std::string regression_table(std::span<const RegressionResult> models) {
  std::vector<std::string> names;
  for (const auto& m : models)
    for (const auto& n : m.names)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  auto pick_se = [](const RegressionResult& m) -> std::pair<const Vector*, std::string> {
    if (m.se_cluster2) return {&*m.se_cluster2, "two-way"};
    if (m.se_cluster1) return {&*m.se_cluster1, "cluster"};
    if (m.se_robust) return {&*m.se_robust, "HC1"};
    return {&m.se_plain, "plain"};
  };
  auto pad = [](const std::string& text, bool left) {
    char buf[128];
    std::snprintf(buf, sizeof buf, left ? "%-16s" : "%14s", text.c_str());
    return std::string(buf);
  };
  auto num = [](const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return std::string(buf);
  };

  std::string out = pad("", true);
  for (std::size_t c = 0; c < models.size(); ++c) out += pad("(" + std::to_string(c + 1) + ")", false);
  out += "\n";
  for (const auto& n : names) {
    std::string coef_row = pad(n, true), se_row = pad("", true);
    for (const auto& m : models) {
      auto it = std::find(m.names.begin(), m.names.end(), n);
      if (it == m.names.end()) {
        coef_row += pad("", false);
        se_row += pad("", false);
        continue;
      }
      const auto idx = static_cast<Index>(it - m.names.begin());
      coef_row += pad(num("%.4g", m.coef(idx)), false);
      const double se = (*pick_se(m).first)(idx);
      se_row += pad(std::isfinite(se) ? "(" + num("%.4g", se) + ")" : "", false);
    }
    out += coef_row + "\n" + se_row + "\n";
  }
  out += pad("N", true);
  for (const auto& m : models) out += pad(std::to_string(m.n_obs), false);
  out += "\n" + pad("R2", true);
  for (const auto& m : models) out += pad(num("%.3f", m.r2), false);
  out += "\n" + pad("SE", true);
  for (const auto& m : models) out += pad(pick_se(m).second, false);
  return out + "\n";
}

std::string margins_csv(const MarginResult& m) {
  std::string text = "x,fit,ci_low,ci_high\n";
  for (const auto& p : m.grid)
    text += csv::format_double(p.x) + "," + csv::format_double(p.fit) + "," + csv::format_double(p.lo) + "," +
            csv::format_double(p.hi) + "\n";
  return text;
}

}  // namespace panelmc
