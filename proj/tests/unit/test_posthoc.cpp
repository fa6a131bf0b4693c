#include "panelmc/error.hpp"
#include "panelmc/posthoc.hpp"
#include "panelmc/synth.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace panelmc;

namespace {

// Meat summed cluster by cluster with explicit loops.
Matrix sandwich_oracle(const Matrix& x, const Vector& u, const std::vector<long>& g, double scale) {
  const Matrix bread = (x.transpose() * x).inverse();
  std::map<long, Vector> score;
  for (Index i = 0; i < x.rows(); ++i) {
    auto& s = score[g[static_cast<std::size_t>(i)]];
    if (s.size() == 0) s = Vector::Zero(x.cols());
    s += x.row(i).transpose() * u(i);
  }
  Matrix meat = Matrix::Zero(x.cols(), x.cols());
  for (const auto& [id, s] : score) meat += s * s.transpose();
  return scale * bread * meat * bread;
}

}  // namespace

TEST_CASE("OLS coefficients match the Cholesky oracle") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix x = testing::random_matrix(50, 4, rng);
    x.col(0).setOnes();
    const Vector y = testing::random_matrix(50, 1, rng);
    const auto r = ols(x, y, {"c", "a", "b", "d"});
    const auto o = oracle_ols(x, y);
    for (Index k = 0; k < 4; ++k) CHECK(r.coef(k) == doctest::Approx(o[static_cast<std::size_t>(k)]).epsilon(1e-10));
  }
}

TEST_CASE("plain and HC1 standard errors") {
  std::mt19937_64 rng(2);
  Matrix x = testing::random_matrix(40, 2, rng);
  x.col(0).setOnes();
  const Vector y = testing::random_matrix(40, 1, rng);
  OlsOptions o;
  o.robust = true;
  const auto r = ols(x, y, {"c", "x"}, o);
  const Vector u = y - x * r.coef;
  const Matrix bread = (x.transpose() * x).inverse();
  const double s2 = u.squaredNorm() / 38.0;
  Matrix meat = Matrix::Zero(2, 2);
  for (Index i = 0; i < 40; ++i) meat += u(i) * u(i) * x.row(i).transpose() * x.row(i);
  const Matrix hc1 = 40.0 / 38.0 * bread * meat * bread;
  for (Index k = 0; k < 2; ++k) {
    CHECK(r.se_plain(k) == doctest::Approx(std::sqrt(s2 * bread(k, k))).epsilon(1e-10));
    CHECK((*r.se_robust)(k) == doctest::Approx(std::sqrt(hc1(k, k))).epsilon(1e-10));
  }
}

TEST_CASE("cluster covariance matches a loop-by-loop sandwich") {
  std::mt19937_64 rng(3);
  const Index n = 60, k = 3;
  Matrix x = testing::random_matrix(n, k, rng);
  x.col(0).setOnes();
  const Vector u = testing::random_matrix(n, 1, rng);
  std::vector<long> g;
  for (Index i = 0; i < n; ++i) g.push_back(static_cast<long>((i * 7) % 9));
  const Matrix inv = (x.transpose() * x).inverse();
  const double scale = 9.0 / 8.0 * (n - 1.0) / (n - k);
  const Matrix v = cluster_covariance(x, u, inv, g, k);
  CHECK((v - sandwich_oracle(x, u, g, scale)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-way covariance is the inclusion-exclusion combination") {
  std::mt19937_64 rng(4);
  const Index n = 80, k = 2;
  Matrix x = testing::random_matrix(n, k, rng);
  x.col(0).setOnes();
  const Vector u = testing::random_matrix(n, 1, rng);
  std::vector<long> a, b, ab;
  for (Index i = 0; i < n; ++i) {
    a.push_back(static_cast<long>(i % 5));
    b.push_back(static_cast<long>((i / 3) % 4));
    ab.push_back(a.back() * 10 + b.back());
  }
  const Matrix inv = (x.transpose() * x).inverse();
  const Matrix two = two_way_cluster_covariance(x, u, inv, a, b, k);
  const Matrix expected =
      cluster_covariance(x, u, inv, a, k) + cluster_covariance(x, u, inv, b, k) - cluster_covariance(x, u, inv, ab, k);
  CHECK((two - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rank-deficient design is rejected") {
  Matrix x(5, 2);
  x << 1, 2, 1, 2, 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(ols(x, Vector::Ones(5), {"a", "b"}), ValidationError);
}

TEST_CASE("one cluster gives a warning and no clustered SE") {
  Matrix x(4, 2);
  x << 1, 0, 1, 1, 1, 2, 1, 4;
  Vector y(4);
  y << 1, 2, 2, 5;
  OlsOptions o;
  o.cluster_a = {0, 0, 0, 0};
  const auto r = ols(x, y, {"c", "x"}, o);
  CHECK_FALSE(r.se_cluster1.has_value());
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("Welch test against reference values") {
  const std::vector<double> a{27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4};
  const std::vector<double> b{27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4};
  const auto r = welch_ttest(a, b);
  CHECK(r.t == doctest::Approx(-2.455356398286006).epsilon(1e-12));
  CHECK(r.df == doctest::Approx(24.988529290231416).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.021378001462866985).epsilon(1e-9));
}

TEST_CASE("Welch test degenerate inputs") {
  const std::vector<double> c{2, 2, 2}, d{3, 3};
  CHECK(welch_ttest(c, c).p == 1.0);
  CHECK(welch_ttest(c, d).p == 0.0);
  CHECK_THROWS_AS(welch_ttest(std::vector<double>{1}, c), ValidationError);
}

TEST_CASE("RCA on hand values") {
  const auto v = rca_from_components(10, 100, 50, 1000);
  CHECK(v.value == doctest::Approx(2.0));
  CHECK(v.advantage());
  CHECK_FALSE(rca_from_components(1, 100, 50, 1000).advantage());
  CHECK_THROWS_AS(rca_from_components(1, 100, 0, 1000), ValidationError);

  AnnualPanel p;
  p.cells[{"f", "a", "CA", 0}] = 10;
  p.cells[{"f", "b", "CA", 0}] = 90;
  p.cells[{"g", "a", "DE", 0}] = 40;
  p.cells[{"g", "b", "DE", 0}] = 860;
  p.cells[{"g", "a", "DE", -1}] = 999;  // other period
  const auto r = rca(p, "a", "CA", 0);
  CHECK(r.value == doctest::Approx((10.0 / 100.0) / (50.0 / 1000.0)));
  const auto all = rca_all(p, "CA", 0);
  CHECK(all.size() == 2);
  CHECK(all.at("a").value == doctest::Approx(r.value));
}

TEST_CASE("diff-in-diff recovers a planted effect exactly") {
  std::vector<PanelObservation> obs;
  for (int u = 0; u < 6; ++u)
    for (int t = 0; t < 4; ++t) {
      const bool d = u < 3 && t >= 2;
      obs.push_back({"u" + std::to_string(u), t, 1.5 * u - 0.7 * t * t + (d ? 3.0 : 0.0), d});
    }
  const auto r = diff_in_diff(obs);
  CHECK(r.coef(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.n_absorbed == 6 + 4 - 1);
}

TEST_CASE("diff-in-diff equals the dummy-variable regression") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution drop(0.1);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<PanelObservation> obs;
    for (int u = 0; u < 12; ++u)
      for (int t = 0; t < 5; ++t) {
        if (drop(rng) && !(u == 0 || t == 0)) continue;
        obs.push_back({"u" + std::to_string(u), t, n(rng), u % 2 == 0 && t >= 3});
      }
    const auto r = diff_in_diff(obs);
    Matrix x = Matrix::Zero(static_cast<Index>(obs.size()), 1 + 12 + 4);
    Vector y(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      const auto& o = obs[static_cast<std::size_t>(i)];
      x(i, 0) = o.treated;
      x(i, 1 + std::stoi(o.unit.substr(1))) = 1.0;
      if (o.period > 0) x(i, 12 + o.period) = 1.0;
      y(i) = o.y;
    }
    CHECK(r.coef(0) == doctest::Approx(oracle_ols(x, y)[0]).epsilon(1e-8));
  }
}

TEST_CASE("degenerate diff-in-diff inputs") {
  std::vector<PanelObservation> obs{{"a", 0, 1, false}, {"a", 1, 2, false}, {"b", 0, 1, false}, {"b", 1, 3, false}};
  CHECK_THROWS_AS(diff_in_diff(obs), ValidationError);
  obs[3].treated = true;
  obs[3].y = 0.5;
  CHECK_THROWS_AS(diff_in_diff(obs, OutcomeKind::binary), ValidationError);
}

TEST_CASE("diversion regression recovers planted coefficients on noiseless data") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 10.0);
  std::uniform_real_distribution<double> v(10.0, 500.0);
  std::vector<DiversionObservation> obs;
  const char* dests[] = {"DE", "US", "GB", "JP"};
  const char* classes[] = {"I", "II", "III"};
  for (int i = 0; i < 120; ++i) {
    DiversionObservation o;
    o.destination = dests[i % 4];
    o.product_class = classes[i % 3];
    o.product = "p" + std::to_string(i);
    o.tet_focus = n(rng);
    o.base_value = v(rng);
    o.tet_destination = 4.0 - 1.0 * o.tet_focus + 0.02 * o.base_value;
    obs.push_back(o);
  }
  const auto r = diversion_regression(obs);
  CHECK(std::abs(r.coef(1) + 1.0) < 1e-9);
  CHECK(std::abs(r.coef(2) - 0.02) < 1e-9);
  CHECK(r.se_cluster1.has_value());
  CHECK(r.se_cluster2.has_value());
  CHECK(r.cluster_dims.size() == 2);
}

TEST_CASE("diversion pairs non-focus cells with the focus effect of the same unit") {
  EffectsTable t;
  auto row = [](std::string unit, std::string key, double tet, std::optional<double> base) {
    EffectRow r;
    r.unit = std::move(unit);
    r.key = std::move(key);
    r.tet_level = tet;
    r.base = base;
    return r;
  };
  t.rows = {row("a", "CA", 5, 1), row("a", "DE", -2, 10), row("b", "DE", 1, 3), row("c", "CA", 7, 1),
            row("c", "US", 0.5, std::nullopt)};
  const auto obs = diversion_observations(t, "CA", {{"a", 1.5}});
  REQUIRE(obs.size() == 2);
  CHECK(obs[0].tet_focus == 5);
  CHECK(obs[0].tet_destination == -2);
  CHECK(*obs[0].elasticity == 1.5);
  CHECK(std::isnan(obs[1].base_value));
  CHECK_THROWS_AS(diversion_observations(t, "JP"), ValidationError);
}

TEST_CASE("elasticity split keeps the strictly-above half") {
  std::vector<DiversionObservation> obs;
  for (int i = 0; i < 9; ++i) {
    DiversionObservation o;
    o.destination = i % 2 ? "DE" : "US";
    o.product_class = i % 3 ? "I" : "II";
    o.tet_focus = i;
    o.tet_destination = 2.0 * i + (i % 3);
    o.base_value = 1.0 + i * i;
    o.elasticity = i;
    obs.push_back(o);
  }
  obs.back().elasticity.reset();
  const auto above = diversion_regression(obs, ElasticitySubset::above_median, false);
  const auto below = diversion_regression(obs, ElasticitySubset::below_median, false);
  CHECK(above.n_obs == 4);  // median of 0..7 is 3.5
  CHECK(below.n_obs == 4);
  CHECK(above.n_dropped == 1);
}

TEST_CASE("margins fit a line with symmetric intervals") {
  std::vector<std::optional<double>> y, x;
  for (int i = 0; i < 10; ++i) {
    x.emplace_back(i);
    y.emplace_back(2.0 + 0.5 * i + (i % 2 ? 0.1 : -0.1));
  }
  const auto m = margin_association(y, x, 5);
  REQUIRE(m.grid.size() == 5);
  CHECK(m.grid.front().x == 0.0);
  CHECK(m.grid.back().x == 9.0);
  for (const auto& p : m.grid) {
    CHECK(p.fit == doctest::Approx(m.regression.coef(0) + m.regression.coef(1) * p.x));
    CHECK(p.hi - p.fit == doctest::Approx(p.fit - p.lo));
    CHECK(p.lo < p.fit);
  }
  x[0].reset();
  x[1].reset();
  x[2].reset();
  CHECK_THROWS_AS(margin_association(y, x), ValidationError);
}
