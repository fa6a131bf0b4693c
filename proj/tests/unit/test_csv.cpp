#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace panelmc;

TEST_CASE("quoted fields keep delimiters and doubled quotes") {
  const auto f = csv::split_line(R"(a,"b,c","say ""hi""",)");
  REQUIRE(f.size() == 4);
  CHECK(f[1] == "b,c");
  CHECK(f[2] == "say \"hi\"");
  CHECK(f[3].empty());
  CHECK(csv::escape_field("x,y") == "\"x,y\"");
  CHECK(csv::escape_field("plain") == "plain");
}

TEST_CASE("formatted doubles round-trip exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int n = 0; n < 1000; ++n) {
    const double v = u(rng) * std::pow(10.0, n % 20 - 10);
    CHECK(csv::parse_double(csv::format_double(v)) == v);
  }
  CHECK(csv::format_double(-0.0) == "0");
  CHECK(std::isnan(csv::parse_double(csv::format_double(std::numeric_limits<double>::quiet_NaN()))));
}

TEST_CASE("unparsable number is a validation error") { CHECK_THROWS_AS(csv::parse_double("12abc"), ValidationError); }

TEST_CASE("matrix and mask files round trip") {
  const auto dir = testing::scratch_dir("csv");
  std::mt19937_64 rng(1);
  const Matrix m = testing::random_matrix(7, 4, rng);
  csv::write_matrix(dir / "m.csv", m);
  CHECK(csv::read_matrix(dir / "m.csv") == m);
  const BoolGrid g = testing::random_mask(7, 4, 0.5, rng);
  csv::write_bool_grid(dir / "g.csv", g);
  CHECK((csv::read_bool_grid(dir / "g.csv") == g).all());
}
