#include "panelmc/error.hpp"
#include "panelmc/ingest.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <array>
#include <fstream>
#include <random>
#include <sstream>

using namespace panelmc;

namespace {

TransactionSet parse(const std::string& text) {
  std::istringstream in(text);
  return load_transactions(in);
}

const char* kHeader = "firm_id,product_id,destination,month,value\n";

}  // namespace

TEST_CASE("duplicate keys are summed") {
  const auto tx = parse(std::string(kHeader) + "f1,010110,CA,2017-01,3\nf1,010110,CA,2017-01,4\n");
  REQUIRE(tx.records.size() == 1);
  CHECK(tx.records[0].value == 7.0);
  CHECK(tx.total_value == 7.0);
  CHECK(tx.rows_read == 2);
}

TEST_CASE("empty file gives an empty set") {
  const auto tx = parse("");
  CHECK(tx.records.empty());
  CHECK(tx.total_value == 0.0);
}

TEST_CASE("negative value and bad month are rejected with their line numbers") {
  const auto tx = parse(std::string(kHeader) + "f1,010110,CA,2017-01,5\nf1,010110,CA,2017-02,-1\nf1,010110,CA,2017-13,2\n");
  CHECK(tx.records.size() == 1);
  REQUIRE(tx.rejected.size() == 2);
  CHECK(tx.rejected[0].line == 3);
  CHECK(tx.rejected[1].line == 4);
}

TEST_CASE("missing column is a schema error") {
  CHECK_THROWS_AS(parse("firm_id,product_id,month,value\nf,p,2017-01,1\n"), SchemaError);
}

TEST_CASE("custom delimiter and column names") {
  Schema s;
  s.delimiter = ';';
  s.value = "euros";
  std::istringstream in("firm_id;product_id;destination;month;euros\nf;p;DE;2016-10;2.5\n");
  const auto tx = load_transactions(in, s);
  REQUIRE(tx.records.size() == 1);
  CHECK(tx.records[0].value == 2.5);
}

TEST_CASE("a September record a year before the anchor lands in period -1") {
  const auto tx = parse(std::string(kHeader) + "f,p,CA,2016-09,1\n");
  const auto panel = annualize(tx, Month::parse("2017-09"), 3);
  REQUIRE(panel.cells.size() == 1);
  CHECK(panel.cells.begin()->first.period == -1);
}

TEST_CASE("twelve monthly records fill one annual cell") {
  std::string text = kHeader;
  for (int m = 0; m < 12; ++m) text += "f,p,CA," + Month::from_index(Month{2017, 9}.index() + m).str() + ",1\n";
  const auto panel = annualize(parse(text), Month::parse("2017-09"), 3);
  REQUIRE(panel.cells.size() == 1);
  CHECK(panel.cells.begin()->second == 12.0);
  CHECK(panel.cells.begin()->first.period == 0);
}

TEST_CASE("records past the last span are dropped and counted") {
  const auto panel = annualize(parse(std::string(kHeader) + "f,p,CA,2018-12,4\nf,p,CA,2018-08,1\n"), Month::parse("2017-09"), 3);
  CHECK(panel.dropped_records == 1);
  CHECK(panel.dropped_value == 4.0);
  CHECK(panel.total() == 1.0);
}

TEST_CASE("annual totals conserve the accepted value") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> month(0, 35), pick(0, 4);
  std::uniform_real_distribution<double> value(0.0, 100.0);
  std::string text = kHeader;
  for (int n = 0; n < 400; ++n)
    text += "f" + std::to_string(pick(rng)) + ",p" + std::to_string(pick(rng)) + ",D" + std::to_string(pick(rng)) + "," +
            Month::from_index(Month{2015, 9}.index() + month(rng)).str() + "," + std::to_string(value(rng)) + "\n";
  const auto tx = parse(text);
  const auto panel = annualize(tx, Month::parse("2017-09"), 3);
  CHECK(panel.dropped_records == 0);
  CHECK(panel.total() == doctest::Approx(tx.total_value).epsilon(1e-12));
}

TEST_CASE("combined rank is the mean of the two ranks") {
  CHECK(combined_rank(1, 4) == 2.5);
  CHECK(combined_rank(1, 1) == 1.0);
}

namespace {

AnnualPanel toy_panel() {
  // FR leads both rankings, DE second, CA third, JP last.
  std::string text = kHeader;
  const char* rows[] = {"f,a,FR,2016-01,100", "f,b,FR,2016-01,100", "f,c,FR,2016-01,100", "f,a,DE,2016-01,50",
                        "f,b,DE,2016-01,50",  "f,a,CA,2016-01,20",  "f,a,JP,2016-01,10",  "f,a,CA,2017-10,30",
                        "f,a,CA,2015-10,5"};
  for (const char* r : rows) text += std::string(r) + "\n";
  return annualize(parse(text), Month::parse("2017-09"), 3);
}

}  // namespace

TEST_CASE("toy ranking folds the tail destination into its bin") {
  RankingOptions o;
  o.top_k = 2;
  const auto scheme = rank_destinations(toy_panel(), {{"JP", "Asia"}}, o);
  CHECK(scheme.named == std::vector<std::string>{"FR", "DE", "CA"});
  CHECK(scheme.column_for("JP") == "Asia");
  CHECK(scheme.columns == std::vector<std::string>{"FR", "DE", "CA", "Asia"});
  for (const auto& r : scheme.ranking) {
    if (r.destination == "FR") CHECK(r.combined_rank == 1.0);
    if (r.destination == "CA") CHECK(r.rank_by_value == 3);
  }
}

TEST_CASE("unmapped tail destination is a configuration error") {
  RankingOptions o;
  o.top_k = 2;
  CHECK_THROWS_AS(rank_destinations(toy_panel(), {}, o), ConfigError);
}

TEST_CASE("intensive selection follows the truth table") {
  // (tau-2, tau-1, tau)
  CHECK(intensive_eligible(true, true, true));
  CHECK_FALSE(intensive_eligible(true, true, false));
  CHECK(intensive_eligible(true, false, true));  // intermittently traded
  CHECK(intensive_eligible(false, true, true));
  CHECK_FALSE(intensive_eligible(true, false, false));
  CHECK(intensive_eligible(false, true, false));
  CHECK_FALSE(intensive_eligible(false, false, true));  // traded only after
  CHECK_FALSE(intensive_eligible(false, false, false));
}

TEST_CASE("product matrix rows equal a brute-force application of the selection table") {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  std::string text = kHeader;
  std::map<std::string, std::array<bool, 3>> pattern;
  for (int p = 0; p < 40; ++p) {
    const std::string id = "p" + std::to_string(100 + p);
    std::array<bool, 3> t{coin(rng), coin(rng), coin(rng)};
    pattern[id] = t;
    for (int k = 0; k < 3; ++k)
      if (t[static_cast<std::size_t>(k)]) text += "f," + id + ",CA," + std::to_string(2015 + k) + "-10,7\n";
    text += "f," + id + ",DE,2016-10,3\n";  // every product has some flow
  }
  const auto panel = annualize(parse(text), Month::parse("2017-09"), 3);
  RankingOptions o;
  o.top_k = 2;
  const auto scheme = rank_destinations(panel, {}, o);
  const auto build = build_product_matrix(panel, scheme);
  std::vector<std::string> expected;
  for (const auto& [id, t] : pattern)
    if (intensive_eligible(t[0], t[1], t[2])) expected.push_back(id);
  CHECK(build.matrix.row_labels == expected);
  CHECK(build.dropped_rows == pattern.size() - expected.size());
  build.matrix.validate();

  ProductMatrixOptions ext;
  ext.flavor = Flavor::extensive;
  const auto bin = build_product_matrix(panel, scheme, ext);
  CHECK(bin.matrix.rows() == static_cast<Index>(pattern.size()));
  CHECK(((bin.matrix.values.array() == 0.0) || (bin.matrix.values.array() == 1.0)).all());
}

TEST_CASE("firm matrix orders products by pre-period value and drops single-product firms") {
  std::string text = kHeader;
  for (int y = 2015; y <= 2017; ++y) {
    const std::string m = std::to_string(y) + "-10";
    text += "f1,A,CA," + m + ",70\n";
    text += "f1,B,CA," + m + ",20\n";
    text += "f1,C,CA," + m + ",10\n";
    text += "f2,Z,CA," + m + ",5\n";
    text += "f3,Y,CA," + m + ",5\n";
    text += "f3,X,CA," + m + ",5\n";
  }
  const auto panel = annualize(parse(text), Month::parse("2017-09"), 3);
  FirmMatrixOptions o;
  o.rank_depth = 2;
  const auto b = build_firm_matrix(panel, o);
  CHECK(b.matrix.row_labels == std::vector<std::string>{"f1", "f3"});
  CHECK(b.matrix.row_products[0] == std::vector<std::string>{"A", "B"});
  CHECK(b.matrix.row_products[1] == std::vector<std::string>{"X", "Y"});  // tie -> lexicographic
  CHECK(b.dropped_rows == 1);
  o.rank_depth = 1;
  CHECK_THROWS_AS(build_firm_matrix(panel, o), ValidationError);
}

TEST_CASE("matrix directory round trip is byte stable") {
  const auto dir = testing::scratch_dir("ingest_roundtrip");
  RankingOptions o;
  o.top_k = 2;
  const auto panel = toy_panel();
  const auto m = build_product_matrix(panel, rank_destinations(panel, {{"JP", "Asia"}}, o)).matrix;
  write_matrix_dir(m, dir / "a");
  const auto back = read_matrix_dir(dir / "a");
  write_matrix_dir(back, dir / "b");
  for (const char* f : {"values.csv", "mask.csv", "labels.json"}) {
    std::ifstream a(dir / "a" / f), b(dir / "b" / f);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
  CHECK(back.values == m.values);
}
