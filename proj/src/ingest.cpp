#include "panelmc/ingest.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace panelmc {

namespace fs = std::filesystem;

Month Month::parse(std::string_view text) {
  auto bad = [&] { return ValidationError("unparsable month '" + std::string(text) + "' (expected YYYY-MM)"); };
  if (text.size() != 7 || text[4] != '-') throw bad();
  Month m;
  auto r1 = std::from_chars(text.data(), text.data() + 4, m.year);
  auto r2 = std::from_chars(text.data() + 5, text.data() + 7, m.month);
  if (r1.ec != std::errc{} || r1.ptr != text.data() + 4 || r2.ec != std::errc{} || r2.ptr != text.data() + 7) throw bad();
  if (m.month < 1 || m.month > 12) throw bad();
  return m;
}

std::string Month::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

namespace {

auto record_key(const TransactionRecord& r) { return std::tie(r.firm, r.product, r.destination, r.month); }

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

TransactionSet make_transaction_set(std::vector<TransactionRecord> records) {
  for (const auto& r : records)
    if (!(r.value >= 0.0) || !std::isfinite(r.value)) throw ValidationError("negative or non-finite transaction value");
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return record_key(a) < record_key(b); });
  TransactionSet out;
  out.rows_read = records.size();
  for (auto& r : records) {
    out.total_value += r.value;
    if (!out.records.empty() && record_key(out.records.back()) == record_key(r)) {
      out.records.back().value += r.value;
    } else {
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

TransactionSet load_transactions(std::istream& in, const Schema& schema) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      header = csv::split_line(line, schema.delimiter);
      break;
    }
  }
  if (header.empty()) return {};

  const std::size_t c_firm = find_column(header, schema.firm);
  const std::size_t c_product = find_column(header, schema.product);
  const std::size_t c_dest = find_column(header, schema.destination);
  const std::size_t c_month = find_column(header, schema.month);
  const std::size_t c_value = find_column(header, schema.value);
  const std::size_t needed = std::max({c_firm, c_product, c_dest, c_month, c_value}) + 1;

  std::vector<TransactionRecord> records;
  std::vector<Rejection> rejected;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    const auto f = csv::split_line(line, schema.delimiter);
    if (f.size() < needed) {
      rejected.push_back({line_no, "too few fields"});
      continue;
    }
    TransactionRecord r{f[c_firm], f[c_product], f[c_dest], {}, 0.0};
    try {
      r.month = Month::parse(f[c_month]);
    } catch (const ValidationError& e) {
      rejected.push_back({line_no, e.what()});
      continue;
    }
    try {
      r.value = csv::parse_double(f[c_value]);
    } catch (const ValidationError& e) {
      rejected.push_back({line_no, e.what()});
      continue;
    }
    if (!std::isfinite(r.value) || r.value < 0.0) {
      rejected.push_back({line_no, "negative or non-finite value " + f[c_value]});
      continue;
    }
    records.push_back(std::move(r));
  }
  auto out = make_transaction_set(std::move(records));
  out.rows_read = rows;
  out.rejected = std::move(rejected);
  return out;
}

TransactionSet load_transactions(const fs::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return load_transactions(in, schema);
}

std::vector<int> AnnualPanel::periods() const {
  std::vector<int> out;
  for (int p = first_period; p <= last_period; ++p) out.push_back(p);
  return out;
}

double AnnualPanel::total() const {
  double s = 0.0;
  for (const auto& [k, v] : cells) s += v;
  return s;
}

AnnualPanel annualize(const TransactionSet& tx, Month anchor, int n_periods, int n_post) {
  if (anchor.month < 1 || anchor.month > 12) throw ValidationError("invalid anchor month");
  if (n_periods < 1) throw ValidationError("annualisation window shorter than one 12-month span");
  if (n_post < 0 || n_post > n_periods) throw ValidationError("post-period count must lie in [0, n_periods]");
  AnnualPanel panel;
  panel.anchor = anchor;
  panel.first_period = -(n_periods - n_post);
  panel.last_period = n_post - 1;
  const int a = anchor.index();
  for (const auto& r : tx.records) {
    const int offset = r.month.index() - a;
    const int period = offset >= 0 ? offset / 12 : -((-offset + 11) / 12);
    if (period < panel.first_period || period > panel.last_period) {
      ++panel.dropped_records;
      panel.dropped_value += r.value;
      continue;
    }
    panel.cells[{r.firm, r.product, r.destination, period}] += r.value;
  }
  return panel;
}

double combined_rank(int rank_by_value, int rank_by_products) {
  return 0.5 * (static_cast<double>(rank_by_value) + static_cast<double>(rank_by_products));
}

const std::string& DestinationScheme::column_for(const std::string& destination) const {
  if (std::find(named.begin(), named.end(), destination) != named.end()) {
    return *std::find(named.begin(), named.end(), destination);
  }
  auto it = aggregates.find(destination);
  if (it == aggregates.end()) throw ConfigError("destination '" + destination + "' is neither named nor aggregated");
  return it->second;
}

DestinationScheme rank_destinations(const AnnualPanel& panel, const std::map<std::string, std::string>& aggregate_map,
                                    const RankingOptions& opts) {
  std::vector<int> ref = opts.reference_periods;
  if (ref.empty())
    for (int p = panel.first_period; p < 0 && p <= panel.last_period; ++p) ref.push_back(p);
  if (ref.empty()) throw ValidationError("destination ranking needs at least one reference period");
  const std::set<int> ref_set(ref.begin(), ref.end());

  std::map<std::string, double> value;
  std::map<std::string, std::map<int, std::set<std::string>>> products;
  std::set<std::string> all;
  for (const auto& [k, v] : panel.cells) {
    all.insert(k.destination);
    if (!ref_set.count(k.period)) continue;
    value[k.destination] += v;
    if (v > 0.0) products[k.destination][k.period].insert(k.product);
  }
  if (all.size() < opts.top_k)
    throw ValidationError("panel has " + std::to_string(all.size()) + " destinations, fewer than top_k=" +
                          std::to_string(opts.top_k));

  const double n_ref = static_cast<double>(ref_set.size());
  std::vector<DestinationRank> ranking;
  for (const auto& d : all) {
    DestinationRank r;
    r.destination = d;
    r.avg_value = value[d] / n_ref;
    double np = 0.0;
    for (int p : ref_set) {
      auto it = products.find(d);
      if (it != products.end() && it->second.count(p)) np += static_cast<double>(it->second.at(p).size());
    }
    r.avg_products = np / n_ref;
    ranking.push_back(std::move(r));
  }

  auto assign = [&](auto metric, auto rank_field) {
    std::vector<std::size_t> idx(ranking.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double ma = metric(ranking[a]), mb = metric(ranking[b]);
      if (ma != mb) return ma > mb;
      return ranking[a].destination < ranking[b].destination;
    });
    for (std::size_t pos = 0; pos < idx.size(); ++pos) ranking[idx[pos]].*rank_field = static_cast<int>(pos + 1);
  };
  assign([](const DestinationRank& r) { return r.avg_value; }, &DestinationRank::rank_by_value);
  assign([](const DestinationRank& r) { return r.avg_products; }, &DestinationRank::rank_by_products);

  DestinationScheme scheme;
  std::vector<std::string> unmapped;
  for (auto& r : ranking) {
    r.combined_rank = combined_rank(r.rank_by_value, r.rank_by_products);
    const auto k = static_cast<int>(opts.top_k);
    r.named = r.rank_by_value <= k || r.rank_by_products <= k || r.destination == opts.focus;
    if (!r.named) {
      auto it = aggregate_map.find(r.destination);
      if (it == aggregate_map.end()) {
        unmapped.push_back(r.destination);
        continue;
      }
      r.column = it->second;
      scheme.aggregates[r.destination] = it->second;
    } else {
      r.column = r.destination;
    }
  }
  if (!unmapped.empty()) {
    std::string list;
    for (const auto& d : unmapped) list += (list.empty() ? "" : ", ") + d;
    throw ConfigError("destinations missing from the aggregate map: " + list);
  }

  std::stable_sort(ranking.begin(), ranking.end(), [](const auto& a, const auto& b) {
    if (a.named != b.named) return a.named;
    if (a.combined_rank != b.combined_rank) return a.combined_rank < b.combined_rank;
    return a.destination < b.destination;
  });
  for (const auto& r : ranking)
    if (r.named) scheme.named.push_back(r.destination);
  scheme.columns = scheme.named;

  // Aggregate bins ordered by their summed reference value.
  std::map<std::string, double> bin_value;
  for (const auto& r : ranking)
    if (!r.named) bin_value[r.column] += r.avg_value;
  std::vector<std::pair<std::string, double>> bins(bin_value.begin(), bin_value.end());
  std::stable_sort(bins.begin(), bins.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [label, v] : bins) {
    if (std::find(scheme.named.begin(), scheme.named.end(), label) != scheme.named.end())
      throw ConfigError("aggregate label '" + label + "' collides with a named destination");
    scheme.columns.push_back(label);
  }
  scheme.ranking = std::move(ranking);
  return scheme;
}

std::map<std::string, std::string> load_aggregate_map(const fs::path& path) {
  std::map<std::string, std::string> out;
  const auto lines = csv::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = csv::split_line(lines[i]);
    if (f.size() < 2) throw ConfigError("aggregate map line " + std::to_string(i + 1) + " needs two fields");
    if (i == 0 && f[0] == "destination") continue;
    out[f[0]] = f[1];
  }
  return out;
}

bool intensive_eligible(bool traded_tau_m2, bool traded_tau_m1, bool traded_tau) {
  // Rows of the selection truth table, indexed by (tau-2, tau-1, tau).
  //   YYY yes, YYN no, YNY yes, NYY yes, YNN no, NYN yes, NNY no, NNN no
  static constexpr bool table[2][2][2] = {
      // tau-2 = N
      {{false, false},   // tau-1 = N: NNN, NNY
       {true, true}},    // tau-1 = Y: NYN, NYY
      // tau-2 = Y
      {{false, true},    // tau-1 = N: YNN, YNY
       {false, true}},   // tau-1 = Y: YYN, YYY
  };
  return table[traded_tau_m2][traded_tau_m1][traded_tau];
}

namespace {

std::vector<ColumnLabel> grid_columns(const std::vector<std::string>& keys, const std::vector<int>& periods) {
  std::vector<ColumnLabel> cols;
  for (const auto& k : keys)
    for (int p : periods) cols.push_back({k, p});
  return cols;
}

double transform(double v, bool log1p) { return log1p ? std::log1p(v) : v; }

}  // namespace

MatrixBuild build_product_matrix(const AnnualPanel& panel, const DestinationScheme& scheme,
                                 const ProductMatrixOptions& opts) {
  const auto periods = panel.periods();
  // product -> column key -> period -> value
  std::map<std::string, std::map<std::string, std::map<int, double>>> flows;
  std::map<std::string, std::map<int, double>> focus_flows;
  for (const auto& [k, v] : panel.cells) {
    flows[k.product][scheme.column_for(k.destination)][k.period] += v;
    if (k.destination == opts.focus) focus_flows[k.product][k.period] += v;
  }

  std::vector<std::string> rows;
  std::string filter;
  for (const auto& [product, by_col] : flows) {
    if (opts.flavor == Flavor::intensive) {
      filter = "intensive selection on " + opts.focus + " trade in periods tau-2..tau";
      auto traded = [&](int p) {
        auto it = focus_flows.find(product);
        if (it == focus_flows.end()) return false;
        auto jt = it->second.find(p);
        return jt != it->second.end() && jt->second > 0.0;
      };
      if (!intensive_eligible(traded(opts.tau - 2), traded(opts.tau - 1), traded(opts.tau))) continue;
    } else {
      filter = "extensive selection (any positive flow)";
      bool any = false;
      for (const auto& [c, byp] : by_col)
        for (const auto& [p, v] : byp) any = any || v > 0.0;
      if (!any) continue;
    }
    rows.push_back(product);
  }
  if (rows.empty()) throw ValidationError("no eligible rows: " + (filter.empty() ? std::string("empty panel") : filter) + " removed every product");

  MatrixBuild out;
  out.candidates = flows.size();
  out.dropped_rows = flows.size() - rows.size();
  OutcomeMatrix& m = out.matrix;
  m.flavor = opts.flavor;
  m.layout = "product";
  m.row_labels = rows;
  m.columns = grid_columns(scheme.columns, periods);
  m.values = Matrix::Zero(static_cast<Index>(rows.size()), static_cast<Index>(m.columns.size()));
  m.observed = BoolGrid::Constant(m.values.rows(), m.values.cols(), true);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& by_col = flows.at(rows[i]);
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      double v = 0.0;
      auto it = by_col.find(m.columns[j].key);
      if (it != by_col.end()) {
        auto jt = it->second.find(m.columns[j].period);
        if (jt != it->second.end()) v = jt->second;
      }
      m.values(static_cast<Index>(i), static_cast<Index>(j)) =
          opts.flavor == Flavor::extensive ? (v > 0.0 ? 1.0 : 0.0) : transform(v, opts.log1p);
    }
  }
  return out;
}

MatrixBuild build_firm_matrix(const AnnualPanel& panel, const FirmMatrixOptions& opts) {
  if (opts.rank_depth < 2) throw ValidationError("rank_depth must be at least 2 (multiproduct firms)");
  const auto periods = panel.periods();
  // firm -> product -> period -> value (focus destination only)
  std::map<std::string, std::map<std::string, std::map<int, double>>> flows;
  for (const auto& [k, v] : panel.cells)
    if (k.destination == opts.focus && v > 0.0) flows[k.firm][k.product][k.period] += v;

  MatrixBuild out;
  out.candidates = flows.size();
  std::vector<std::string> rows;
  std::vector<std::vector<std::string>> ranked;
  std::vector<std::vector<std::vector<double>>> series;
  for (const auto& [firm, by_product] : flows) {
    std::vector<std::pair<std::string, double>> qualifying;
    for (const auto& [product, byp] : by_product) {
      bool every = true;
      for (int p : periods) every = every && byp.count(p) && byp.at(p) > 0.0;
      if (!every) continue;
      auto it = byp.find(opts.tau - 1);
      qualifying.emplace_back(product, it == byp.end() ? 0.0 : it->second);
    }
    if (qualifying.size() < opts.rank_depth) {
      ++out.dropped_rows;
      continue;
    }
    std::sort(qualifying.begin(), qualifying.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    qualifying.resize(opts.rank_depth);
    rows.push_back(firm);
    std::vector<std::string> names;
    std::vector<std::vector<double>> vals;
    for (const auto& [product, v] : qualifying) {
      names.push_back(product);
      std::vector<double> s;
      for (int p : periods) s.push_back(by_product.at(product).at(p));
      vals.push_back(std::move(s));
    }
    ranked.push_back(std::move(names));
    series.push_back(std::move(vals));
  }
  if (rows.empty()) throw ValidationError("no eligible rows: no firm has " + std::to_string(opts.rank_depth) +
                                          " products exported to " + opts.focus + " in every period");

  OutcomeMatrix& m = out.matrix;
  m.flavor = Flavor::intensive;
  m.layout = "firm";
  m.row_labels = rows;
  m.row_products = ranked;
  std::vector<std::string> keys;
  for (std::size_t r = 1; r <= opts.rank_depth; ++r) keys.push_back("rank" + std::to_string(r));
  m.columns = grid_columns(keys, periods);
  m.values = Matrix::Zero(static_cast<Index>(rows.size()), static_cast<Index>(m.columns.size()));
  m.observed = BoolGrid::Constant(m.values.rows(), m.values.cols(), true);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t r = 0; r < opts.rank_depth; ++r)
      for (std::size_t t = 0; t < periods.size(); ++t)
        m.values(static_cast<Index>(i), static_cast<Index>(r * periods.size() + t)) = transform(series[i][r][t], opts.log1p);
  return out;
}

}  // namespace panelmc
