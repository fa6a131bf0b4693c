#include "panelmc/effects.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"
#include "panelmc/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace panelmc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ClassTable::classify(const std::string& product_id) const {
  if (product_id.size() < 2 || !std::isdigit(static_cast<unsigned char>(product_id[0])) ||
      !std::isdigit(static_cast<unsigned char>(product_id[1])))
    return "";
  const int chapter = (product_id[0] - '0') * 10 + (product_id[1] - '0');
  for (const auto& c : classes)
    if (chapter >= c.first_chapter && chapter <= c.last_chapter) return c.code;
  return "";
}

ClassTable load_class_table(const fs::path& path) {
  ClassTable table;
  const auto lines = csv::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = csv::split_line(lines[i]);
    if (i == 0 && !f.empty() && f[0] == "first_chapter") continue;
    if (f.size() < 3) throw ConfigError("class table line " + std::to_string(i + 1) + " needs first,last,code[,name]");
    ProductClass c;
    c.first_chapter = static_cast<int>(csv::parse_double(f[0]));
    c.last_chapter = static_cast<int>(csv::parse_double(f[1]));
    c.code = f[2];
    c.name = f.size() > 3 ? f[3] : f[2];
    if (c.first_chapter > c.last_chapter) throw ConfigError("class " + c.code + " has an inverted chapter range");
    table.classes.push_back(std::move(c));
  }
  return table;
}

EffectsTable tet(const OutcomeMatrix& matrix, const Matrix& predicted, const TreatmentMask& mask) {
  if (predicted.rows() != matrix.rows() || predicted.cols() != matrix.cols())
    throw ValidationError("prediction shape does not match the outcome matrix");
  if (mask.treated.rows() != matrix.rows() || mask.treated.cols() != matrix.cols())
    throw ValidationError("treatment mask shape does not match the outcome matrix");
  EffectsTable table;
  for (Index j = 0; j < matrix.cols(); ++j)
    for (Index i = 0; i < matrix.rows(); ++i) {
      if (!mask.treated(i, j)) continue;
      EffectRow r;
      r.unit = matrix.row_labels[static_cast<std::size_t>(i)];
      r.key = matrix.columns[static_cast<std::size_t>(j)].key;
      r.period = matrix.columns[static_cast<std::size_t>(j)].period;
      r.row = i;
      r.col = j;
      r.observed = matrix.values(i, j);
      r.predicted = predicted(i, j);
      r.tet_level = r.observed - r.predicted;
      table.rows.push_back(std::move(r));
    }
  return table;
}

std::vector<std::optional<double>> previous_period_values(const EffectsTable& table, const OutcomeMatrix& matrix) {
  std::vector<std::optional<double>> out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    const auto j = matrix.column_index(r.key, r.period - 1);
    if (!j || !matrix.observed(r.row, *j)) {
      out.emplace_back();
    } else {
      out.emplace_back(matrix.values(r.row, *j));
    }
  }
  return out;
}

void assign_salience(EffectsTable& table) {
  double total = 0.0;
  for (const auto& r : table.rows)
    if (r.tet_pct) total += *r.base;
  for (auto& r : table.rows) r.salience = (r.tet_pct && total > 0.0) ? *r.base / total : 0.0;
}

void tet_pct(EffectsTable& table, std::span<const std::optional<double>> base) {
  if (base.size() != table.rows.size()) throw ValidationError("base values are not aligned with the effects table");
  for (std::size_t n = 0; n < base.size(); ++n) {
    auto& r = table.rows[n];
    r.base = base[n];
    if (base[n] && *base[n] > 0.0) {
      r.tet_pct = r.tet_level / *base[n] * 100.0;
    } else {
      r.tet_pct.reset();
    }
  }
  assign_salience(table);
}

void assign_groups(EffectsTable& table, const OutcomeMatrix& matrix, const ClassTable* classes) {
  for (auto& r : table.rows) {
    if (matrix.layout == "firm") {
      if (r.key.rfind("rank", 0) == 0) r.rank = std::stoi(r.key.substr(4));
      const auto& products = matrix.row_products;
      if (r.rank > 0 && static_cast<std::size_t>(r.row) < products.size() &&
          static_cast<std::size_t>(r.rank) <= products[static_cast<std::size_t>(r.row)].size())
        r.product = products[static_cast<std::size_t>(r.row)][static_cast<std::size_t>(r.rank - 1)];
    } else {
      r.product = r.unit;
    }
    if (classes && !r.product.empty()) r.product_class = classes->classify(r.product);
  }
}

std::optional<double> weighted_sd(std::span<const double> values, std::span<const double> weights, double mean) {
  const std::size_t L = values.size();
  if (L < 2) return std::nullopt;
  double num = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    num += weights[i] * (values[i] - mean) * (values[i] - mean);
    wsum += weights[i];
  }
  const double factor = (static_cast<double>(L) - 1.0) / static_cast<double>(L);
  if (wsum <= 0.0) return std::nullopt;
  return std::sqrt(num / (factor * wsum));
}

WatetResult watet(const EffectsTable& table, const WatetOptions& opts) {
  std::vector<double> values, bases;
  std::vector<std::string> units;
  for (const auto& r : table.rows)
    if (r.tet_pct) {
      values.push_back(*r.tet_pct);
      bases.push_back(*r.base);
      units.push_back(r.unit);
    }
  if (values.empty()) throw ValidationError("WATET: no treated cell has a positive previous-period base");

  WatetResult out;
  out.n_cells = values.size();
  double total = 0.0;
  for (double b : bases) total += b;
  out.weight_total = total;
  std::vector<double> s(bases.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = bases[i] / total;
  for (std::size_t i = 0; i < s.size(); ++i) out.watet += s[i] * values[i];
  out.weighted_sd = weighted_sd(values, s, out.watet);

  // Per-unit numerator and denominator; a bootstrap draw is a multiset of units.
  std::map<std::string, std::pair<double, double>> per_unit;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [num, den] = per_unit[units[i]];
    num += bases[i] * values[i];
    den += bases[i];
  }
  out.n_units = per_unit.size();
  if (opts.bootstrap <= 0) return out;

  std::vector<double> num, den;
  for (const auto& [u, nd] : per_unit) {
    num.push_back(nd.first);
    den.push_back(nd.second);
  }
  const auto n_units = static_cast<int>(num.size());
  std::vector<double> draws(static_cast<std::size_t>(opts.bootstrap));
#pragma omp parallel for schedule(static)
  for (int b = 0; b < opts.bootstrap; ++b) {
    std::mt19937_64 rng(mix_seed(opts.seed, static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<int> pick(0, n_units - 1);
    double nb = 0.0, db = 0.0;
    for (int k = 0; k < n_units; ++k) {
      const int u = pick(rng);
      nb += num[static_cast<std::size_t>(u)];
      db += den[static_cast<std::size_t>(u)];
    }
    draws[static_cast<std::size_t>(b)] = nb / db;
  }
  std::size_t le = 0, ge = 0;
  for (double d : draws) {
    le += d <= 0.0;
    ge += d >= 0.0;
  }
  out.boot_p = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(opts.bootstrap));
  return out;
}

Grouping parse_grouping(const std::string& text) {
  if (text == "class") return Grouping::product_class;
  if (text == "rank") return Grouping::rank;
  if (text == "destination") return Grouping::destination;
  throw ValidationError("unknown grouping '" + text + "' (expected class|rank|destination)");
}

namespace {

std::string group_key(const EffectRow& r, Grouping g) {
  switch (g) {
    case Grouping::product_class: return r.product_class;
    case Grouping::rank: return r.rank > 0 ? "rank" + std::to_string(r.rank) : "";
    case Grouping::destination: return r.key;
  }
  return "";
}

std::string grouping_name(Grouping g) {
  switch (g) {
    case Grouping::product_class: return "class";
    case Grouping::rank: return "rank";
    case Grouping::destination: return "destination";
  }
  return "";
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<GroupWatet> group_watet(const EffectsTable& table, Grouping grouping, const WatetOptions& opts) {
  std::map<std::string, EffectsTable> parts;
  double total = 0.0;
  for (const auto& r : table.rows) {
    const auto key = group_key(r, grouping);
    if (key.empty()) throw ValidationError("effects row for unit " + r.unit + " lacks a " + grouping_name(grouping) + " key");
    parts[key].rows.push_back(r);
    if (r.tet_pct) total += *r.base;
  }
  std::vector<GroupWatet> out;
  std::uint64_t stream = 0;
  for (auto& [key, part] : parts) {
    ++stream;
    bool any = false;
    for (const auto& r : part.rows) any = any || r.tet_pct.has_value();
    if (!any) continue;
    WatetOptions o = opts;
    o.seed = mix_seed(opts.seed, stream);
    GroupWatet g;
    g.group = key;
    g.result = watet(part, o);
    g.weight_share = total > 0.0 ? g.result.weight_total / total : 0.0;
    out.push_back(std::move(g));
  }
  return out;
}

std::optional<double> ExtensiveReport::entry_rate_vs_incumbents() const {
  if (!incumbents) return std::nullopt;
  return 100.0 * static_cast<double>(attributed_entries) / static_cast<double>(incumbents);
}
std::optional<double> ExtensiveReport::exit_rate_vs_incumbents() const {
  if (!incumbents) return std::nullopt;
  return 100.0 * static_cast<double>(attributed_exits) / static_cast<double>(incumbents);
}
std::optional<double> ExtensiveReport::entry_rate_vs_incumbents_and_entrants() const {
  const auto d = incumbents + total_entries();
  if (!d) return std::nullopt;
  return 100.0 * static_cast<double>(attributed_entries) / static_cast<double>(d);
}
std::optional<double> ExtensiveReport::exit_rate_vs_incumbents_and_entrants() const {
  const auto d = incumbents + total_entries();
  if (!d) return std::nullopt;
  return 100.0 * static_cast<double>(attributed_exits) / static_cast<double>(d);
}

ExtensiveReport ExtensiveReport::from_counts(std::size_t attributed_exits, std::size_t regular_exits,
                                             std::size_t attributed_entries, std::size_t regular_entries,
                                             std::size_t incumbents) {
  ExtensiveReport r;
  r.attributed_exits = attributed_exits;
  r.regular_exits = regular_exits;
  r.attributed_entries = attributed_entries;
  r.regular_entries = regular_entries;
  r.incumbents = incumbents;
  return r;
}

ExtensiveReport extensive_margin(const OutcomeMatrix& actual, const Matrix& predicted_binary, const TreatmentMask& mask,
                                 std::size_t incumbents, const std::string& key_filter) {
  if (predicted_binary.rows() != actual.rows() || predicted_binary.cols() != actual.cols())
    throw ValidationError("binary prediction shape does not match the outcome matrix");
  auto binary = [](double v) { return v == 0.0 || v == 1.0; };
  ExtensiveReport rep;
  rep.incumbents = incumbents;
  for (Index j = 0; j < actual.cols(); ++j) {
    const auto& col = actual.columns[static_cast<std::size_t>(j)];
    if (!key_filter.empty() && col.key != key_filter) continue;
    const auto prev = actual.column_index(col.key, col.period - 1);
    for (Index i = 0; i < actual.rows(); ++i) {
      if (!mask.treated(i, j)) continue;
      const double y = actual.values(i, j);
      const double yh = predicted_binary(i, j);
      if (!binary(y) || !binary(yh)) throw ValidationError("extensive margin needs 0/1 outcomes and predictions");
      ++rep.cells;
      const int effect = static_cast<int>(y - yh);
      if (effect == 1) {
        ++rep.attributed_entries;
      } else if (effect == -1) {
        ++rep.attributed_exits;
      } else {
        ++rep.zero_effects;
        if (prev) {
          const double before = actual.values(i, *prev);
          if (y == 1.0 && before == 0.0) ++rep.regular_entries;
          if (y == 0.0 && before == 1.0) ++rep.regular_exits;
        }
      }
    }
  }
  return rep;
}

std::size_t count_incumbents(const OutcomeMatrix& binary, const std::string& key, int tau) {
  std::vector<Index> pre, post;
  for (std::size_t j = 0; j < binary.columns.size(); ++j) {
    if (binary.columns[j].key != key) continue;
    (binary.columns[j].period < tau ? pre : post).push_back(static_cast<Index>(j));
  }
  if (pre.empty() || post.empty()) throw ValidationError("no pre/post columns for key " + key);
  const Index first_post = *std::min_element(post.begin(), post.end(), [&](Index a, Index b) {
    return binary.columns[static_cast<std::size_t>(a)].period < binary.columns[static_cast<std::size_t>(b)].period;
  });
  std::size_t n = 0;
  for (Index i = 0; i < binary.rows(); ++i) {
    bool all = binary.values(i, first_post) > 0.0;
    for (Index j : pre) all = all && binary.values(i, j) > 0.0;
    n += all;
  }
  return n;
}

std::string effects_csv(const EffectsTable& table) {
  std::string text = "unit,key,period,product,class,rank,observed,predicted,tet_level,base,tet_pct,salience\n";
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); };
  for (const auto& r : table.rows) {
    text += csv::escape_field(r.unit) + "," + csv::escape_field(r.key) + "," + std::to_string(r.period) + "," +
            csv::escape_field(r.product) + "," + csv::escape_field(r.product_class) + "," + std::to_string(r.rank) +
            "," + csv::format_double(r.observed) + "," + csv::format_double(r.predicted) + "," +
            csv::format_double(r.tet_level) + "," + opt(r.base) + "," + opt(r.tet_pct) + "," +
            csv::format_double(r.salience) + "\n";
  }
  return text;
}

namespace {

json watet_object(const WatetResult& r) {
  json j;
  j["watet_pct"] = r.watet;
  j["weighted_sd"] = optional_json(r.weighted_sd);
  j["boot_p"] = optional_json(r.boot_p);
  j["n_cells"] = r.n_cells;
  j["n_units"] = r.n_units;
  j["weight_total"] = r.weight_total;
  return j;
}

}  // namespace

std::string watet_json(const WatetResult& r) { return watet_object(r).dump(2) + "\n"; }

std::string group_watet_json(const std::vector<GroupWatet>& groups, Grouping grouping) {
  json j;
  j["grouping"] = grouping_name(grouping);
  json arr = json::array();
  for (const auto& g : groups) {
    json o = watet_object(g.result);
    o["group"] = g.group;
    o["weight_share"] = g.weight_share;
    arr.push_back(o);
  }
  j["groups"] = arr;
  return j.dump(2) + "\n";
}

std::string extensive_json(const ExtensiveReport& r) {
  json j;
  j["negative_extensive_margin"] = {{"with_policy", r.attributed_exits},
                                    {"without_policy", r.regular_exits},
                                    {"total", r.total_exits()}};
  j["positive_extensive_margin"] = {{"with_policy", r.attributed_entries},
                                    {"without_policy", r.regular_entries},
                                    {"total", r.total_entries()}};
  j["zero_effect_cells"] = r.zero_effects;
  j["treated_cells"] = r.cells;
  j["incumbents"] = r.incumbents;
  j["rates_pct"] = {
      {"vs_incumbents", {{"entry", optional_json(r.entry_rate_vs_incumbents())}, {"exit", optional_json(r.exit_rate_vs_incumbents())}}},
      {"vs_incumbents_plus_entrants",
       {{"entry", optional_json(r.entry_rate_vs_incumbents_and_entrants())},
        {"exit", optional_json(r.exit_rate_vs_incumbents_and_entrants())}}}};
  return j.dump(2) + "\n";
}

}  // namespace panelmc
