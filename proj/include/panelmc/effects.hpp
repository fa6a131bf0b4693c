#pragma once

#include "panelmc/outcome_matrix.hpp"
#include "panelmc/treatment.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace panelmc {

/// Product classes keyed by the two-digit chapter prefix of a product id.
struct ProductClass {
  int first_chapter = 0;
  int last_chapter = 0;
  std::string code;
  std::string name;
};

struct ClassTable {
  std::vector<ProductClass> classes;

  /// Class code for a product id, or "" when no range matches.
  std::string classify(const std::string& product_id) const;
};

/// CSV with columns first_chapter,last_chapter,code,name.
ClassTable load_class_table(const std::filesystem::path& path);

/// One treated cell.
struct EffectRow {
  std::string unit;      // row label
  std::string key;       // destination, rank key or series key
  int period = 0;
  Index row = 0;
  Index col = 0;
  double observed = 0.0;
  double predicted = 0.0;
  double tet_level = 0.0;
  std::optional<double> base;     // observed value of the same unit and key at period - 1
  std::optional<double> tet_pct;  // absent when base <= 0 or missing
  double salience = 0.0;          // share of base over the rows with a defined tet_pct
  std::string product_class;
  std::string product;            // firm layout: product behind the rank; product layout: the row
  int rank = 0;                   // firm layout: 1-based product rank
};

struct EffectsTable {
  std::vector<EffectRow> rows;
};

/// tet_level = Y - Y_hat on every treated cell, in column-major cell order.
EffectsTable tet(const OutcomeMatrix& matrix, const Matrix& predicted, const TreatmentMask& mask);

/// Observed Y of the same (unit, key) one period earlier; nullopt when the
/// column is missing or the cell unobserved.
std::vector<std::optional<double>> previous_period_values(const EffectsTable& table, const OutcomeMatrix& matrix);

/// tet_pct = tet_level / base * 100 where base > 0; recomputes saliences.
void tet_pct(EffectsTable& table, std::span<const std::optional<double>> base);

/// s = base / sum(base) over rows with a defined tet_pct; others get 0.
void assign_salience(EffectsTable& table);

void assign_groups(EffectsTable& table, const OutcomeMatrix& matrix, const ClassTable* classes);

struct WatetOptions {
  int bootstrap = 1000;
  std::uint64_t seed = 1;
};

struct WatetResult {
  double watet = 0.0;
  std::optional<double> weighted_sd;  // needs >= 2 rows
  std::optional<double> boot_p;       // absent when bootstrap == 0
  std::size_t n_cells = 0;
  std::size_t n_units = 0;
  double weight_total = 0.0;          // sum of bases behind the weights
};

/// Salience-weighted mean of tet_pct, its weighted SD with the (L-1)/L
/// factor, and a unit-resampling bootstrap p-value. Throws when no row has a
/// defined tet_pct.
WatetResult watet(const EffectsTable& table, const WatetOptions& opts = {});

/// Weighted SD sqrt( sum s (x - m)^2 / ((L-1)/L * sum s) ).
std::optional<double> weighted_sd(std::span<const double> values, std::span<const double> weights, double mean);

enum class Grouping { product_class, rank, destination };
Grouping parse_grouping(const std::string& text);

struct GroupWatet {
  std::string group;
  WatetResult result;
  double weight_share = 0.0;  // group base total / table base total
};

std::vector<GroupWatet> group_watet(const EffectsTable& table, Grouping grouping, const WatetOptions& opts = {});

struct ExtensiveReport {
  std::size_t attributed_entries = 0;  // TET = +1
  std::size_t attributed_exits = 0;    // TET = -1
  std::size_t regular_entries = 0;     // TET = 0, Y 0 -> 1
  std::size_t regular_exits = 0;       // TET = 0, Y 1 -> 0
  std::size_t zero_effects = 0;        // all TET = 0 cells
  std::size_t cells = 0;
  std::size_t incumbents = 0;

  std::size_t total_entries() const { return attributed_entries + regular_entries; }
  std::size_t total_exits() const { return attributed_exits + regular_exits; }
  std::optional<double> entry_rate_vs_incumbents() const;
  std::optional<double> exit_rate_vs_incumbents() const;
  std::optional<double> entry_rate_vs_incumbents_and_entrants() const;
  std::optional<double> exit_rate_vs_incumbents_and_entrants() const;

  static ExtensiveReport from_counts(std::size_t attributed_exits, std::size_t regular_exits,
                                     std::size_t attributed_entries, std::size_t regular_entries,
                                     std::size_t incumbents);
};

/// Trichotomy over treated cells (optionally only columns whose key equals
/// `key_filter`). Throws ValidationError on non-binary input.
ExtensiveReport extensive_margin(const OutcomeMatrix& actual, const Matrix& predicted_binary, const TreatmentMask& mask,
                                 std::size_t incumbents, const std::string& key_filter = "");

/// Rows observed positive in the post period and every pre period under `key`.
std::size_t count_incumbents(const OutcomeMatrix& binary, const std::string& key, int tau = 0);

std::string effects_csv(const EffectsTable& table);
std::string watet_json(const WatetResult& r);
std::string group_watet_json(const std::vector<GroupWatet>& groups, Grouping grouping);
std::string extensive_json(const ExtensiveReport& r);

}  // namespace panelmc
