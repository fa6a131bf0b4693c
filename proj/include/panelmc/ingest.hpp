#pragma once

// Transaction loading, treaty-aligned annualisation, destination ranking and
// the two outcome-matrix layouts (product x destination, firm x product rank).

#include "panelmc/outcome_matrix.hpp"

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace panelmc {

struct Month {
  int year = 0;
  int month = 1;  // 1..12

  /// Parses YYYY-MM. Throws ValidationError otherwise.
  static Month parse(std::string_view text);
  static Month from_index(int index) { return {index / 12, index % 12 + 1}; }
  int index() const { return year * 12 + (month - 1); }
  std::string str() const;

  auto operator<=>(const Month&) const = default;
};

struct TransactionRecord {
  std::string firm;
  std::string product;
  std::string destination;
  Month month;
  double value = 0.0;
};

struct Rejection {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

/// Records sorted by (firm, product, destination, month) with duplicates summed.
struct TransactionSet {
  std::vector<TransactionRecord> records;
  double total_value = 0.0;
  std::size_t rows_read = 0;
  std::vector<Rejection> rejected;
};

struct Schema {
  char delimiter = ',';
  std::string firm = "firm_id";
  std::string product = "product_id";
  std::string destination = "destination";
  std::string month = "month";
  std::string value = "value";
};

TransactionSet load_transactions(const std::filesystem::path& path, const Schema& schema = {});
TransactionSet load_transactions(std::istream& in, const Schema& schema = {});

/// Sorts and sums duplicate keys. Throws on negative or non-finite values.
TransactionSet make_transaction_set(std::vector<TransactionRecord> records);

struct PanelKey {
  std::string firm;
  std::string product;
  std::string destination;
  int period = 0;

  auto operator<=>(const PanelKey&) const = default;
};

/// Annual (anchor-aligned, 12-month) totals. Period 0 starts at `anchor`.
struct AnnualPanel {
  std::map<PanelKey, double> cells;
  Month anchor;
  int first_period = 0;
  int last_period = 0;
  std::size_t dropped_records = 0;
  double dropped_value = 0.0;

  std::vector<int> periods() const;
  double total() const;
};

/// Periods run from -(n_periods - n_post) to n_post - 1. Months outside
/// complete spans are dropped and counted.
AnnualPanel annualize(const TransactionSet& tx, Month anchor, int n_periods, int n_post = 1);

struct DestinationRank {
  std::string destination;
  double avg_value = 0.0;
  double avg_products = 0.0;
  int rank_by_value = 0;
  int rank_by_products = 0;
  double combined_rank = 0.0;
  bool named = false;
  std::string column;
};

struct DestinationScheme {
  std::vector<std::string> named;                   // ordered by combined rank, then id
  std::map<std::string, std::string> aggregates;    // raw destination -> aggregate label
  std::vector<DestinationRank> ranking;             // every raw destination
  std::vector<std::string> columns;                 // named, then aggregate labels

  /// Column label for a raw destination. Throws ConfigError when unmapped.
  const std::string& column_for(const std::string& destination) const;
};

struct RankingOptions {
  std::size_t top_k = 10;
  std::string focus = "CA";
  std::vector<int> reference_periods;  // empty: every pre-treatment period
};

double combined_rank(int rank_by_value, int rank_by_products);

DestinationScheme rank_destinations(const AnnualPanel& panel,
                                    const std::map<std::string, std::string>& aggregate_map,
                                    const RankingOptions& opts = {});

/// Two-column CSV: destination,aggregate.
std::map<std::string, std::string> load_aggregate_map(const std::filesystem::path& path);

/// Intensive-margin product selection by trade status in tau-2, tau-1, tau.
bool intensive_eligible(bool traded_tau_m2, bool traded_tau_m1, bool traded_tau);

struct MatrixBuild {
  OutcomeMatrix matrix;
  std::size_t candidates = 0;
  std::size_t dropped_rows = 0;
};

struct ProductMatrixOptions {
  Flavor flavor = Flavor::intensive;
  std::string focus = "CA";
  int tau = 0;
  bool log1p = false;
};

MatrixBuild build_product_matrix(const AnnualPanel& panel, const DestinationScheme& scheme,
                                 const ProductMatrixOptions& opts = {});

struct FirmMatrixOptions {
  std::size_t rank_depth = 3;
  std::string focus = "CA";
  int tau = 0;
  bool log1p = false;
};

MatrixBuild build_firm_matrix(const AnnualPanel& panel, const FirmMatrixOptions& opts = {});

}  // namespace panelmc
