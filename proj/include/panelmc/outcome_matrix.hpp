#pragma once

#include "panelmc/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace panelmc {

enum class Flavor { intensive, extensive };

std::string to_string(Flavor f);
Flavor parse_flavor(const std::string& text);

/// One column of an outcome grid: a destination (product layout), a product
/// rank (firm layout) or a generic series key, observed in one period.
/// Period 0 is the first post-treatment period.
struct ColumnLabel {
  std::string key;
  int period = 0;

  bool operator==(const ColumnLabel&) const = default;
};

/// Dense N x C outcome grid with its observation mask.
///
/// Columns always form the full key x period grid, key-major. For the firm
/// layout `row_products[i][r]` names the product sitting at rank r+1 for row i.
struct OutcomeMatrix {
  Matrix values;
  BoolGrid observed;
  std::vector<std::string> row_labels;
  std::vector<ColumnLabel> columns;
  Flavor flavor = Flavor::intensive;
  std::string layout = "product";
  std::vector<std::vector<std::string>> row_products;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }

  std::vector<std::string> keys() const;
  std::vector<int> periods() const;
  std::optional<Index> column_index(const std::string& key, int period) const;
  std::optional<Index> row_index(const std::string& label) const;

  /// Throws ValidationError when shapes, labels or the flavor invariants are violated.
  void validate() const;
};

/// values.csv, mask.csv, labels.json
void write_matrix_dir(const OutcomeMatrix& m, const std::filesystem::path& dir);
OutcomeMatrix read_matrix_dir(const std::filesystem::path& dir);

}  // namespace panelmc
