#include "panelmc/outcome_matrix.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace panelmc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Flavor f) { return f == Flavor::intensive ? "intensive" : "extensive"; }

Flavor parse_flavor(const std::string& text) {
  if (text == "intensive") return Flavor::intensive;
  if (text == "extensive") return Flavor::extensive;
  throw ValidationError("unknown flavor '" + text + "' (expected intensive|extensive)");
}

std::vector<std::string> OutcomeMatrix::keys() const {
  std::vector<std::string> out;
  for (const auto& c : columns)
    if (out.empty() || out.back() != c.key) out.push_back(c.key);
  return out;
}

std::vector<int> OutcomeMatrix::periods() const {
  std::set<int> s;
  for (const auto& c : columns) s.insert(c.period);
  return {s.begin(), s.end()};
}

std::optional<Index> OutcomeMatrix::column_index(const std::string& key, int period) const {
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (columns[j].key == key && columns[j].period == period) return static_cast<Index>(j);
  return std::nullopt;
}

std::optional<Index> OutcomeMatrix::row_index(const std::string& label) const {
  auto it = std::find(row_labels.begin(), row_labels.end(), label);
  if (it == row_labels.end()) return std::nullopt;
  return static_cast<Index>(it - row_labels.begin());
}

void OutcomeMatrix::validate() const {
  if (observed.rows() != rows() || observed.cols() != cols())
    throw ValidationError("observed mask shape does not match values");
  if (static_cast<Index>(row_labels.size()) != rows()) throw ValidationError("row label count does not match rows");
  if (static_cast<Index>(columns.size()) != cols()) throw ValidationError("column label count does not match columns");
  std::set<std::string> seen(row_labels.begin(), row_labels.end());
  if (seen.size() != row_labels.size()) throw ValidationError("duplicate row label");
  const auto k = keys();
  const auto p = periods();
  if (k.size() * p.size() != columns.size()) throw ValidationError("column labels do not form a full key x period grid");
  for (std::size_t a = 0; a < k.size(); ++a)
    for (std::size_t b = 0; b < p.size(); ++b) {
      const auto& c = columns[a * p.size() + b];
      if (c.key != k[a] || c.period != p[b]) throw ValidationError("column labels are not key-major over sorted periods");
    }
  for (Index i = 0; i < rows(); ++i)
    for (Index j = 0; j < cols(); ++j) {
      if (!observed(i, j)) continue;
      const double v = values(i, j);
      if (!std::isfinite(v)) throw ValidationError("non-finite observed value at row " + row_labels[static_cast<std::size_t>(i)]);
      if (flavor == Flavor::extensive && v != 0.0 && v != 1.0)
        throw ValidationError("extensive matrix holds a non-binary value");
      if (flavor == Flavor::intensive && v < 0.0 && layout != "synthetic")
        throw ValidationError("intensive matrix holds a negative value");
    }
}

void write_matrix_dir(const OutcomeMatrix& m, const fs::path& dir) {
  m.validate();
  fs::create_directories(dir);
  csv::write_matrix(dir / "values.csv", m.values);
  csv::write_bool_grid(dir / "mask.csv", m.observed);
  json labels;
  labels["schema_version"] = 1;
  labels["flavor"] = to_string(m.flavor);
  labels["layout"] = m.layout;
  labels["rows"] = m.row_labels;
  json cols = json::array();
  for (const auto& c : m.columns) cols.push_back({{"key", c.key}, {"period", c.period}});
  labels["columns"] = cols;
  if (!m.row_products.empty()) labels["row_products"] = m.row_products;
  csv::write_text(dir / "labels.json", labels.dump(2) + "\n");
}

OutcomeMatrix read_matrix_dir(const fs::path& dir) {
  if (!fs::exists(dir / "labels.json")) throw IoError("not a matrix directory: " + dir.string());
  OutcomeMatrix m;
  json labels;
  try {
    labels = json::parse(csv::read_text(dir / "labels.json"));
    m.flavor = parse_flavor(labels.at("flavor").get<std::string>());
    m.layout = labels.value("layout", "product");
    m.row_labels = labels.at("rows").get<std::vector<std::string>>();
    for (const auto& c : labels.at("columns")) m.columns.push_back({c.at("key").get<std::string>(), c.at("period").get<int>()});
    if (labels.contains("row_products")) m.row_products = labels["row_products"].get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed labels.json in " + dir.string() + ": " + e.what());
  }
  m.values = csv::read_matrix(dir / "values.csv");
  m.observed = csv::read_bool_grid(dir / "mask.csv");
  if (m.values.size() == 0 && !m.row_labels.empty()) m.values = Matrix::Zero(static_cast<Index>(m.row_labels.size()), static_cast<Index>(m.columns.size()));
  m.validate();
  return m;
}

}  // namespace panelmc
