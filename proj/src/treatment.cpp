#include "panelmc/treatment.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"

#include <json.hpp>

#include <algorithm>

namespace panelmc {

namespace fs = std::filesystem;
using nlohmann::json;

BoolGrid TreatmentMask::fit_mask(const OutcomeMatrix& m) const {
  if (treated.rows() != m.rows() || treated.cols() != m.cols())
    throw ValidationError("treatment mask shape does not match the outcome matrix");
  return m.observed && !treated;
}

TreatmentMask product_treatment(const OutcomeMatrix& matrix, const std::set<std::string>& treaty_products, int tau) {
  if (treaty_products.empty()) throw ValidationError("treaty product list is empty");
  TreatmentMask mask;
  mask.tau = tau;
  mask.treated = BoolGrid::Constant(matrix.rows(), matrix.cols(), false);
  std::set<std::string> matched;
  for (Index i = 0; i < matrix.rows(); ++i) {
    const auto& label = matrix.row_labels[static_cast<std::size_t>(i)];
    if (!treaty_products.count(label)) continue;
    matched.insert(label);
    mask.treated_units.push_back(label);
    for (Index j = 0; j < matrix.cols(); ++j)
      if (matrix.columns[static_cast<std::size_t>(j)].period >= tau) mask.treated(i, j) = true;
  }
  for (const auto& p : treaty_products)
    if (!matched.count(p)) mask.unmatched.push_back(p);
  return mask;
}

FirmRoster firm_roster(const AnnualPanel& panel, const std::set<std::string>& treaty_products, int tau,
                       const std::string& focus, RosterRule rule) {
  FirmRoster roster;
  for (const auto& [k, v] : panel.cells)
    if (k.destination == focus && v > 0.0 && k.period >= tau - 2 && k.period <= tau)
      roster.portfolios[k.firm][k.period].insert(k.product);
  if (roster.portfolios.empty()) throw ValidationError("panel has no flows to " + focus);

  for (const auto& [firm, by_period] : roster.portfolios) {
    bool treated = false;
    bool multiproduct_pre = false;
    bool any_listed = false;
    for (const auto& [t, products] : by_period) {
      std::size_t listed = 0;
      for (const auto& p : products) listed += treaty_products.count(p);
      any_listed = any_listed || listed > 0;
      if (products.size() < 2) continue;
      if (t < tau) multiproduct_pre = true;
      if (rule == RosterRule::any_listed ? listed > 0 : listed == products.size()) treated = true;
    }
    if (treated) {
      roster.treated.insert(firm);
    } else if (multiproduct_pre && !any_listed) {
      roster.control.insert(firm);
    }
  }
  if (roster.treated.empty()) throw ValidationError("no treated firms: design unestimable");
  if (roster.control.empty()) throw ValidationError("no control firms: design unestimable");
  return roster;
}

TreatmentMask firm_treatment(const OutcomeMatrix& matrix, const FirmRoster& roster, int tau) {
  if (matrix.layout != "firm") throw ValidationError("firm treatment needs a firm-layout matrix");
  std::vector<std::string> orphans;
  for (const auto& label : matrix.row_labels)
    if (!roster.treated.count(label) && !roster.control.count(label)) orphans.push_back(label);
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw ValidationError("matrix rows missing from the roster: " + list);
  }
  TreatmentMask mask;
  mask.tau = tau;
  mask.treated = BoolGrid::Constant(matrix.rows(), matrix.cols(), false);
  for (Index i = 0; i < matrix.rows(); ++i) {
    const auto& label = matrix.row_labels[static_cast<std::size_t>(i)];
    if (!roster.treated.count(label)) continue;
    mask.treated_units.push_back(label);
    for (Index j = 0; j < matrix.cols(); ++j)
      if (matrix.columns[static_cast<std::size_t>(j)].period >= tau) mask.treated(i, j) = true;
  }
  return mask;
}

std::set<std::string> load_treaty_list(const fs::path& path) {
  std::set<std::string> out;
  for (auto line : csv::read_lines(path)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t"));
    line.erase(line.find_last_not_of(" \t") + 1);
    if (!line.empty()) out.insert(line);
  }
  return out;
}

std::string roster_json(const FirmRoster& roster) {
  json j;
  j["treated"] = roster.treated;
  j["control"] = roster.control;
  json portfolios = json::object();
  for (const auto& [firm, by_period] : roster.portfolios) {
    json f = json::object();
    for (const auto& [t, products] : by_period) f[std::to_string(t)] = products;
    portfolios[firm] = f;
  }
  j["portfolios"] = portfolios;
  return j.dump(2) + "\n";
}

void write_treatment_dir(const TreatmentMask& mask, const fs::path& dir) {
  fs::create_directories(dir);
  csv::write_bool_grid(dir / "treated.csv", mask.treated);
  json j;
  j["tau"] = mask.tau;
  j["treated_units"] = mask.treated_units;
  j["unmatched"] = mask.unmatched;
  j["treated_cells"] = mask.count();
  csv::write_text(dir / "treatment.json", j.dump(2) + "\n");
}

TreatmentMask read_treatment_dir(const fs::path& dir) {
  if (!fs::exists(dir / "treatment.json")) throw IoError("no treatment.json in " + dir.string());
  TreatmentMask mask;
  try {
    const auto j = json::parse(csv::read_text(dir / "treatment.json"));
    mask.tau = j.at("tau").get<int>();
    mask.treated_units = j.at("treated_units").get<std::vector<std::string>>();
    mask.unmatched = j.value("unmatched", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ValidationError("malformed treatment.json: " + std::string(e.what()));
  }
  mask.treated = csv::read_bool_grid(dir / "treated.csv");
  return mask;
}

}  // namespace panelmc
