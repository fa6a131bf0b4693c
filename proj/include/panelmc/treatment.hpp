#pragma once

#include "panelmc/ingest.hpp"
#include "panelmc/outcome_matrix.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace panelmc {

/// Treated cells (the prediction set) of an OutcomeMatrix. Every other
/// observed cell is available for fitting.
struct TreatmentMask {
  BoolGrid treated;
  std::vector<std::string> treated_units;
  int tau = 0;
  std::vector<std::string> unmatched;  // treaty products with no matrix row

  std::size_t count() const { return static_cast<std::size_t>(treated.count()); }

  /// observed && !treated
  BoolGrid fit_mask(const OutcomeMatrix& m) const;
};

TreatmentMask product_treatment(const OutcomeMatrix& matrix, const std::set<std::string>& treaty_products, int tau = 0);

enum class RosterRule {
  any_listed,  // some year with >= 2 products to the focus market, one of them listed
  all_listed,  // some year with >= 2 products to the focus market, all of them listed
};

struct FirmRoster {
  std::set<std::string> treated;
  std::set<std::string> control;
  /// firm -> period -> products exported to the focus destination
  std::map<std::string, std::map<int, std::set<std::string>>> portfolios;
};

FirmRoster firm_roster(const AnnualPanel& panel, const std::set<std::string>& treaty_products, int tau = 0,
                       const std::string& focus = "CA", RosterRule rule = RosterRule::any_listed);

TreatmentMask firm_treatment(const OutcomeMatrix& matrix, const FirmRoster& roster, int tau = 0);

/// One product id per line; blank lines and '#' comments ignored.
std::set<std::string> load_treaty_list(const std::filesystem::path& path);

std::string roster_json(const FirmRoster& roster);

/// treated.csv + treatment.json
void write_treatment_dir(const TreatmentMask& mask, const std::filesystem::path& dir);
TreatmentMask read_treatment_dir(const std::filesystem::path& dir);

}  // namespace panelmc
