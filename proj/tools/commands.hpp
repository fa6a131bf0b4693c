#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace panelmc::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct BuildArgs {
  fs::path transactions;
  std::string anchor;
  int periods = 3;
  int post = 1;
  std::string layout = "product";
  std::string flavor = "intensive";
  std::string focus = "CA";
  std::size_t top_k = 10;
  fs::path aggregate_map;
  std::size_t rank_depth = 3;
  bool log1p = false;
  fs::path treaty;
  std::string roster_rule = "any";
  std::string delimiter = ",";
};

struct FitArgs {
  fs::path matrix;
  fs::path treatment;
  int folds = 5;
  int grid_size = 30;
  double grid_ratio = 1e-4;
  double lambda = -1.0;  // >= 0 skips cross-validation
  bool no_fixed_effects = false;
  int max_iter = 500;
  double tol = 1e-6;
};

struct EffectsArgs {
  fs::path matrix;
  fs::path treatment;
  fs::path model;
  int bootstrap = 1000;
  fs::path classes;
  std::vector<std::string> groups;
  std::string focus = "CA";
  std::string key_filter;
};

struct RcaArgs {
  fs::path transactions;
  std::string anchor;
  int periods = 3;
  std::string focus = "CA";
  int period = -1;
  std::string product;
};

struct TtestArgs {
  fs::path input;
  std::string column;
  std::string group_column = "group";
  std::string group_a = "treated";
  std::string group_b = "control";
};

struct DidArgs {
  fs::path input;
  std::string outcome = "level";
};

struct DiversionArgs {
  fs::path matrix;
  fs::path treatment;
  fs::path model;
  fs::path classes;
  fs::path elasticity;
  std::string subset = "all";
  std::string focus = "CA";
  bool no_value_control = false;
};

struct MarginsArgs {
  fs::path input;
  std::string y;
  std::string x;
  int grid = 20;
};

struct PlaceboArgs {
  fs::path matrix;
  fs::path treatment;
  int shift = 1;
  int folds = 5;
  int grid_size = 30;
  double grid_ratio = 1e-4;
  int bootstrap = 1000;
};

struct SynthArgs {
  long rows = 300;
  long keys = 16;
  int periods = 3;
  int post = 1;
  long rank = 3;
  double baseline = 100.0;
  double row_fe_sd = 10.0;
  double col_fe_sd = 10.0;
  double factor_sd = 10.0;
  double noise_rel = 0.05;
  double missing = 0.0;
  double treated = 0.2;
  std::string rule = "constant";
  double effect = 0.1;
  bool absolute_effect = false;
};

struct ReportArgs {
  std::vector<fs::path> inputs;
};

/// Shared by every subcommand.
struct Common {
  fs::path out;
  std::uint64_t seed = 1;
  int threads = 0;
  nlohmann::json config;  // resolved options, echoed into manifest.json
  std::string command;
};

void write_manifest(const Common& common);

void run_build(const Common& c, const BuildArgs& a);
void run_fit(const Common& c, const FitArgs& a);
void run_effects(const Common& c, const EffectsArgs& a);
void run_rca(const Common& c, const RcaArgs& a);
void run_ttest(const Common& c, const TtestArgs& a);
void run_did(const Common& c, const DidArgs& a);
void run_diversion(const Common& c, const DiversionArgs& a);
void run_margins(const Common& c, const MarginsArgs& a);
void run_placebo(const Common& c, const PlaceboArgs& a);
void run_synth(const Common& c, const SynthArgs& a);
void run_report(const Common& c, const ReportArgs& a);

}  // namespace panelmc::cli
