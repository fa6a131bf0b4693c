#include "commands.hpp"

#include "panelmc/error.hpp"
#include "panelmc/kernels.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

using panelmc::cli::Common;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 2, kNumerical = 3, kIo = 4 };

int fail(Exit code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

/// Resolved option values of `app`, keyed by long name.
json resolved_options(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "version") continue;
    if (opt->get_expected_max() == 0) {
      j[name] = opt->count() > 0 && opt->as<bool>();
    } else if (opt->count() > 0) {
      const auto& results = opt->results();
      j[name] = opt->get_expected_max() > 1 ? json(results) : json(results.back());
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out,-o", c.out, "Output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual panel matrix completion toolkit"};
  app.set_version_flag("--version", panelmc::cli::kToolVersion);
  app.set_config("--config", "", "TOML config file; command-line flags override file values");
  app.require_subcommand(1);

  Common common;
  app.add_option("--seed", common.seed, "Master seed for every random stream")->capture_default_str();
  app.add_option("--threads", common.threads, "Worker threads (0 = OpenMP default)")->capture_default_str()->check(CLI::NonNegativeNumber);

  std::function<void()> action;
  std::vector<const CLI::App*> chain;

  panelmc::cli::BuildArgs build;
  auto* b = app.add_subcommand("build", "Transactions to outcome matrix and treatment mask");
  add_common(b, common);
  b->add_option("--transactions", build.transactions, "Transaction CSV")->required();
  b->add_option("--anchor", build.anchor, "First month of the treatment period (YYYY-MM)")->required();
  b->add_option("--periods", build.periods, "Number of annual periods")->capture_default_str();
  b->add_option("--post", build.post, "Post-treatment periods")->capture_default_str();
  b->add_option("--layout", build.layout, "product|firm")->capture_default_str();
  b->add_option("--flavor", build.flavor, "intensive|extensive")->capture_default_str();
  b->add_option("--focus", build.focus, "Focus destination")->capture_default_str();
  b->add_option("--top-k", build.top_k, "Named destinations by each ranking")->capture_default_str();
  b->add_option("--aggregate-map", build.aggregate_map, "CSV destination,aggregate");
  b->add_option("--rank-depth", build.rank_depth, "Product ranks per firm")->capture_default_str();
  b->add_flag("--log1p", build.log1p, "Store log(1 + value)");
  b->add_option("--treaty", build.treaty, "Treaty product list");
  b->add_option("--roster-rule", build.roster_rule, "any|all")->capture_default_str();
  b->add_option("--delimiter", build.delimiter, "Field delimiter")->capture_default_str();
  b->callback([&] { action = [&] { panelmc::cli::run_build(common, build); }; chain = {b}; });

  panelmc::cli::FitArgs fitargs;
  auto* f = app.add_subcommand("fit", "Cross-validated matrix completion");
  add_common(f, common);
  f->add_option("--matrix", fitargs.matrix, "Matrix directory")->required();
  f->add_option("--treatment", fitargs.treatment, "Treatment directory")->required();
  f->add_option("--folds,-K", fitargs.folds, "Cross-validation folds")->capture_default_str();
  f->add_option("--grid-size", fitargs.grid_size, "Lambda grid points")->capture_default_str();
  f->add_option("--grid-ratio", fitargs.grid_ratio, "Smallest / largest lambda")->capture_default_str();
  f->add_option("--lambda", fitargs.lambda, "Fixed lambda (skips cross-validation)");
  f->add_flag("--no-fixed-effects", fitargs.no_fixed_effects, "Force gamma = delta = 0");
  f->add_option("--max-iter", fitargs.max_iter, "Outer iteration cap")->capture_default_str();
  f->add_option("--tol", fitargs.tol, "Relative objective tolerance")->capture_default_str();
  f->callback([&] { action = [&] { panelmc::cli::run_fit(common, fitargs); }; chain = {f}; });

  panelmc::cli::EffectsArgs eff;
  auto* e = app.add_subcommand("effects", "Treatment effects, WATET and extensive-margin counts");
  add_common(e, common);
  e->add_option("--matrix", eff.matrix, "Matrix directory")->required();
  e->add_option("--treatment", eff.treatment, "Treatment directory")->required();
  e->add_option("--model", eff.model, "Model directory")->required();
  e->add_option("--bootstrap,-B", eff.bootstrap, "Bootstrap resamples")->capture_default_str();
  e->add_option("--classes", eff.classes, "Product class table CSV");
  e->add_option("--group", eff.groups, "class|rank|destination (repeatable)");
  e->add_option("--focus", eff.focus, "Focus destination for incumbents")->capture_default_str();
  e->add_option("--key-filter", eff.key_filter, "Restrict extensive counts to one key");
  e->callback([&] { action = [&] { panelmc::cli::run_effects(common, eff); }; chain = {e}; });

  auto* post = app.add_subcommand("posthoc", "Post-estimation analytics");
  post->require_subcommand(1);

  panelmc::cli::RcaArgs rca;
  auto* pr = post->add_subcommand("rca", "Revealed comparative advantage");
  add_common(pr, common);
  pr->add_option("--transactions", rca.transactions, "Transaction CSV")->required();
  pr->add_option("--anchor", rca.anchor, "First month of the treatment period")->required();
  pr->add_option("--periods", rca.periods, "Annual periods")->capture_default_str();
  pr->add_option("--focus", rca.focus, "Focus destination")->capture_default_str();
  pr->add_option("--period", rca.period, "Period to evaluate")->capture_default_str();
  pr->add_option("--product", rca.product, "Single product (default: all)");
  pr->callback([&] { action = [&] { panelmc::cli::run_rca(common, rca); }; chain = {post, pr}; });

  panelmc::cli::TtestArgs tt;
  auto* pt = post->add_subcommand("ttest", "Welch two-sample t-test");
  add_common(pt, common);
  pt->add_option("--input", tt.input, "CSV")->required();
  pt->add_option("--column", tt.column, "Variable")->required();
  pt->add_option("--group-column", tt.group_column, "Group column")->capture_default_str();
  pt->add_option("--a", tt.group_a, "First group label")->capture_default_str();
  pt->add_option("--b", tt.group_b, "Second group label")->capture_default_str();
  pt->callback([&] { action = [&] { panelmc::cli::run_ttest(common, tt); }; chain = {post, pt}; });

  panelmc::cli::DidArgs did;
  auto* pd = post->add_subcommand("did", "Two-way fixed-effects diff-in-diff");
  add_common(pd, common);
  pd->add_option("--input", did.input, "CSV with unit,period,y,treated")->required();
  pd->add_option("--outcome", did.outcome, "level|binary")->capture_default_str();
  pd->callback([&] { action = [&] { panelmc::cli::run_did(common, did); }; chain = {post, pd}; });

  panelmc::cli::DiversionArgs div;
  auto* pv = post->add_subcommand("diversion", "Trade-diversion regression");
  add_common(pv, common);
  pv->add_option("--matrix", div.matrix, "Matrix directory")->required();
  pv->add_option("--treatment", div.treatment, "Treatment directory")->required();
  pv->add_option("--model", div.model, "Model directory")->required();
  pv->add_option("--classes", div.classes, "Product class table CSV");
  pv->add_option("--elasticity", div.elasticity, "CSV product,elasticity");
  pv->add_option("--subset", div.subset, "all|above|below")->capture_default_str();
  pv->add_option("--focus", div.focus, "Focus destination")->capture_default_str();
  pv->add_flag("--no-value-control", div.no_value_control, "Drop the previous-period value regressor");
  pv->callback([&] { action = [&] { panelmc::cli::run_diversion(common, div); }; chain = {post, pv}; });

  panelmc::cli::MarginsArgs mg;
  auto* pm = post->add_subcommand("margins", "Covariate association with predicted margins");
  add_common(pm, common);
  pm->add_option("--input", mg.input, "CSV")->required();
  pm->add_option("--y", mg.y, "Outcome column")->required();
  pm->add_option("--x", mg.x, "Covariate column")->required();
  pm->add_option("--grid", mg.grid, "Grid points")->capture_default_str();
  pm->callback([&] { action = [&] { panelmc::cli::run_margins(common, mg); }; chain = {post, pm}; });

  panelmc::cli::PlaceboArgs pl;
  auto* p = app.add_subcommand("placebo", "Rerun on a pre-treatment window with a shifted treatment date");
  add_common(p, common);
  p->add_option("--matrix", pl.matrix, "Matrix directory")->required();
  p->add_option("--treatment", pl.treatment, "Treatment directory")->required();
  p->add_option("--shift", pl.shift, "Periods to move the treatment date back")->capture_default_str();
  p->add_option("--folds,-K", pl.folds, "Cross-validation folds")->capture_default_str();
  p->add_option("--grid-size", pl.grid_size, "Lambda grid points")->capture_default_str();
  p->add_option("--grid-ratio", pl.grid_ratio, "Smallest / largest lambda")->capture_default_str();
  p->add_option("--bootstrap,-B", pl.bootstrap, "Bootstrap resamples")->capture_default_str();
  p->callback([&] { action = [&] { panelmc::cli::run_placebo(common, pl); }; chain = {p}; });

  panelmc::cli::SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Synthetic panel with known effects");
  add_common(s, common);
  s->add_option("--rows", sy.rows, "Units")->capture_default_str();
  s->add_option("--keys", sy.keys, "Keys (destinations)")->capture_default_str();
  s->add_option("--periods", sy.periods, "Periods")->capture_default_str();
  s->add_option("--post", sy.post, "Post-treatment periods")->capture_default_str();
  s->add_option("--rank", sy.rank, "Rank of the interactive component")->capture_default_str();
  s->add_option("--baseline", sy.baseline, "Global level")->capture_default_str();
  s->add_option("--row-fe-sd", sy.row_fe_sd, "Row effect sd")->capture_default_str();
  s->add_option("--col-fe-sd", sy.col_fe_sd, "Column effect sd")->capture_default_str();
  s->add_option("--factor-sd", sy.factor_sd, "Low-rank entry sd")->capture_default_str();
  s->add_option("--noise-rel", sy.noise_rel, "Noise sd / signal sd")->capture_default_str();
  s->add_option("--missing", sy.missing, "Missing cell fraction")->capture_default_str();
  s->add_option("--treated", sy.treated, "Treated row fraction")->capture_default_str();
  s->add_option("--rule", sy.rule, "zero|constant|proportional")->capture_default_str();
  s->add_option("--effect", sy.effect, "Effect size")->capture_default_str();
  s->add_flag("--absolute-effect", sy.absolute_effect, "Constant rule adds --effect rather than --effect x mean");
  s->callback([&] { action = [&] { panelmc::cli::run_synth(common, sy); }; chain = {s}; });

  panelmc::cli::ReportArgs rep;
  auto* r = app.add_subcommand("report", "Bundle artifacts into one directory");
  add_common(r, common);
  r->add_option("--input", rep.inputs, "Artifact directory (repeatable)")->required();
  r->callback([&] { action = [&] { panelmc::cli::run_report(common, rep); }; chain = {r}; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    return fail(kValidation, "validation", err.what());
  }

  try {
    panelmc::kernels::set_thread_budget(common.threads);
    json config = resolved_options(app);
    std::string command;
    for (const auto* sub : chain) {
      command += (command.empty() ? "" : " ") + sub->get_name();
      config[sub->get_name()] = resolved_options(*sub);
    }
    common.command = command;
    common.config = config;
    action();
    panelmc::cli::write_manifest(common);
  } catch (const panelmc::Error& err) {
    switch (err.kind()) {
      case panelmc::ErrorKind::validation: return fail(kValidation, "validation", err.what());
      case panelmc::ErrorKind::numerical: return fail(kNumerical, "numerical", err.what());
      case panelmc::ErrorKind::io: return fail(kIo, "io", err.what());
    }
  } catch (const std::filesystem::filesystem_error& err) {
    return fail(kIo, "io", err.what());
  } catch (const std::exception& err) {
    return fail(kNumerical, "numerical", err.what());
  }
  return kOk;
}
