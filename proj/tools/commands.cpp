#include "commands.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/effects.hpp"
#include "panelmc/error.hpp"
#include "panelmc/ingest.hpp"
#include "panelmc/mcnnm.hpp"
#include "panelmc/posthoc.hpp"
#include "panelmc/synth.hpp"
#include "panelmc/treatment.hpp"
#include "panelmc/tune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

namespace panelmc::cli {

using nlohmann::json;

namespace {

// Stream ids for seeds derived from the master seed.
constexpr std::uint64_t kFoldStream = 1;
constexpr std::uint64_t kBootstrapStream = 2;
constexpr std::uint64_t kSvdStream = 3;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_json(const fs::path& path, const json& j) { csv::write_text(path, j.dump(2) + "\n"); }

fs::path prepare(const Common& c) {
  if (c.out.empty()) throw ValidationError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

/// Header-keyed string table.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("cannot open " + path.string());
  const auto lines = csv::read_lines(path);
  Table t;
  if (lines.empty()) throw SchemaError(path.string() + " is empty");
  t.header = csv::split_line(lines[0]);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    auto fields = csv::split_line(lines[n]);
    if (fields.size() != t.header.size())
      throw ValidationError(path.string() + ": line " + std::to_string(n + 1) + " has the wrong field count");
    t.rows.push_back(std::move(fields));
  }
  return t;
}

std::optional<double> optional_number(const std::string& s) {
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return std::nullopt;
  return csv::parse_double(s);
}

FitOptions fit_options(const Common& c) {
  FitOptions fo;
  fo.svd.seed = mix_seed(c.seed, kSvdStream);
  return fo;
}

struct Loaded {
  OutcomeMatrix matrix;
  TreatmentMask treatment;
};

Loaded load_inputs(const fs::path& matrix, const fs::path& treatment) {
  if (matrix.empty()) throw ValidationError("--matrix is required");
  if (treatment.empty()) throw ValidationError("--treatment is required");
  Loaded l{read_matrix_dir(matrix), read_treatment_dir(treatment)};
  l.matrix.validate();
  if (l.treatment.treated.rows() != l.matrix.rows() || l.treatment.treated.cols() != l.matrix.cols())
    throw ValidationError("treatment mask does not match the matrix shape");
  return l;
}

EffectsTable intensive_effects(const OutcomeMatrix& m, const Matrix& pred, const TreatmentMask& t, const fs::path& classes) {
  EffectsTable table = tet(m, pred, t);
  const auto base = previous_period_values(table, m);
  tet_pct(table, base);
  std::optional<ClassTable> ct;
  if (!classes.empty()) ct = load_class_table(classes);
  assign_groups(table, m, ct ? &*ct : nullptr);
  return table;
}

json model_json(const CompletionModel& model) {
  json j;
  j["lambda"] = model.lambda;
  j["rank"] = model.rank;
  j["iterations"] = model.iterations;
  j["converged"] = model.converged;
  j["objective"] = model.final_objective();
  j["nuclear_norm"] = model.nuclear_norm;
  return j;
}

/// Cross-validated fit of the fitting cells of `m`; writes CV and model artifacts into `dir`.
CompletionModel tune_into(const Common& c, const OutcomeMatrix& m, const TreatmentMask& t, int folds, int grid_size,
                          double grid_ratio, const FitOptions& fo, const fs::path& dir) {
  const BoolGrid fm = t.fit_mask(m);
  const double treated = static_cast<double>(t.count());
  if (treated == 0) throw ValidationError("treatment mask is empty");
  TuneOptions opts;
  opts.folds = folds;
  opts.seed = mix_seed(c.seed, kFoldStream);
  opts.grid_size = grid_size;
  opts.grid_ratio = grid_ratio;
  opts.fit = fo;
  TuneResult r = tune_and_fit(m.values, fm, treated / (treated + static_cast<double>(fm.count())), opts);
  csv::write_text(dir / "cv_report.csv", cv_report_csv(r.cv));
  csv::write_text(dir / "cv_summary.json", cv_summary_json(r.cv, r.cv_metrics));
  return std::move(r.model);
}

}  // namespace

void write_manifest(const Common& c) {
  json j;
  j["tool"] = "panelmc";
  j["tool_version"] = kToolVersion;
  j["schema_version"] = kSchemaVersion;
  j["command"] = c.command;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["config"] = c.config;
  write_json(c.out / "manifest.json", j);
}

void run_build(const Common& c, const BuildArgs& a) {
  if (a.transactions.empty()) throw ValidationError("--transactions is required");
  if (a.anchor.empty()) throw ValidationError("--anchor is required");
  if (a.delimiter.size() != 1) throw ValidationError("--delimiter must be a single character");
  const Month anchor = Month::parse(a.anchor);
  RosterRule rule = RosterRule::any_listed;
  if (a.roster_rule == "all") {
    rule = RosterRule::all_listed;
  } else if (a.roster_rule != "any") {
    throw ValidationError("--roster-rule must be any|all");
  }
  const Flavor flavor = parse_flavor(a.flavor);
  if (a.layout != "product" && a.layout != "firm") throw ValidationError("--layout must be product|firm");
  if (a.layout == "firm" && flavor != Flavor::intensive) throw ValidationError("the firm layout is intensive only");

  const auto dir = prepare(c);
  Schema schema;
  schema.delimiter = a.delimiter[0];
  const TransactionSet tx = load_transactions(a.transactions, schema);
  const AnnualPanel panel = annualize(tx, anchor, a.periods, a.post);

  MatrixBuild build;
  json info;
  if (a.layout == "product") {
    std::map<std::string, std::string> aggregates;
    if (!a.aggregate_map.empty()) aggregates = load_aggregate_map(a.aggregate_map);
    RankingOptions ro;
    ro.top_k = a.top_k;
    ro.focus = a.focus;
    const DestinationScheme scheme = rank_destinations(panel, aggregates, ro);
    json ranking = json::array();
    for (const auto& r : scheme.ranking)
      ranking.push_back({{"destination", r.destination},
                         {"avg_value", r.avg_value},
                         {"avg_products", r.avg_products},
                         {"rank_by_value", r.rank_by_value},
                         {"rank_by_products", r.rank_by_products},
                         {"combined_rank", r.combined_rank},
                         {"named", r.named},
                         {"column", r.column}});
    write_json(dir / "destinations.json", {{"schema_version", kSchemaVersion}, {"columns", scheme.columns}, {"ranking", ranking}});
    ProductMatrixOptions po;
    po.flavor = flavor;
    po.focus = a.focus;
    po.log1p = a.log1p;
    build = build_product_matrix(panel, scheme, po);
  } else {
    FirmMatrixOptions fo;
    fo.rank_depth = a.rank_depth;
    fo.focus = a.focus;
    fo.log1p = a.log1p;
    build = build_firm_matrix(panel, fo);
  }
  write_matrix_dir(build.matrix, dir / "matrix");

  if (!a.treaty.empty()) {
    const auto treaty = load_treaty_list(a.treaty);
    TreatmentMask mask;
    if (a.layout == "product") {
      mask = product_treatment(build.matrix, treaty, 0);
    } else {
      const FirmRoster roster = firm_roster(panel, treaty, 0, a.focus, rule);
      csv::write_text(dir / "roster.json", roster_json(roster));
      mask = firm_treatment(build.matrix, roster, 0);
    }
    write_treatment_dir(mask, dir / "treatment");
    info["treated_cells"] = mask.count();
    info["treated_units"] = mask.treated_units.size();
    info["unmatched_treaty_products"] = mask.unmatched;
  }

  std::string rejected = "line,reason\n";
  for (const auto& r : tx.rejected) rejected += std::to_string(r.line) + "," + csv::escape_field(r.reason) + "\n";
  csv::write_text(dir / "rejected.csv", rejected);

  info["schema_version"] = kSchemaVersion;
  info["rows_read"] = tx.rows_read;
  info["rows_rejected"] = tx.rejected.size();
  info["records"] = tx.records.size();
  info["total_value"] = tx.total_value;
  info["dropped_records_outside_window"] = panel.dropped_records;
  info["dropped_value_outside_window"] = panel.dropped_value;
  info["panel_periods"] = panel.periods();
  info["candidate_rows"] = build.candidates;
  info["dropped_rows"] = build.dropped_rows;
  info["matrix_rows"] = build.matrix.rows();
  info["matrix_cols"] = build.matrix.cols();
  write_json(dir / "build.json", info);
}

void run_fit(const Common& c, const FitArgs& a) {
  if (a.folds < 2) throw ValidationError("cross-validation needs --folds >= 2");
  if (a.grid_size < 1) throw ValidationError("--grid-size must be positive");
  if (!(a.grid_ratio > 0.0) || a.grid_ratio >= 1.0) throw ValidationError("--grid-ratio must lie in (0, 1)");
  const auto in = load_inputs(a.matrix, a.treatment);
  const auto dir = prepare(c);
  FitOptions fo = fit_options(c);
  fo.fixed_effects = !a.no_fixed_effects;
  fo.max_iter = a.max_iter;
  fo.tol = a.tol;

  CompletionModel model;
  if (a.lambda >= 0.0) {
    model = fit(in.matrix.values, in.treatment.fit_mask(in.matrix), a.lambda, fo);
  } else {
    model = tune_into(c, in.matrix, in.treatment, a.folds, a.grid_size, a.grid_ratio, fo, dir);
  }
  write_model_dir(model, dir / "model");
  csv::write_matrix(dir / "predictions.csv", predict(model));
  json j = model_json(model);
  j["schema_version"] = kSchemaVersion;
  j["cross_validated"] = a.lambda < 0.0;
  j["fixed_effects"] = fo.fixed_effects;
  write_json(dir / "fit.json", j);
}

void run_effects(const Common& c, const EffectsArgs& a) {
  std::vector<Grouping> groupings;
  for (const auto& g : a.groups) groupings.push_back(parse_grouping(g));
  if (a.bootstrap < 0) throw ValidationError("--bootstrap must be non-negative");
  const auto in = load_inputs(a.matrix, a.treatment);
  if (a.model.empty()) throw ValidationError("--model is required");
  const CompletionModel model = read_model_dir(a.model);
  const Matrix pred = predict(model);
  if (pred.rows() != in.matrix.rows() || pred.cols() != in.matrix.cols())
    throw ValidationError("model shape does not match the matrix");
  const auto dir = prepare(c);

  if (in.matrix.flavor == Flavor::extensive) {
    const Matrix bin = binarize(pred);
    csv::write_text(dir / "effects.csv", effects_csv(tet(in.matrix, bin, in.treatment)));
    const auto incumbents = count_incumbents(in.matrix, a.focus, in.treatment.tau);
    csv::write_text(dir / "extensive.json",
                    extensive_json(extensive_margin(in.matrix, bin, in.treatment, incumbents, a.key_filter)));
    return;
  }

  const EffectsTable table = intensive_effects(in.matrix, pred, in.treatment, a.classes);
  csv::write_text(dir / "effects.csv", effects_csv(table));
  WatetOptions wo;
  wo.bootstrap = a.bootstrap;
  wo.seed = mix_seed(c.seed, kBootstrapStream);
  csv::write_text(dir / "watet.json", watet_json(watet(table, wo)));
  for (std::size_t g = 0; g < groupings.size(); ++g)
    csv::write_text(dir / ("groups_" + a.groups[g] + ".json"),
                    group_watet_json(group_watet(table, groupings[g], wo), groupings[g]));
}

void run_rca(const Common& c, const RcaArgs& a) {
  if (a.transactions.empty()) throw ValidationError("--transactions is required");
  if (a.anchor.empty()) throw ValidationError("--anchor is required");
  const Month anchor = Month::parse(a.anchor);
  const auto dir = prepare(c);
  const AnnualPanel panel = annualize(load_transactions(a.transactions), anchor, a.periods, 1);
  std::map<std::string, RcaValue> values;
  if (!a.product.empty()) {
    values[a.product] = rca(panel, a.product, a.focus, a.period);
  } else {
    values = rca_all(panel, a.focus, a.period);
  }
  std::string text = "product,rca,focus_product,focus_total,world_product,world_total,advantage\n";
  for (const auto& [p, v] : values)
    text += csv::escape_field(p) + "," + csv::format_double(v.value) + "," + csv::format_double(v.focus_product) + "," +
            csv::format_double(v.focus_total) + "," + csv::format_double(v.world_product) + "," +
            csv::format_double(v.world_total) + "," + (v.advantage() ? "1" : "0") + "\n";
  csv::write_text(dir / "rca.csv", text);
}

void run_ttest(const Common& c, const TtestArgs& a) {
  if (a.input.empty() || a.column.empty()) throw ValidationError("--input and --column are required");
  const Table t = read_table(a.input);
  const auto vc = t.column(a.column);
  const auto gc = t.column(a.group_column);
  std::vector<double> xa, xb;
  std::size_t skipped = 0;
  for (const auto& r : t.rows) {
    const auto v = optional_number(r[vc]);
    if (!v) {
      ++skipped;
      continue;
    }
    if (r[gc] == a.group_a) xa.push_back(*v);
    if (r[gc] == a.group_b) xb.push_back(*v);
  }
  const WelchResult w = welch_ttest(xa, xb);
  const auto dir = prepare(c);
  write_json(dir / "ttest.json", {{"schema_version", kSchemaVersion},
                                  {"variable", a.column},
                                  {"group_a", a.group_a},
                                  {"group_b", a.group_b},
                                  {"n_a", xa.size()},
                                  {"n_b", xb.size()},
                                  {"n_missing", skipped},
                                  {"mean_a", w.mean_a},
                                  {"mean_b", w.mean_b},
                                  {"mean_diff", w.mean_diff},
                                  {"t", std::isfinite(w.t) ? json(w.t) : json(w.t > 0 ? "inf" : "-inf")},
                                  {"df", w.df},
                                  {"p", w.p}});
}

void run_did(const Common& c, const DidArgs& a) {
  if (a.input.empty()) throw ValidationError("--input is required");
  const OutcomeKind kind = parse_outcome_kind(a.outcome);
  const Table t = read_table(a.input);
  const auto uc = t.column("unit"), pc = t.column("period"), yc = t.column("y"), dc = t.column("treated");
  std::vector<PanelObservation> obs;
  for (const auto& r : t.rows) {
    const auto d = csv::parse_double(r[dc]);
    if (d != 0.0 && d != 1.0) throw ValidationError("treated column must be 0/1");
    obs.push_back({r[uc], static_cast<int>(csv::parse_double(r[pc])), csv::parse_double(r[yc]), d == 1.0});
  }
  const RegressionResult res = diff_in_diff(obs, kind);
  const auto dir = prepare(c);
  csv::write_text(dir / "did.json", regression_json(res));
  csv::write_text(dir / "did.txt", regression_table(std::span<const RegressionResult>(&res, 1)));
}

void run_diversion(const Common& c, const DiversionArgs& a) {
  const ElasticitySubset subset = parse_subset(a.subset);
  const auto in = load_inputs(a.matrix, a.treatment);
  if (in.matrix.flavor != Flavor::intensive) throw ValidationError("diversion needs an intensive matrix");
  if (a.model.empty()) throw ValidationError("--model is required");
  const Matrix pred = predict(read_model_dir(a.model));
  const EffectsTable table = intensive_effects(in.matrix, pred, in.treatment, a.classes);
  std::map<std::string, double> elasticity;
  if (!a.elasticity.empty()) {
    const Table t = read_table(a.elasticity);
    const auto pc = t.column("product"), ec = t.column("elasticity");
    for (const auto& r : t.rows)
      if (auto v = optional_number(r[ec])) elasticity[r[pc]] = *v;
  }
  if (subset != ElasticitySubset::all && elasticity.empty())
    throw ValidationError("--subset above|below needs --elasticity");
  const auto obs = diversion_observations(table, a.focus, elasticity);
  const RegressionResult res = diversion_regression(obs, subset, !a.no_value_control);
  const auto dir = prepare(c);
  csv::write_text(dir / "diversion.json", regression_json(res));

  // One column per standard-error type.
  std::vector<RegressionResult> columns;
  RegressionResult plain = res;
  plain.se_cluster1.reset();
  plain.se_cluster2.reset();
  columns.push_back(plain);
  if (res.se_cluster1) {
    RegressionResult one = res;
    one.se_cluster2.reset();
    columns.push_back(one);
  }
  if (res.se_cluster2) columns.push_back(res);
  csv::write_text(dir / "diversion.txt", regression_table(columns));
}

void run_margins(const Common& c, const MarginsArgs& a) {
  if (a.input.empty() || a.y.empty() || a.x.empty()) throw ValidationError("--input, --y and --x are required");
  const Table t = read_table(a.input);
  const auto yc = t.column(a.y), xc = t.column(a.x);
  std::vector<std::optional<double>> ys, xs;
  for (const auto& r : t.rows) {
    ys.push_back(optional_number(r[yc]));
    xs.push_back(optional_number(r[xc]));
  }
  const MarginResult m = margin_association(ys, xs, a.grid, a.y, a.x);
  const auto dir = prepare(c);
  csv::write_text(dir / "margins.csv", margins_csv(m));
  csv::write_text(dir / "margins.json", regression_json(m.regression));
}

void run_placebo(const Common& c, const PlaceboArgs& a) {
  if (a.folds < 2) throw ValidationError("cross-validation needs --folds >= 2");
  if (a.shift < 1) throw ValidationError("--shift must be at least 1");
  const auto in = load_inputs(a.matrix, a.treatment);
  const int tau = in.treatment.tau;
  std::vector<int> pre;
  for (int p : in.matrix.periods())
    if (p < tau) pre.push_back(p);
  if (pre.size() < 3)
    throw ValidationError("placebo needs a pre-treatment window of at least 3 periods, found " + std::to_string(pre.size()));
  if (static_cast<int>(pre.size()) - a.shift < 2)
    throw ValidationError("--shift leaves fewer than 2 pseudo pre-treatment periods");
  const int pseudo_tau = tau - a.shift;

  // Keep only genuinely pre-treatment columns and move the treatment date back.
  std::vector<Index> keep;
  for (Index j = 0; j < in.matrix.cols(); ++j)
    if (in.matrix.columns[static_cast<std::size_t>(j)].period < tau) keep.push_back(j);
  OutcomeMatrix m;
  m.flavor = in.matrix.flavor;
  m.layout = in.matrix.layout;
  m.row_labels = in.matrix.row_labels;
  m.row_products = in.matrix.row_products;
  m.values.resize(in.matrix.rows(), static_cast<Index>(keep.size()));
  m.observed.resize(in.matrix.rows(), static_cast<Index>(keep.size()));
  for (std::size_t n = 0; n < keep.size(); ++n) {
    m.columns.push_back(in.matrix.columns[static_cast<std::size_t>(keep[n])]);
    m.values.col(static_cast<Index>(n)) = in.matrix.values.col(keep[n]);
    m.observed.col(static_cast<Index>(n)) = in.matrix.observed.col(keep[n]);
  }
  TreatmentMask t;
  t.tau = pseudo_tau;
  t.treated = BoolGrid::Constant(m.rows(), m.cols(), false);
  for (Index i = 0; i < m.rows(); ++i) {
    bool unit_treated = false;
    for (Index j = 0; j < in.matrix.cols(); ++j) unit_treated = unit_treated || in.treatment.treated(i, j);
    if (!unit_treated) continue;
    t.treated_units.push_back(m.row_labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < m.cols(); ++j)
      if (m.columns[static_cast<std::size_t>(j)].period >= pseudo_tau && m.observed(i, j)) t.treated(i, j) = true;
  }
  if (t.count() == 0) throw ValidationError("placebo: no treated unit is observed in the pseudo post-period");

  const auto dir = prepare(c);
  write_matrix_dir(m, dir / "matrix");
  write_treatment_dir(t, dir / "treatment");
  const CompletionModel model = tune_into(c, m, t, a.folds, a.grid_size, a.grid_ratio, fit_options(c), dir);
  write_model_dir(model, dir / "model");
  const Matrix pred = predict(model);

  json j;
  j["schema_version"] = kSchemaVersion;
  j["tau"] = tau;
  j["pseudo_tau"] = pseudo_tau;
  j["shift"] = a.shift;
  if (m.flavor == Flavor::extensive) {
    const Matrix bin = binarize(pred);
    const auto rep = extensive_margin(m, bin, t, 0);
    j["attributed_entries"] = rep.attributed_entries;
    j["attributed_exits"] = rep.attributed_exits;
    j["treated_cells"] = rep.cells;
  } else {
    const EffectsTable table = intensive_effects(m, pred, t, {});
    csv::write_text(dir / "effects.csv", effects_csv(table));
    WatetOptions wo;
    wo.bootstrap = a.bootstrap;
    wo.seed = mix_seed(c.seed, kBootstrapStream);
    const WatetResult w = watet(table, wo);
    csv::write_text(dir / "watet.json", watet_json(w));
    j["watet"] = w.watet;
    j["weighted_sd"] = optional_json(w.weighted_sd);
    j["boot_p"] = optional_json(w.boot_p);
    j["significant_at_5pct"] = w.boot_p ? json(*w.boot_p < 0.05) : json(nullptr);
  }
  write_json(dir / "placebo.json", j);
}

void run_synth(const Common& c, const SynthArgs& a) {
  DgpConfig cfg;
  cfg.rows = a.rows;
  cfg.keys = a.keys;
  cfg.periods = a.periods;
  cfg.post_periods = a.post;
  cfg.rank = a.rank;
  cfg.baseline = a.baseline;
  cfg.row_fe_sd = a.row_fe_sd;
  cfg.col_fe_sd = a.col_fe_sd;
  cfg.factor_sd = a.factor_sd;
  cfg.noise_rel = a.noise_rel;
  cfg.missing_fraction = a.missing;
  cfg.treated_fraction = a.treated;
  cfg.rule = parse_effect_rule(a.rule);
  cfg.effect = a.effect;
  cfg.effect_relative = !a.absolute_effect;
  cfg.seed = c.seed;
  const SyntheticPanel p = generate(cfg);
  const auto dir = prepare(c);
  write_matrix_dir(p.matrix, dir / "matrix");
  write_treatment_dir(p.treatment, dir / "treatment");
  csv::write_text(dir / "truth.csv", truth_csv(p));
  csv::write_text(dir / "dgp.json", dgp_json(cfg, p.truth));
}

void run_report(const Common& c, const ReportArgs& a) {
  if (a.inputs.empty()) throw ValidationError("report needs at least one --input directory");
  std::set<std::string> names;
  for (const auto& in : a.inputs) {
    if (!fs::is_directory(in)) throw IoError("not a directory: " + in.string());
    const auto name = fs::absolute(in).lexically_normal().filename().string();
    if (name.empty() || !names.insert(name).second)
      throw ValidationError("report inputs need distinct directory names: " + in.string());
  }
  const auto dir = prepare(c);
  json index = json::array();
  for (const auto& in : a.inputs) {
    const auto name = fs::absolute(in).lexically_normal().filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(in))
      if (e.is_regular_file()) {
        const auto ext = e.path().extension().string();
        if (ext == ".json" || ext == ".csv" || ext == ".txt") files.push_back(e.path());
      }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto rel = fs::path(name) / fs::relative(f, in);
      fs::create_directories((dir / rel).parent_path());
      const std::string bytes = csv::read_text(f);
      csv::write_text(dir / rel, bytes);
      index.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()}});
    }
  }
  write_json(dir / "index.json", {{"schema_version", kSchemaVersion}, {"files", index}});
}

}  // namespace panelmc::cli
