#include "panelmc/mcnnm.hpp"

#include "panelmc/csv.hpp"
#include "panelmc/error.hpp"
#include "panelmc/kernels.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace panelmc {

namespace fs = std::filesystem;

namespace {

struct Kernels {
  bool parallel;

  double rows(const Matrix& y, const Matrix& l, const BoolGrid& m, const Vector& n, const Vector& d, Vector& g) const {
    return parallel ? kernels::parallel::update_row_effects(y, l, m, n, d, g)
                    : kernels::serial::update_row_effects(y, l, m, n, d, g);
  }
  double cols(const Matrix& y, const Matrix& l, const BoolGrid& m, const Vector& n, const Vector& g, Vector& d) const {
    return parallel ? kernels::parallel::update_col_effects(y, l, m, n, g, d)
                    : kernels::serial::update_col_effects(y, l, m, n, g, d);
  }
  void fill(const Matrix& y, const Matrix& l, const Vector& g, const Vector& d, const BoolGrid& m, Matrix& z) const {
    parallel ? kernels::parallel::fill_target(y, l, g, d, m, z) : kernels::serial::fill_target(y, l, g, d, m, z);
  }
  double sse(const Matrix& y, const Matrix& l, const Vector& g, const Vector& d, const BoolGrid& m) const {
    return parallel ? kernels::parallel::masked_sse(y, l, g, d, m) : kernels::serial::masked_sse(y, l, g, d, m);
  }
};

void check_inputs(const Matrix& y, const BoolGrid& mask, const kernels::MaskCounts& counts) {
  if (mask.rows() != y.rows() || mask.cols() != y.cols()) throw ValidationError("fit mask shape does not match Y");
  if (y.size() == 0) throw ValidationError("cannot fit an empty matrix");
  for (Index i = 0; i < y.rows(); ++i)
    if (counts.rows(i) == 0) throw ValidationError("row " + std::to_string(i) + " has no observed cell");
  for (Index j = 0; j < y.cols(); ++j)
    if (counts.cols(j) == 0) throw ValidationError("column " + std::to_string(j) + " has no observed cell");
  for (Index j = 0; j < y.cols(); ++j)
    for (Index i = 0; i < y.rows(); ++i)
      if (mask(i, j) && !std::isfinite(y(i, j)))
        throw ValidationError("non-finite observed value at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
}

// Exact minimisation over (gamma, delta) for fixed L, then gamma centred.
void sweep_fixed_effects(const Kernels& k, const Matrix& y, const Matrix& low_rank, const BoolGrid& mask,
                         const kernels::MaskCounts& counts, const FitOptions& opts, Vector& gamma, Vector& delta) {
  for (int it = 0; it < opts.max_inner; ++it) {
    const double c1 = k.rows(y, low_rank, mask, counts.rows, delta, gamma);
    const double c2 = k.cols(y, low_rank, mask, counts.cols, gamma, delta);
    const double scale = 1.0 + gamma.cwiseAbs().maxCoeff() + delta.cwiseAbs().maxCoeff();
    if (std::max(c1, c2) < opts.inner_tol * scale) break;
  }
  const double shift = gamma.mean();
  gamma.array() -= shift;
  delta.array() += shift;
}

}  // namespace

CompletionModel fit(const Matrix& y, const BoolGrid& fit_mask, double lambda, const FitOptions& opts,
                    const CompletionModel* warm_start) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and nonnegative");
  const auto counts = kernels::count_mask(fit_mask);
  check_inputs(y, fit_mask, counts);
  const Kernels k{opts.parallel};
  const double n_obs = counts.total;
  const double level = shrink_level(lambda, n_obs);

  CompletionModel model;
  model.lambda = lambda;
  if (warm_start) {
    if (warm_start->low_rank.rows() != y.rows() || warm_start->low_rank.cols() != y.cols())
      throw ValidationError("warm start shape does not match Y");
    model.low_rank = warm_start->low_rank;
    model.row_effects = warm_start->row_effects;
    model.col_effects = warm_start->col_effects;
    model.rank = warm_start->rank;
    model.nuclear_norm = warm_start->nuclear_norm;
  } else {
    model.low_rank = Matrix::Zero(y.rows(), y.cols());
    model.row_effects = Vector::Zero(y.rows());
    model.col_effects = Vector::Zero(y.cols());
    if (opts.fixed_effects) {
      k.rows(y, model.low_rank, fit_mask, counts.rows, model.col_effects, model.row_effects);
      k.cols(y, model.low_rank, fit_mask, counts.cols, model.row_effects, model.col_effects);
      const double shift = model.row_effects.mean();
      model.row_effects.array() -= shift;
      model.col_effects.array() += shift;
    }
  }
  if (!opts.fixed_effects) {
    model.row_effects.setZero();
    model.col_effects.setZero();
  }

  double previous = k.sse(y, model.low_rank, model.row_effects, model.col_effects, fit_mask) / n_obs +
                    lambda * model.nuclear_norm;
  Matrix target;
  for (int it = 1; it <= opts.max_iter; ++it) {
    if (opts.fixed_effects)
      sweep_fixed_effects(k, y, model.low_rank, fit_mask, counts, opts, model.row_effects, model.col_effects);
    k.fill(y, model.low_rank, model.row_effects, model.col_effects, fit_mask, target);
    ShrunkMatrix shrunk = singular_value_shrink(target, level, opts.svd, model.rank);
    model.low_rank = std::move(shrunk.low_rank);
    model.rank = shrunk.rank;
    model.nuclear_norm = shrunk.nuclear_norm;

    const double current = k.sse(y, model.low_rank, model.row_effects, model.col_effects, fit_mask) / n_obs +
                           lambda * model.nuclear_norm;
    if (!std::isfinite(current)) throw NumericalError("objective became non-finite");
    model.trace.push_back(current);
    model.iterations = it;
    const double denom = std::max(std::abs(previous), 1e-300);
    if (std::abs(previous - current) / denom < opts.tol || current == 0.0) {
      model.converged = true;
      break;
    }
    previous = current;
  }
  return model;
}

Matrix predict(const CompletionModel& model) {
  Matrix out = model.low_rank;
  out.colwise() += model.row_effects;
  out.rowwise() += model.col_effects.transpose();
  return out;
}

double objective(const Matrix& y, const BoolGrid& mask, const CompletionModel& model, double lambda) {
  if (mask.rows() != y.rows() || mask.cols() != y.cols() || model.low_rank.rows() != y.rows() ||
      model.low_rank.cols() != y.cols())
    throw ValidationError("objective: shapes do not align");
  const double n = static_cast<double>(mask.count());
  if (n == 0) throw ValidationError("objective: no observed cells");
  const double sse = kernels::serial::masked_sse(y, model.low_rank, model.row_effects, model.col_effects, mask);
  double nuclear = 0.0;
  if (lambda != 0.0 && model.low_rank.size() > 0) {
    Eigen::BDCSVD<Matrix> svd(model.low_rank);
    nuclear = svd.singularValues().sum();
  }
  return sse / n + lambda * nuclear;
}

double lambda_max(const Matrix& y, const BoolGrid& fit_mask, const FitOptions& opts) {
  FitOptions fe_only = opts;
  fe_only.max_iter = 0;
  CompletionModel start = fit(y, fit_mask, 0.0, fe_only);
  if (opts.fixed_effects) {
    const auto counts = kernels::count_mask(fit_mask);
    sweep_fixed_effects(Kernels{opts.parallel}, y, start.low_rank, fit_mask, counts, opts, start.row_effects,
                        start.col_effects);
  }
  Matrix residual;
  kernels::serial::fill_target(y, start.low_rank, start.row_effects, start.col_effects, fit_mask, residual);
  Eigen::BDCSVD<Matrix> svd(residual);
  const double sigma = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  return 2.0 * sigma / static_cast<double>(fit_mask.count());
}

std::vector<double> lambda_grid(double lambda_hi, int n, double ratio) {
  if (n < 1) throw ValidationError("lambda grid needs at least one point");
  if (!(lambda_hi > 0.0) || !(ratio > 0.0) || ratio > 1.0) throw ValidationError("lambda grid needs lambda_max > 0 and ratio in (0, 1]");
  std::vector<double> grid;
  if (n == 1) return {lambda_hi};
  const double step = std::log(ratio) / static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) grid.push_back(lambda_hi * std::exp(step * i));
  return grid;
}

Matrix binarize(const Matrix& predicted, double threshold) {
  return predicted.unaryExpr([threshold](double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return c >= threshold ? 1.0 : 0.0;
  });
}

void write_model_dir(const CompletionModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  csv::write_matrix(dir / "low_rank.csv", model.low_rank);
  csv::write_vector(dir / "row_effects.csv", model.row_effects);
  csv::write_vector(dir / "col_effects.csv", model.col_effects);
  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["lambda"] = model.lambda;
  meta["rank"] = model.rank;
  meta["iterations"] = model.iterations;
  meta["converged"] = model.converged;
  meta["final_objective"] = model.final_objective();
  meta["nuclear_norm"] = model.nuclear_norm;
  meta["trace"] = model.trace;
  csv::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

CompletionModel read_model_dir(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw IoError("not a model directory: " + dir.string());
  CompletionModel model;
  try {
    const auto meta = nlohmann::json::parse(csv::read_text(dir / "meta.json"));
    model.lambda = meta.at("lambda").get<double>();
    model.rank = meta.at("rank").get<Index>();
    model.iterations = meta.at("iterations").get<int>();
    model.converged = meta.at("converged").get<bool>();
    model.nuclear_norm = meta.value("nuclear_norm", 0.0);
    model.trace = meta.value("trace", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed meta.json: " + std::string(e.what()));
  }
  model.low_rank = csv::read_matrix(dir / "low_rank.csv");
  model.row_effects = csv::read_vector(dir / "row_effects.csv");
  model.col_effects = csv::read_vector(dir / "col_effects.csv");
  if (model.row_effects.size() != model.low_rank.rows() || model.col_effects.size() != model.low_rank.cols())
    throw ValidationError("model files have inconsistent shapes");
  return model;
}

}  // namespace panelmc
