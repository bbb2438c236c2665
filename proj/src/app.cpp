#include "odrid/app.hpp"

#include "odrid/collocation.hpp"
#include "odrid/evidence.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace odrid {

using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw AppError("config", where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw AppError("config", "unknown key '" + it.key() + "' in " + where);
  }
}

EvidenceMethod parse_method(const std::string& s) {
  if (s == "gauss_newton") return EvidenceMethod::gauss_newton;
  if (s == "full_hessian") return EvidenceMethod::full_hessian;
  throw AppError("config", "evidence.method must be gauss_newton or full_hessian");
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j,
             {"system", "system_params", "input_csv", "library", "fd_order", "dt", "T",
              "noise_level", "seed", "hyperparameters", "solver", "selection", "evidence",
              "grid", "workers"},
             "config");
  RunConfig c;
  get_to(j, "system", c.system);
  get_to(j, "input_csv", c.input_csv);
  if (c.system.empty() == c.input_csv.empty())
    throw AppError("config", "exactly one of 'system' and 'input_csv' must be given");

  // System defaults first, then explicit overrides.
  if (!c.system.empty()) {
    if (j.contains("system_params")) c.system_params = j["system_params"].get<std::map<std::string, double>>();
    SystemDef s;
    try {
      s = make_system(c.system, c.system_params);
    } catch (const std::invalid_argument& e) {
      throw AppError("config", e.what());
    }
    c.state_dim = s.state_dim;
    c.poly_order = s.defaults.poly_order;
    c.include_constant = s.defaults.include_constant;
    c.fd_order = s.defaults.fd_order;
    c.dt = s.defaults.dt;
    c.T = s.defaults.T;
    c.sigma_dt = s.defaults.sigma_dt;
    c.sigma_p = s.defaults.sigma_p;
  }
  if (j.contains("library")) {
    const json& l = j["library"];
    check_keys(l, {"state_dim", "poly_order", "include_constant"}, "library");
    int d = c.state_dim;
    get_to(l, "state_dim", d);
    if (!c.system.empty() && d != c.state_dim)
      throw AppError("dimension_mismatch", "library.state_dim does not match the system");
    c.state_dim = d;
    get_to(l, "poly_order", c.poly_order);
    get_to(l, "include_constant", c.include_constant);
  }
  get_to(j, "fd_order", c.fd_order);
  get_to(j, "dt", c.dt);
  get_to(j, "T", c.T);
  get_to(j, "noise_level", c.noise_level);
  get_to(j, "seed", c.seed);
  get_to(j, "workers", c.workers);

  if (j.contains("hyperparameters")) {
    const json& h = j["hyperparameters"];
    check_keys(h, {"sigma_x", "sigma_dt", "sigma_p", "hard_constraint"}, "hyperparameters");
    if (h.contains("sigma_x")) {
      const json& sx = h["sigma_x"];
      if (sx.is_string()) {
        if (sx.get<std::string>() != "auto") throw AppError("config", "sigma_x must be a number, a list or \"auto\"");
      } else if (sx.is_array()) {
        c.sigma_x_per_state = sx.get<std::vector<double>>();
      } else if (sx.is_number()) {
        c.sigma_x = sx.get<double>();
      } else if (!sx.is_null()) {
        throw AppError("config", "sigma_x must be a number, a list or \"auto\"");
      }
    }
    get_to(h, "sigma_dt", c.sigma_dt);
    get_to(h, "sigma_p", c.sigma_p);
    get_to(h, "hard_constraint", c.hard_constraint);
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    check_keys(s,
               {"g_tol", "x_tol", "f_tol", "max_iterations", "lm_lambda0", "geodesic_acceleration"},
               "solver");
    get_to(s, "g_tol", c.solver.g_tol);
    get_to(s, "x_tol", c.solver.x_tol);
    get_to(s, "f_tol", c.solver.f_tol);
    get_to(s, "max_iterations", c.solver.max_iterations);
    get_to(s, "lm_lambda0", c.solver.lm_lambda0);
    get_to(s, "geodesic_acceleration", c.solver.geodesic_acceleration);
  }
  if (j.contains("selection")) {
    const json& s = j["selection"];
    check_keys(s,
               {"n_bootstrap", "n_multistart", "ridge_lambda", "patience", "trial_max_iterations",
                "row_wise"},
               "selection");
    get_to(s, "n_bootstrap", c.selection.n_bootstrap);
    get_to(s, "n_multistart", c.selection.n_multistart);
    get_to(s, "ridge_lambda", c.selection.ridge_lambda);
    get_to(s, "patience", c.selection.patience);
    get_to(s, "trial_max_iterations", c.selection.trial_max_iterations);
    get_to(s, "row_wise", c.selection.row_wise);
  }
  if (j.contains("evidence")) {
    const json& e = j["evidence"];
    check_keys(e, {"method", "include_curvature"}, "evidence");
    if (e.contains("method")) c.selection.evidence.method = parse_method(e["method"].get<std::string>());
    get_to(e, "include_curvature", c.selection.evidence.include_curvature);
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, {"noise_levels", "T", "seeds"}, "grid");
    get_to(g, "noise_levels", c.grid.noise_levels);
    get_to(g, "T", c.grid.T_values);
    get_to(g, "seeds", c.grid.seeds);
  }
  // The full-library fit uses the solver's own cap.
  c.selection.full_max_iterations = c.solver.max_iterations;

  if (c.state_dim < 1 && c.input_csv.empty()) throw AppError("config", "state_dim must be positive");
  if (!c.sigma_x_per_state.empty() && c.state_dim > 0 &&
      static_cast<int>(c.sigma_x_per_state.size()) != c.state_dim)
    throw AppError("dimension_mismatch", "sigma_x list length does not match state_dim");
  if (!c.input_csv.empty() && !c.sigma_x && c.sigma_x_per_state.empty())
    throw AppError("config", "sigma_x must be given explicitly for CSV input");
  try {
    c.selection.validate();
  } catch (const std::invalid_argument& e) {
    throw AppError("config", e.what());
  }
  return c;
}

json RunConfig::to_json() const {
  json j;
  if (!system.empty()) {
    j["system"] = system;
    j["system_params"] = system_params;
  } else {
    j["input_csv"] = input_csv;
  }
  j["library"] = {{"state_dim", state_dim}, {"poly_order", poly_order}, {"include_constant", include_constant}};
  j["fd_order"] = fd_order;
  j["dt"] = dt;
  j["T"] = T;
  j["noise_level"] = noise_level;
  j["seed"] = seed;
  json h;
  if (!sigma_x_per_state.empty())
    h["sigma_x"] = sigma_x_per_state;
  else if (sigma_x)
    h["sigma_x"] = *sigma_x;
  else
    h["sigma_x"] = "auto";
  h["sigma_dt"] = sigma_dt;
  h["sigma_p"] = sigma_p;
  h["hard_constraint"] = hard_constraint;
  j["hyperparameters"] = h;
  j["solver"] = {{"g_tol", solver.g_tol},
                 {"x_tol", solver.x_tol},
                 {"f_tol", solver.f_tol},
                 {"max_iterations", solver.max_iterations},
                 {"lm_lambda0", solver.lm_lambda0},
                 {"geodesic_acceleration", solver.geodesic_acceleration}};
  j["selection"] = {{"n_bootstrap", selection.n_bootstrap},
                    {"n_multistart", selection.n_multistart},
                    {"ridge_lambda", selection.ridge_lambda},
                    {"patience", selection.patience},
                    {"trial_max_iterations", selection.trial_max_iterations},
                    {"row_wise", selection.row_wise}};
  j["evidence"] = {{"method", to_string(selection.evidence.method)},
                   {"include_curvature", selection.evidence.include_curvature}};
  j["grid"] = {{"noise_levels", grid.noise_levels}, {"T", grid.T_values}, {"seeds", grid.seeds}};
  j["workers"] = workers;
  return j;
}

LibrarySpec RunConfig::library() const { return enumerate_terms(state_dim, poly_order, include_constant); }

Hyperparameters RunConfig::hyperparameters(double sigma_x_auto) const {
  Hyperparameters h;
  h.sigma_x = sigma_x ? *sigma_x : sigma_x_auto;
  if (!sigma_x_per_state.empty())
    h.sigma_x_per_state = Eigen::Map<const Eigen::VectorXd>(sigma_x_per_state.data(),
                                                            static_cast<Eigen::Index>(sigma_x_per_state.size()));
  h.sigma_dt = effective_sigma_dt();
  h.sigma_p = sigma_p;
  return h;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw AppError("io", "cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw AppError("config", std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return RunConfig::from_json(j);
  } catch (const json::type_error& e) {
    throw AppError("config", std::string("config has a value of the wrong type: ") + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw AppError("io", "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// CSV

void write_trajectory_csv(const std::string& path, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& X) {
  std::ofstream out(path);
  if (!out) throw AppError("io", "cannot write '" + path + "'");
  out << "t";
  for (Eigen::Index e = 0; e < X.cols(); ++e) out << ",x" << e + 1;
  out << "\n";
  for (Eigen::Index k = 0; k < X.rows(); ++k) {
    out << fmt17(times[k]);
    for (Eigen::Index e = 0; e < X.cols(); ++e) out << ',' << fmt17(X(k, e));
    out << "\n";
  }
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw AppError("io", "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw AppError("csv", "empty CSV file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      header.push_back(cell);
    }
  }
  if (header.size() < 2 || header[0] != "t") throw AppError("csv", "header must be t,x1,...,xD");
  for (std::size_t e = 1; e < header.size(); ++e)
    if (header[e] != "x" + std::to_string(e)) throw AppError("csv", "header must be t,x1,...,xD");
  const int D = static_cast<int>(header.size()) - 1;

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw AppError("csv", "line " + std::to_string(lineno) + ": not a number");
      if (!std::isfinite(v)) throw AppError("nan", "line " + std::to_string(lineno) + ": non-finite value");
      row.push_back(v);
    }
    if (static_cast<int>(row.size()) != D + 1)
      throw AppError("csv", "line " + std::to_string(lineno) + ": expected " + std::to_string(D + 1) + " columns");
    rows.push_back(std::move(row));
  }
  if (rows.size() < 3) throw AppError("csv", "need at least three samples");
  Trajectory t;
  const int n = static_cast<int>(rows.size());
  t.times.resize(n);
  t.X.resize(n, D);
  for (int k = 0; k < n; ++k) {
    t.times[k] = rows[k][0];
    for (int e = 0; e < D; ++e) t.X(k, e) = rows[k][e + 1];
  }
  t.dt = (t.times[n - 1] - t.times[0]) / (n - 1);
  if (!(t.dt > 0.0)) throw AppError("sampling", "times must increase");
  for (int k = 1; k < n; ++k) {
    if (std::abs(t.times[k] - t.times[k - 1] - t.dt) > 1e-9 * t.dt)
      throw AppError("sampling", "non-uniform sampling near t = " + fmt17(t.times[k]));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Fit

TimeSeriesData prepare_data(const RunConfig& cfg) {
  if (!cfg.input_csv.empty()) {
    const Trajectory tr = read_trajectory_csv(cfg.input_csv);
    if (cfg.state_dim > 0 && tr.X.cols() != cfg.state_dim)
      throw AppError("dimension_mismatch", "CSV has " + std::to_string(tr.X.cols()) +
                                               " state columns but the config expects " +
                                               std::to_string(cfg.state_dim));
    TimeSeriesData d;
    d.times = tr.times;
    d.X_hat = tr.X;
    d.dt = tr.dt;
    d.sigma_x = cfg.sigma_x ? *cfg.sigma_x : 0.0;
    d.seed = cfg.seed;
    return d;
  }
  const SystemDef sys = make_system(cfg.system, cfg.system_params);
  return add_noise(integrate(sys, cfg.dt, cfg.T), cfg.noise_level, cfg.seed);
}

double auto_sigma_x(const TimeSeriesData& d) {
  if (d.sigma_x > 0.0) return d.sigma_x;
  return kNoiselessSigmaRatio * flattened_std(d.X_hat);
}

std::vector<std::string> equation_strings(const Model& model) {
  std::vector<std::string> out;
  char buf[64];
  for (int d = 0; d < model.state_dim(); ++d) {
    std::string s = "dx" + std::to_string(d + 1) + "/dt =";
    bool first = true;
    for (int m = 0; m < model.num_terms(); ++m) {
      if (!model.mask(m, d)) continue;
      const double c = model.xi(m, d);
      std::snprintf(buf, sizeof buf, "%.4g", std::abs(c));
      s += first ? (c < 0 ? " -" : " ") : (c < 0 ? " - " : " + ");
      const std::string name = model.spec.term_name(m);
      s += buf;
      if (name != "1") s += "*" + name;
      first = false;
    }
    if (first) s += " 0";
    out.push_back(s);
  }
  return out;
}

namespace {

json fit_json(const FitResult& f) {
  return {{"converged", f.converged},          {"iterations", f.iterations},
          {"stop_reason", f.stop_reason},      {"loss_total", f.loss_total},
          {"loss_data", f.loss_data},          {"loss_model", f.loss_model},
          {"loss_prior", f.loss_prior},        {"grad_inf_norm", f.grad_inf_norm},
          {"wall_time_s", f.wall_time}};
}

std::string coefficient_label(const Model& m, int id) {
  return "dx" + std::to_string(m.equation_of(id) + 1) + "/dt:" + m.spec.term_name(m.term_of(id));
}

double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

FitOutput run_fit(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  FitOutput out;
  out.data = prepare_data(cfg);
  RunConfig c = cfg;
  if (c.state_dim <= 0) c.state_dim = out.data.state_dim();
  const LibrarySpec spec = c.library();
  CollocationOperators ops;
  try {
    ops = build_fd_operators(c.fd_order, out.data.n_samples(), out.data.dt);
  } catch (const std::invalid_argument& e) {
    throw AppError("config", e.what());
  }
  const Hyperparameters hyper = c.hyperparameters(auto_sigma_x(out.data));
  try {
    hyper.validate(spec.state_dim);
  } catch (const std::invalid_argument& e) {
    throw AppError("config", e.what());
  }
  SelectionOptions so = c.selection;
  so.seed = c.seed;
  so.solver = c.solver;
  so.full_max_iterations = c.solver.max_iterations;
  so.workers = c.workers;
  out.selection = greedy_select(out.data.X_hat, ops, spec, hyper, so);
  const SelectionResult& sel = out.selection;

  json r;
  r["config"] = c.to_json();
  r["data"] = {{"source", c.input_csv.empty() ? "simulated" : "csv"},
               {"n_samples", out.data.n_samples()},
               {"state_dim", out.data.state_dim()},
               {"dt", out.data.dt},
               {"sigma_x", hyper.sigma_x},
               {"noise_level", out.data.noise_level},
               {"seed", c.seed}};
  json terms = json::array();
  for (int m = 0; m < spec.num_terms(); ++m) terms.push_back(spec.term_name(m));
  r["library"] = {{"state_dim", spec.state_dim},
                  {"poly_order", c.poly_order},
                  {"include_constant", c.include_constant},
                  {"terms", terms}};

  const Model& chosen = sel.chosen;
  const std::vector<int> act = chosen.active();
  const Eigen::MatrixXd& cov = sel.chosen_evidence.xi_covariance;
  json coefs = json::array();
  for (std::size_t a = 0; a < act.size(); ++a) {
    const int id = act[a];
    const double sd = cov.rows() == static_cast<Eigen::Index>(act.size())
                          ? std::sqrt(std::max(cov(a, a), 0.0))
                          : std::numeric_limits<double>::quiet_NaN();
    coefs.push_back({{"id", id},
                     {"equation", chosen.equation_of(id) + 1},
                     {"term", spec.term_name(chosen.term_of(id))},
                     {"value", chosen.xi(chosen.term_of(id), chosen.equation_of(id))},
                     {"std", number_or_null(sd)}});
  }
  r["model"] = {{"equations", equation_strings(chosen)},
                {"coefficients", coefs},
                {"n_terms", chosen.n_active()},
                {"log_evidence", number_or_null(sel.chosen_evidence.log_evidence)},
                {"evidence_method", to_string(sel.chosen_evidence.method)}};
  r["fit"] = fit_json(sel.chosen_fit);
  r["full_fit"] = fit_json(sel.full_fit);
  json trace = json::array();
  for (const auto& t : sel.trace) {
    json removed = json::array();
    for (int id : t.removed) removed.push_back(coefficient_label(chosen, id));
    trace.push_back({{"step", t.step},
                     {"removed", removed},
                     {"removed_ids", t.removed},
                     {"n_terms", t.n_active},
                     {"log_evidence", number_or_null(t.log_evidence)},
                     {"converged", t.converged}});
  }
  r["trace"] = trace;
  r["selection"] = {{"total_fits", sel.total_fits},
                    {"stop_reason", sel.stop_reason},
                    {"wall_time_s", sel.wall_time}};
  if (out.data.X_clean) {
    r["denoising"] = {{"rmse_input", rmse(out.data.X_hat, *out.data.X_clean)},
                      {"rmse_denoised", rmse(sel.chosen_fit.x_star, *out.data.X_clean)}};
  }
  if (!c.system.empty()) {
    const SystemDef sys = make_system(c.system, c.system_params);
    try {
      out.xi_true = sys.xi_true(spec);
      const bool ok = (chosen.mask == (out.xi_true->array() != 0.0)).all();
      r["ground_truth"] = {{"success", ok},
                           {"param_error", ok ? param_error(chosen.xi, *out.xi_true) : -1.0}};
    } catch (const std::invalid_argument&) {
      r["ground_truth"] = nullptr;  // true terms outside the library
    }
  }
  r["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = std::move(r);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

CellResult run_cell(const RunConfig& base, double noise_level, double T, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult cell;
  cell.noise_level = noise_level;
  cell.T = T;
  cell.seed = seed;
  try {
    if (base.system.empty()) throw AppError("config", "benchmark needs a simulated system");
    RunConfig c = base;
    c.noise_level = noise_level;
    c.T = T;
    c.seed = seed;
    c.workers = 1;
    FitOutput f = run_fit(c);
    const Model& chosen = f.selection.chosen;
    cell.chosen = chosen;
    cell.x_star = f.selection.chosen_fit.x_star;
    cell.n_terms = chosen.n_active();
    cell.log_evidence = f.selection.chosen_evidence.log_evidence;
    if (!f.xi_true) throw AppError("config", "true terms are not in the library");
    cell.success = (chosen.mask == (f.xi_true->array() != 0.0)).all();
    cell.param_error = cell.success ? param_error(chosen.xi, *f.xi_true) : -1.0;
    cell.data = std::move(f.data);
  } catch (const std::exception& e) {
    cell.success = false;
    cell.param_error = -1.0;
    cell.log_evidence = -std::numeric_limits<double>::infinity();
    cell.error = e.what();
  }
  cell.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return cell;
}

std::vector<CellResult> run_benchmark(const RunConfig& cfg) {
  struct Job {
    double noise, T;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double nl : cfg.grid.noise_levels)
    for (double T : cfg.grid.T_values)
      for (std::uint64_t s : cfg.grid.seeds) jobs.push_back({nl, T, s});
  std::vector<CellResult> cells(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++)
      cells[i] = run_cell(cfg, jobs[i].noise, jobs[i].T, jobs[i].seed);
  };
  const int nw = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nw; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return cells;
}

void write_benchmark_csv(const std::string& path, const std::vector<CellResult>& cells) {
  std::ofstream out(path);
  if (!out) throw AppError("io", "cannot write '" + path + "'");
  out << "noise_level,T,seed,success,param_error,log_evidence,n_terms,wall_time_s\n";
  for (const auto& c : cells) {
    out << fmt17(c.noise_level) << ',' << fmt17(c.T) << ',' << c.seed << ',' << (c.success ? 1 : 0)
        << ',' << fmt17(c.param_error) << ',' << fmt17(c.log_evidence) << ',' << c.n_terms << ','
        << fmt17(c.wall_time) << "\n";
  }
}

void write_summary_csv(const std::string& path, const std::vector<CellResult>& cells) {
  std::ofstream out(path);
  if (!out) throw AppError("io", "cannot write '" + path + "'");
  out << "noise_level,T,n_runs,success_rate,mean_param_error\n";
  std::vector<std::pair<double, double>> keys;
  for (const auto& c : cells) {
    const std::pair<double, double> k{c.noise_level, c.T};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [nl, T] : keys) {
    int n = 0, ok = 0;
    double perr = 0.0;
    for (const auto& c : cells) {
      if (c.noise_level != nl || c.T != T) continue;
      ++n;
      if (c.success) {
        ++ok;
        perr += c.param_error;
      }
    }
    out << fmt17(nl) << ',' << fmt17(T) << ',' << n << ',' << fmt17(static_cast<double>(ok) / n) << ','
        << fmt17(ok ? perr / ok : -1.0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Checks

std::vector<CheckResult> run_checks(bool corrupt_stencil) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, bool ok, const std::string& detail) {
    out.push_back({name, ok, detail});
  };
  auto wrap = [&](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      add(name, false, std::string("exception: ") + e.what());
    }
  };

  auto make_ops = [&](int order, int n, double dt) {
    CollocationOperators ops = build_fd_operators(order, n, dt);
    if (corrupt_stencil) ops.weights[0] *= 1.01;
    return ops;
  };

  wrap("stencil exactness", [&] {
    double worst = 0.0;
    for (int p : {2, 4, 6, 8}) {
      const double dt = 0.1;
      const int n = 3 * p + 5;
      const CollocationOperators ops = make_ops(p, n, dt);
      Eigen::MatrixXd X(n, 1);
      for (int k = 0; k < n; ++k) X(k, 0) = std::pow(k * dt, p);
      const auto [dX, IX] = apply(ops, X);
      for (int i = 0; i < ops.n_rows; ++i) {
        const double t = ops.center(i) * dt;
        const double ex = p * std::pow(t, p - 1);
        worst = std::max(worst, std::abs(dX(i, 0) - ex) / std::max(1.0, std::abs(ex)));
      }
    }
    add("stencil exactness", worst < 1e-9, "max relative error " + fmt17(worst));
  });

  wrap("gradient", [&] {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    const LibrarySpec spec = enumerate_terms(2, 2, true);
    const int n = 20;
    Eigen::MatrixXd xh(n, 2), X(n, 2);
    for (int k = 0; k < n; ++k)
      for (int e = 0; e < 2; ++e) {
        xh(k, e) = nd(gen);
        X(k, e) = xh(k, e) + 0.3 * nd(gen);
      }
    const CollocationOperators ops = make_ops(4, n, 0.1);
    Hyperparameters hp;
    hp.sigma_x = 0.5;
    hp.sigma_dt = 0.3;
    hp.sigma_p = 2.0;
    const Model full = Model::full(spec);
    Eigen::VectorXd xi(full.n_active());
    for (Eigen::Index c = 0; c < xi.size(); ++c) xi[c] = nd(gen);
    OdrObjective obj(xh, ops, hp, full);
    const auto J = obj.jacobian(X, xi);
    const Eigen::VectorXd g = J.transpose() * obj.residual(X, xi);
    Eigen::VectorXd gfd(g.size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      Eigen::MatrixXd Xp = X, Xm = X;
      Eigen::VectorXd xp = xi, xm = xi;
      if (j < 2 * n) {
        Xp(j / 2, j % 2) += h;
        Xm(j / 2, j % 2) -= h;
      } else {
        xp[j - 2 * n] += h;
        xm[j - 2 * n] -= h;
      }
      gfd[j] = (obj.loss(Xp, xp).total() - obj.loss(Xm, xm).total()) / (2 * h);
    }
    const double rel = (g - gfd).norm() / gfd.norm();
    add("gradient", rel < 1e-6, "relative error " + fmt17(rel));
  });

  wrap("hessian positive definite", [&] {
    const SystemDef sys = make_system("vanderpol");
    const TimeSeriesData d = add_noise(integrate(sys, 0.05, 5.0), 0.05, 3);
    const LibrarySpec spec = enumerate_terms(2, 3, true);
    const CollocationOperators ops = build_fd_operators(4, d.n_samples(), d.dt);
    Hyperparameters hp;
    hp.sigma_x = d.sigma_x;
    hp.sigma_dt = 1e-2;
    hp.sigma_p = 10.0;
    const Model truth = ground_truth_model(sys, spec);
    const FitResult f = solve_odr(d.X_hat, truth.active_values(), d.X_hat, ops, hp, truth);
    const EvidenceResult ev = compute_evidence(f, d.X_hat, ops, hp);
    const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ev.hessian).eigenvalues().minCoeff();
    const bool ok = f.converged && ev.positive_definite && lmin >= 1.0 / (hp.sigma_p * hp.sigma_p) - 1e-9;
    add("hessian positive definite", ok, "min eigenvalue " + fmt17(lmin));
  });

  wrap("param_error identities", [&] {
    const SystemDef sys = make_system("lorenz63");
    const Eigen::MatrixXd xt = sys.xi_true(enumerate_terms(3, 2, true));
    const double a = param_error(xt, xt), b = param_error(1.1 * xt, xt);
    add("param_error identities", a == 0.0 && std::abs(b - 0.1) <= 1e-12,
        "e(xi, xi) = " + fmt17(a) + ", e(1.1 xi, xi) = " + fmt17(b));
  });
  return out;
}

}  // namespace odrid
