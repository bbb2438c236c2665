// Command-line front end: simulate | fit | benchmark | check.
#include "odrid/app.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using odrid::AppError;
using nlohmann::json;

namespace {

int fail(const std::string& code, const std::string& msg) {
  json e = {{"error", {{"code", code}, {"message", msg}}}};
  std::cerr << e.dump() << "\n";
  return 1;
}

odrid::RunConfig resolve(const std::string& config_path, const std::string& seed_flag,
                         int workers) {
  if (config_path.empty()) throw AppError("config", "--config is required");
  odrid::RunConfig cfg = odrid::load_config(config_path);
  if (!seed_flag.empty()) cfg.seed = std::stoull(seed_flag);
  if (workers > 0) cfg.workers = workers;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse equation discovery by soft-constrained orthogonal distance regression", "odrid"};
  app.require_subcommand(0, 1);
  std::string config_path, out_dir = ".", seed_flag;
  int workers = 0;
  bool inject_fault = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--workers", workers, "worker threads");
    sub->add_option("--seed", seed_flag, "override the configured seed");
  };
  CLI::App* sim = app.add_subcommand("simulate", "write clean and noisy trajectories");
  CLI::App* fit = app.add_subcommand("fit", "identify a model and write a JSON report");
  CLI::App* bench = app.add_subcommand("benchmark", "success-rate grid over noise, T and seeds");
  CLI::App* check = app.add_subcommand("check", "fast invariant suite");
  for (CLI::App* s : {sim, fit, bench}) add_common(s);
  check->add_flag("--inject-stencil-fault", inject_fault, "corrupt the stencil weights (self test)");

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  CLI11_PARSE(app, argc, argv);
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*check) {
      const auto results = odrid::run_checks(inject_fault);
      bool all = true;
      for (const auto& r : results) {
        std::printf("%-28s %s  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.detail.c_str());
        all = all && r.passed;
      }
      return all ? 0 : 1;
    }

    const odrid::RunConfig cfg = resolve(config_path, seed_flag, workers);
    fs::create_directories(out_dir);
    const json cj = cfg.to_json();

    if (*sim) {
      if (cfg.system.empty()) throw AppError("config", "simulate needs 'system'");
      const odrid::SystemDef sys = odrid::make_system(cfg.system, cfg.system_params);
      const odrid::TimeSeriesData d = odrid::prepare_data(cfg);
      odrid::write_trajectory_csv((fs::path(out_dir) / "clean.csv").string(), d.times, *d.X_clean);
      odrid::write_trajectory_csv((fs::path(out_dir) / "noisy.csv").string(), d.times, d.X_hat);
      json x0 = json::array();
      for (Eigen::Index e = 0; e < sys.x0.size(); ++e) x0.push_back(sys.x0[e]);
      json man = {{"name", sys.name},     {"params", sys.params}, {"x0", x0},
                  {"dt", cfg.dt},         {"T", cfg.T},           {"noise_level", cfg.noise_level},
                  {"seed", cfg.seed},     {"sigma_x", d.sigma_x}, {"n_samples", d.n_samples()},
                  {"config", cj}};
      odrid::write_json((fs::path(out_dir) / "manifest.json").string(), man);
      std::printf("wrote %d samples to %s\n", d.n_samples(), out_dir.c_str());
      return 0;
    }

    if (*fit) {
      odrid::FitOutput f = odrid::run_fit(cfg);
      const std::string den = (fs::path(out_dir) / "denoised.csv").string();
      odrid::write_trajectory_csv(den, f.data.times, f.selection.chosen_fit.x_star);
      f.report["denoised_csv"] = "denoised.csv";
      odrid::write_json((fs::path(out_dir) / "report.json").string(), f.report);
      for (const auto& s : f.report["model"]["equations"]) std::printf("%s\n", s.get<std::string>().c_str());
      return 0;
    }

    if (*bench) {
      const auto cells = odrid::run_benchmark(cfg);
      odrid::write_benchmark_csv((fs::path(out_dir) / "benchmark.csv").string(), cells);
      odrid::write_summary_csv((fs::path(out_dir) / "summary.csv").string(), cells);
      json side = {{"config", cj}, {"files", {"benchmark.csv", "summary.csv"}}};
      json errors = json::array();
      for (const auto& c : cells)
        if (!c.error.empty()) errors.push_back({{"noise_level", c.noise_level}, {"T", c.T}, {"seed", c.seed}, {"error", c.error}});
      side["cell_errors"] = errors;
      odrid::write_json((fs::path(out_dir) / "benchmark_config.json").string(), side);
      std::printf("%zu cells written to %s\n", cells.size(), out_dir.c_str());
      return 0;
    }
  } catch (const AppError& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 2;
}
