// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number, e.g. `acceptance 5 6 11`.
#include "odrid/app.hpp"
#include "odrid/evidence.hpp"
#include "odrid/selection.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace odrid;
using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

RunConfig system_config(const std::string& name) { return RunConfig::from_json({{"system", name}}); }

std::vector<CellResult> run_seeds(const RunConfig& cfg, double noise, double T, int n_seeds,
                                  const char* label) {
  std::vector<CellResult> out;
  for (int s = 1; s <= n_seeds; ++s) {
    out.push_back(run_cell(cfg, noise, T, static_cast<std::uint64_t>(s)));
    const CellResult& c = out.back();
    std::printf("  %s seed %2d: success %d  param_error %.4g  n_terms %d  %.1f s%s%s\n", label, s,
                c.success ? 1 : 0, c.param_error, c.n_terms, c.wall_time, c.error.empty() ? "" : "  error: ",
                c.error.c_str());
    std::fflush(stdout);
  }
  return out;
}

double success_rate(const std::vector<CellResult>& cells) {
  int ok = 0;
  for (const auto& c : cells) ok += c.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(cells.size());
}

double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

std::vector<CellResult> g_lorenz20;  // shared by criteria 2 and 10

Outcome c1_low_noise() {
  const auto cells = run_seeds(system_config("lorenz63"), 0.01, 10.0, 10, "lorenz 1%");
  bool all = true;
  double worst = 0.0, total = 0.0;
  for (const auto& c : cells) {
    all = all && c.success && c.param_error < 0.02;
    worst = std::max(worst, c.param_error);
    total += c.wall_time;
  }
  return {all, "success " + fmt("%.1f", success_rate(cells)) + ", max param_error " + fmt("%.4g", worst) +
                   ", total " + fmt("%.0f", total) + " s"};
}

Outcome c2_noise_robustness() {
  g_lorenz20 = run_seeds(system_config("lorenz63"), 0.20, 10.0, 10, "lorenz 20%");
  double longest = 0.0;
  for (const auto& c : g_lorenz20) longest = std::max(longest, c.wall_time);
  const double rate = success_rate(g_lorenz20);
  return {rate >= 0.7 && longest < 600.0,
          "success rate " + fmt("%.2f", rate) + " (>= 0.7), longest run " + fmt("%.0f", longest) + " s (< 600)"};
}

Outcome c3_vanderpol() {
  const RunConfig cfg = system_config("vanderpol");
  const auto cells = run_seeds(cfg, 0.30, 20.0, 10, "vdp 30%");
  const LibrarySpec spec = cfg.library();
  const int lin = spec.find({0, 1});
  double worst = 0.0;
  for (const auto& c : cells)
    if (c.success) worst = std::max(worst, std::abs(c.chosen.xi(lin, 1) - 0.5));
  const double rate = success_rate(cells);
  return {rate >= 0.6 && worst < 0.05,
          "success rate " + fmt("%.2f", rate) + " (>= 0.6), max |mu - 0.5| " + fmt("%.4g", worst) + " (< 0.05)"};
}

Outcome c4_rossler() {
  const auto cells = run_seeds(system_config("rossler"), 0.20, 25.0, 10, "rossler 20%");
  const double rate = success_rate(cells);
  return {rate >= 0.6, "success rate " + fmt("%.2f", rate) + " (>= 0.6)"};
}

Outcome c5_gradient() {
  std::mt19937_64 g(555);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.2, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int n = 12 + t % 9, D = 1 + t % 3, p = 1 + t % 3, order = 2 + 2 * (t % 3);
    const LibrarySpec spec = enumerate_terms(D, p, t % 2 == 0);
    Eigen::MatrixXd xh(n, D), X(n, D);
    for (int k = 0; k < n; ++k)
      for (int e = 0; e < D; ++e) {
        xh(k, e) = nd(g);
        X(k, e) = xh(k, e) + 0.3 * nd(g);
      }
    const auto ops = build_fd_operators(order, n, 0.1);
    Hyperparameters hp;
    hp.sigma_x = u(g);
    hp.sigma_dt = u(g);
    hp.sigma_p = u(g);
    const Model m = Model::full(spec);
    Eigen::VectorXd xi(m.n_active());
    for (Eigen::Index c = 0; c < xi.size(); ++c) xi[c] = nd(g);
    OdrObjective obj(xh, ops, hp, m);
    const Eigen::VectorXd grad = obj.jacobian(X, xi).transpose() * obj.residual(X, xi);
    Eigen::VectorXd fd(grad.size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < fd.size(); ++j) {
      Eigen::MatrixXd Xp = X, Xm = X;
      Eigen::VectorXd xp = xi, xm = xi;
      if (j < X.size()) {
        Xp(j / D, j % D) += h;
        Xm(j / D, j % D) -= h;
      } else {
        xp[j - X.size()] += h;
        xm[j - X.size()] -= h;
      }
      fd[j] = (obj.loss(Xp, xp).total() - obj.loss(Xm, xm).total()) / (2 * h);
    }
    worst = std::max(worst, (grad - fd).norm() / fd.norm());
  }
  return {worst < 1e-6, "max relative error " + fmt("%.3g", worst) + " (< 1e-6)"};
}

Outcome c6_stencil() {
  bool ok = true;
  std::string detail;
  for (int p : {2, 4, 6}) {
    // Exactness on t^p against the analytic derivative.
    const double dt = 0.05;
    const int n = 4 * p + 9;
    const auto ops = build_fd_operators(p, n, dt);
    Eigen::MatrixXd X(n, 1);
    for (int k = 0; k < n; ++k) X(k, 0) = std::pow(1.0 + k * dt, p);
    const auto [dX, IX] = apply(ops, X);
    double exact = 0.0;
    for (int i = 0; i < ops.n_rows; ++i) {
      const double t = 1.0 + ops.center(i) * dt;
      const double ref = p * std::pow(t, p - 1);
      exact = std::max(exact, std::abs(dX(i, 0) - ref) / std::abs(ref));
    }
    // Error ratio on sin at the common point t = 1 under dt halving.
    auto err_at_one = [&](double h) {
      const int half = p / 2;
      const auto o = build_fd_operators(p, p + 1, h);
      Eigen::MatrixXd S(p + 1, 1);
      for (int k = 0; k <= p; ++k) S(k, 0) = std::sin(1.0 + (k - half) * h);
      return std::abs(apply(o, S).first(0, 0) - std::cos(1.0));
    };
    const double h0 = p == 6 ? 0.1 : 0.05;
    const double ratio = err_at_one(h0) / err_at_one(h0 / 2);
    const double target = std::pow(2.0, p);
    const bool pass = exact < 1e-9 && ratio >= 0.8 * target && ratio <= 1.2 * target;
    ok = ok && pass;
    detail += "p=" + std::to_string(p) + ": exact " + fmt("%.2g", exact) + ", ratio " + fmt("%.2f", ratio) +
              "/" + fmt("%.0f", target) + "; ";
  }
  return {ok, detail};
}

Outcome c7_sensitivity() {
  const int n = 30;
  const SystemDef s = make_system("vanderpol");
  const TimeSeriesData d = add_noise(integrate(s, 0.1, (n - 1) * 0.1), 0.05, 2);
  const LibrarySpec spec = enumerate_terms(2, 2, true);
  const auto ops = build_fd_operators(4, n, 0.1);
  Hyperparameters hp;
  hp.sigma_x = 0.1;
  hp.sigma_dt = 0.5;
  hp.sigma_p = 3.0;
  const Model m = Model::full(spec);
  std::mt19937_64 g(77);
  std::normal_distribution<double> nd;
  Eigen::VectorXd xi0(m.n_active());
  for (Eigen::Index c = 0; c < xi0.size(); ++c) xi0[c] = 0.3 * nd(g);
  SolverOptions so;
  so.max_iterations = 1000;
  const FitResult f = solve_odr(d.X_hat, xi0, d.X_hat, ops, hp, m, so);
  if (!f.converged) return {false, "base fit did not converge (" + f.stop_reason + ")"};
  const Sensitivity sens = solve_dx_dxi(f, d.X_hat, ops, hp, true);
  SolverOptions inner;
  inner.f_tol = 0.0;
  inner.x_tol = 0.0;
  inner.g_tol = 1e-15;
  inner.max_iterations = 500;
  const Eigen::VectorXd xi = f.model.active_values();
  double worst = 0.0;
  for (int c = 0; c < f.model.n_active(); ++c) {
    const double h = 1e-5;
    Model mp = f.model, mm = f.model;
    Eigen::VectorXd vp = xi, vm = xi;
    vp[c] += h;
    vm[c] -= h;
    mp.set_active_values(vp);
    mm.set_active_values(vm);
    const FitResult a = solve_states(f.x_star, d.X_hat, ops, hp, mp, inner);
    const FitResult b = solve_states(f.x_star, d.X_hat, ops, hp, mm, inner);
    const Eigen::VectorXd fd = flatten_states((a.x_star - b.x_star) / (2 * h));
    const Eigen::VectorXd an = sens.dx_dxi.col(c);
    worst = std::max(worst, (fd - an).norm() / std::max(an.norm(), 1e-12));
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " (< 1e-4)"};
}

Outcome c8_ranking() {
  // Replays the greedy rounds of one low-noise run and ranks every candidate
  // with both evidence approximations.
  const RunConfig cfg = system_config("lorenz63");
  RunConfig c = cfg;
  c.noise_level = 0.01;
  c.seed = 1;
  const TimeSeriesData d = prepare_data(c);
  const LibrarySpec spec = c.library();
  const auto ops = build_fd_operators(c.fd_order, d.n_samples(), d.dt);
  const Hyperparameters hp = c.hyperparameters(auto_sigma_x(d));
  SelectionOptions so = c.selection;
  so.seed = c.seed;
  so.solver = c.solver;
  EvidenceOptions gn, full;
  full.method = EvidenceMethod::full_hessian;
  auto ev = [&](const FitResult& f, const EvidenceOptions& o) {
    if (!f.converged) return kNegInf;
    try {
      return compute_evidence(f, d.X_hat, ops, hp, o).log_evidence;
    } catch (const std::runtime_error&) {
      return kNegInf;
    }
  };
  SolverOptions trial = so.solver;
  trial.max_iterations = so.trial_max_iterations;
  FitResult inc = fit_full_library(d.X_hat, ops, spec, hp, so);
  int rounds = 0, agree = 0, scored = 0;
  double best = ev(inc, gn);
  int declines = 0;
  // Global argmax over every scored candidate, under each approximation.
  double top_g = kNegInf, top_f = kNegInf;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask_g, mask_f;
  while (inc.model.n_active() > 1) {
    const std::vector<int> act = inc.model.active();
    std::vector<FitResult> fits;
    std::vector<double> eg(act.size()), ef(act.size());
    int pg = -1, pf = -1;
    for (std::size_t i = 0; i < act.size(); ++i) {
      const Model m = inc.model.without(act[i]);
      fits.push_back(solve_odr(inc.x_star, m.active_values(), d.X_hat, ops, hp, m, trial));
      eg[i] = ev(fits.back(), gn);
      ef[i] = ev(fits.back(), full);
      if (std::isfinite(eg[i])) ++scored;
      if (eg[i] > (pg < 0 ? kNegInf : eg[pg])) pg = static_cast<int>(i);
      if (ef[i] > (pf < 0 ? kNegInf : ef[pf])) pf = static_cast<int>(i);
      if (eg[i] > top_g) top_g = eg[i], mask_g = m.mask;
      if (ef[i] > top_f) top_f = ef[i], mask_f = m.mask;
    }
    if (pg < 0) break;
    ++rounds;
    if (pg == pf) {
      ++agree;
      std::printf("  round %2d (%2zu terms): both pick %d\n", rounds, act.size(), act[pg]);
    } else {
      std::printf("  round %2d (%2zu terms): gn picks %d, full picks %d; gaps gn %.3g full %.3g\n", rounds,
                  act.size(), act[pg], pf >= 0 ? act[pf] : -1, eg[pg] - (pf >= 0 ? eg[pf] : kNegInf),
                  pf >= 0 ? ef[pf] - ef[pg] : 0.0);
    }
    std::fflush(stdout);
    inc = fits[pg];
    if (eg[pg] > best) {
      best = eg[pg];
      declines = 0;
    } else if (++declines >= so.patience) {
      break;
    }
  }
  const bool same = mask_g.size() > 0 && mask_g.size() == mask_f.size() && (mask_g == mask_f).all();
  return {same, std::string(same ? "same" : "different") + " argmax model (" + std::to_string(mask_g.count()) +
                    " vs " + std::to_string(mask_f.count()) + " terms) over " + std::to_string(scored) +
                    " scored candidates; per-round argmax agrees in " + std::to_string(agree) + "/" +
                    std::to_string(rounds) + " rounds"};
}

Outcome c9_occam() {
  const SystemDef s = make_system("lorenz63");
  const TimeSeriesData d = integrate(s, 0.01, 10.0);
  const LibrarySpec spec = enumerate_terms(3, 2, true);
  const auto ops = build_fd_operators(6, d.n_samples(), d.dt);
  Hyperparameters hp;
  hp.sigma_x = auto_sigma_x(d);
  hp.sigma_dt = 1e-3;
  hp.sigma_p = 100.0;
  const Model truth = ground_truth_model(s, spec);
  auto fit_ev = [&](const Model& m, bool* converged) {
    const FitResult f = solve_odr(d.X_hat, m.active_values(), d.X_hat, ops, hp, m);
    *converged = f.converged;
    if (!f.converged) return kNegInf;
    return compute_evidence(f, d.X_hat, ops, hp).log_evidence;
  };
  bool conv = false;
  const double e_true = fit_ev(truth, &conv);
  if (!conv) return {false, "true model fit did not converge"};
  int sup_ok = 0, sup_n = 0, sub_ok = 0, sub_n = 0, sub_skip = 0;
  double margin_sup = std::numeric_limits<double>::infinity(), margin_sub = margin_sup;
  for (int id = 0; id < spec.num_terms() * 3; ++id) {
    const int m = id % spec.num_terms(), e = id / spec.num_terms();
    if (truth.mask(m, e)) continue;
    auto mask = truth.mask;
    mask(m, e) = true;
    Model big = Model::from_mask(spec, mask);
    big.xi = truth.xi;
    const double eb = fit_ev(big, &conv);
    ++sup_n;
    if (conv && eb < e_true) ++sup_ok;
    margin_sup = std::min(margin_sup, e_true - eb);
  }
  for (int id : truth.active()) {
    const Model small = truth.without(id);
    const double es = fit_ev(small, &conv);
    if (!conv) {
      ++sub_skip;
      continue;
    }
    ++sub_n;
    if (es < e_true) ++sub_ok;
    margin_sub = std::min(margin_sub, e_true - es);
  }
  return {sup_n == 23 && sup_ok == sup_n && sub_ok == sub_n,
          "supersets " + std::to_string(sup_ok) + "/" + std::to_string(sup_n) + " lower (min margin " +
              fmt("%.3g", margin_sup) + "), subsets " + std::to_string(sub_ok) + "/" + std::to_string(sub_n) +
              " lower (min margin " + fmt("%.3g", margin_sub) + ", " + std::to_string(sub_skip) +
              " not converged)"};
}

Outcome c10_denoising() {
  if (g_lorenz20.empty()) g_lorenz20 = run_seeds(system_config("lorenz63"), 0.20, 10.0, 1, "lorenz 20%");
  double worst = 0.0;
  int n = 0;
  for (const auto& c : g_lorenz20) {
    if (!c.error.empty() || c.x_star.size() == 0) return {false, "run failed: " + c.error};
    worst = std::max(worst, rmse(c.x_star, *c.data.X_clean) / rmse(c.data.X_hat, *c.data.X_clean));
    ++n;
  }
  return {worst < 0.5, "max RMSE ratio " + fmt("%.3f", worst) + " (< 0.5) over " + std::to_string(n) + " runs"};
}

Outcome c11_identities() {
  const Eigen::MatrixXd xt = make_system("lorenz63").xi_true(enumerate_terms(3, 2, true));
  const double a = param_error(xt, xt);
  const double b = param_error(1.1 * xt, xt);
  return {a == 0.0 && std::abs(b - 0.1) <= 1e-12,
          "self " + fmt("%.3g", a) + ", scaled " + fmt("%.17g", b)};
}

Outcome c12_scaling() {
  const SystemDef s = make_system("lorenz63");
  const LibrarySpec spec = enumerate_terms(3, 2, true);
  const Model full = Model::full(spec);
  std::vector<double> per_it;
  for (int n : {1000, 2000, 4000}) {
    const TimeSeriesData d = add_noise(integrate(s, 0.01, (n - 1) * 0.01), 0.01, 1);
    const auto ops = build_fd_operators(6, d.n_samples(), d.dt);
    Hyperparameters hp;
    hp.sigma_x = d.sigma_x;
    SolverOptions so;
    so.max_iterations = 15;
    so.g_tol = so.x_tol = so.f_tol = 0.0;
    Eigen::VectorXd xi0 = Eigen::VectorXd::Constant(full.n_active(), 0.1);
    std::vector<double> samples;
    for (int rep = 0; rep < 3; ++rep) {
      const double t0 = now_s();
      const FitResult f = solve_odr(d.X_hat, xi0, d.X_hat, ops, hp, full, so);
      samples.push_back((now_s() - t0) / std::max(1, f.iterations));
    }
    std::sort(samples.begin(), samples.end());
    per_it.push_back(samples[1]);
    std::printf("  N=%d: %.3f ms per iteration\n", n, 1e3 * samples[1]);
  }
  const double r1 = per_it[1] / per_it[0], r2 = per_it[2] / per_it[1];
  const bool ok = r1 >= 1.6 && r1 <= 2.6 && r2 >= 1.6 && r2 <= 2.6;
  return {ok, "ratios " + fmt("%.2f", r1) + ", " + fmt("%.2f", r2) + " (within [1.6, 2.6])"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"exact recovery, Lorenz 1% noise", c1_low_noise},
      {"noise robustness, Lorenz 20% noise", c2_noise_robustness},
      {"Van der Pol 30% noise", c3_vanderpol},
      {"Rossler 20% noise", c4_rossler},
      {"gradient oracle", c5_gradient},
      {"stencil exactness and order", c6_stencil},
      {"dX*/dXi oracle", c7_sensitivity},
      {"evidence ranking invariance", c8_ranking},
      {"Occam property", c9_occam},
      {"denoising", c10_denoising},
      {"metric identities", c11_identities},
      {"scaling contract", c12_scaling},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    std::printf("[%d] %s ...\n", id, criteria[i].first);
    std::fflush(stdout);
    const double t0 = now_s();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "criterion %2d %s  %s: %s [%.0f s]", id, o.pass ? "PASS" : "FAIL",
                  criteria[i].first, o.detail.c_str(), now_s() - t0);
    std::printf("%s\n", buf);
    std::fflush(stdout);
    lines.push_back(buf);
    failed += o.pass ? 0 : 1;
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("%d of %zu criteria failed\n", failed, lines.size());
  return failed == 0 ? 0 : 1;
}
