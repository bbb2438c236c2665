#include "doctest.h"
#include "odrid/evidence.hpp"
#include "odrid/systems.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>

using namespace odrid;

namespace {

struct Problem {
  TimeSeriesData data;
  LibrarySpec spec;
  CollocationOperators ops;
  Hyperparameters hp;
};

Problem vdp_problem(double noise, double dt = 0.02, double T = 6.0, std::uint64_t seed = 11) {
  Problem p;
  const SystemDef s = make_system("vanderpol");
  p.data = add_noise(integrate(s, dt, T), noise, seed);
  p.spec = enumerate_terms(2, 3, true);
  p.ops = build_fd_operators(4, p.data.n_samples(), dt);
  p.hp.sigma_x = p.data.sigma_x > 0 ? p.data.sigma_x : 1e-3;
  p.hp.sigma_dt = 1e-2;
  p.hp.sigma_p = 10.0;
  return p;
}

FitResult fit_truth_mask(const Problem& p, const Model& m) {
  return solve_odr(p.data.X_hat, m.active_values(), p.data.X_hat, p.ops, p.hp, m);
}

}  // namespace

TEST_CASE("log evidence formula") {
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(1, 1);
  CHECK(log_evidence(0.0, H, 1.0) == doctest::Approx(0.0).epsilon(1e-14));
  // Independent form: -L - n log sp - 1/2 log det H.
  Eigen::MatrixXd H2(2, 2);
  H2 << 4.0, 1.0, 1.0, 3.0;
  CHECK(log_evidence(2.5, H2, 3.0) ==
        doctest::Approx(-2.5 - 2 * std::log(3.0) - 0.5 * std::log(11.0)).epsilon(1e-12));
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK(log_evidence(0.0, bad, 1.0) == -std::numeric_limits<double>::infinity());
  CHECK(to_string(EvidenceMethod::gauss_newton) != to_string(EvidenceMethod::full_hessian));
}

TEST_CASE("sensitivity dX/dXi against re-solved inner problems") {
  std::mt19937_64 g(77);
  std::normal_distribution<double> nd;
  const int n = 30;
  const SystemDef s = make_system("vanderpol");
  const TimeSeriesData d = add_noise(integrate(s, 0.1, (n - 1) * 0.1), 0.05, 2);
  REQUIRE(d.n_samples() == n);
  const LibrarySpec spec = enumerate_terms(2, 2, true);
  const auto ops = build_fd_operators(4, n, 0.1);
  Hyperparameters hp;
  hp.sigma_x = 0.1;
  hp.sigma_dt = 0.5;
  hp.sigma_p = 3.0;
  Model m = Model::full(spec);
  Eigen::VectorXd xi0(m.n_active());
  for (Eigen::Index c = 0; c < xi0.size(); ++c) xi0[c] = 0.3 * nd(g);
  SolverOptions so;
  so.max_iterations = 1000;
  const FitResult f = solve_odr(d.X_hat, xi0, d.X_hat, ops, hp, m, so);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  const Sensitivity sens = solve_dx_dxi(f, d.X_hat, ops, hp, true);
  CHECK(sens.curvature_used);

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
    const FitResult sp = solve_states(f.x_star, d.X_hat, ops, hp, mp, inner);
    const FitResult sm = solve_states(f.x_star, d.X_hat, ops, hp, mm, inner);
    const Eigen::VectorXd fd = flatten_states((sp.x_star - sm.x_star) / (2 * h));
    const Eigen::VectorXd an = sens.dx_dxi.col(c);
    worst = std::max(worst, (fd - an).norm() / std::max(an.norm(), 1e-12));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("evidence of a negligible model term reduces to the prior") {
  const Problem base = vdp_problem(0.02);
  Problem p = base;
  p.hp.sigma_dt = 1e6;
  const Model m = ground_truth_model(make_system("vanderpol"), p.spec);
  const FitResult f = fit_truth_mask(p, m);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  const EvidenceResult ev = compute_evidence(f, p.data.X_hat, p.ops, p.hp);
  // With X* = X_hat and Xi -> 0 every term of the evidence cancels.
  CHECK(std::abs(ev.log_evidence) < 1e-6);
}

TEST_CASE("Gauss-Newton Hessian structure") {
  const Problem p = vdp_problem(0.02);
  const Model truth = ground_truth_model(make_system("vanderpol"), p.spec);
  const FitResult f = fit_truth_mask(p, truth);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  const EvidenceResult ev = compute_evidence(f, p.data.X_hat, p.ops, p.hp);
  REQUIRE(ev.positive_definite);
  CHECK(ev.method == EvidenceMethod::gauss_newton);
  CHECK((ev.hessian - ev.hessian.transpose()).norm() <= 1e-12 * ev.hessian.norm());
  const Eigen::VectorXd eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ev.hessian).eigenvalues();
  CHECK(eig.minCoeff() >= (1.0 - 1e-9) / (p.hp.sigma_p * p.hp.sigma_p));
  const Eigen::MatrixXd I = ev.xi_covariance * ev.hessian;
  CHECK((I - Eigen::MatrixXd::Identity(I.rows(), I.cols())).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(ev.log_evidence == doctest::Approx(log_evidence(f.loss_total, ev.hessian, p.hp.sigma_p)));
  // Recovered coefficients sit well inside their posterior spread of the truth.
  const Eigen::VectorXd xi = f.model.active_values();
  const Eigen::VectorXd xt = [&] {
    Model t = truth;
    return t.active_values();
  }();
  for (Eigen::Index c = 0; c < xi.size(); ++c)
    CHECK(std::abs(xi[c] - xt[c]) < 6.0 * std::sqrt(ev.xi_covariance(c, c)));
}

TEST_CASE("evidence is invariant to relabelling the states") {
  const Problem p = vdp_problem(0.03);
  const Model truth = ground_truth_model(make_system("vanderpol"), p.spec);
  const FitResult f = fit_truth_mask(p, truth);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  const double ev = compute_evidence(f, p.data.X_hat, p.ops, p.hp).log_evidence;

  // Swap x1 and x2: the same model with term exponents and equations swapped.
  Problem q = p;
  q.data.X_hat = p.data.X_hat.rowwise().reverse();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(p.spec.num_terms(), 2);
  Eigen::MatrixXd xi_sw = Eigen::MatrixXd::Zero(p.spec.num_terms(), 2);
  for (int m = 0; m < p.spec.num_terms(); ++m) {
    const Exponents e = p.spec.terms[m];
    const int ms = p.spec.find({e[1], e[0]});
    for (int d = 0; d < 2; ++d) {
      mask(ms, 1 - d) = truth.mask(m, d);
      xi_sw(ms, 1 - d) = truth.xi(m, d);
    }
  }
  Model sw = Model::from_mask(p.spec, mask);
  sw.xi = xi_sw;
  const FitResult g = fit_truth_mask(q, sw);
  REQUIRE(g.converged);
  const double ev_sw = compute_evidence(g, q.data.X_hat, q.ops, q.hp).log_evidence;
  CHECK(ev_sw == doctest::Approx(ev).epsilon(1e-7));
  CHECK(g.loss_total == doctest::Approx(f.loss_total).epsilon(1e-9));
}

TEST_CASE("prior width enters as an Occam factor per coefficient") {
  Problem p = vdp_problem(0.02);
  const Model truth = ground_truth_model(make_system("vanderpol"), p.spec);
  p.hp.sigma_p = 100.0;
  const FitResult f1 = fit_truth_mask(p, truth);
  const double e1 = compute_evidence(f1, p.data.X_hat, p.ops, p.hp).log_evidence;
  p.hp.sigma_p = 1000.0;
  const FitResult f2 = fit_truth_mask(p, truth);
  const double e2 = compute_evidence(f2, p.data.X_hat, p.ops, p.hp).log_evidence;
  const double expect = -truth.n_active() * std::log(10.0);
  CHECK(std::abs((e2 - e1) - expect) < 0.01 * std::abs(expect));
}

TEST_CASE("full Hessian agrees with Gauss-Newton on a well-fitted model") {
  const Problem p = vdp_problem(0.01);
  const Model truth = ground_truth_model(make_system("vanderpol"), p.spec);
  const FitResult f = fit_truth_mask(p, truth);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  EvidenceOptions gn;
  EvidenceOptions full;
  full.method = EvidenceMethod::full_hessian;
  const EvidenceResult a = compute_evidence(f, p.data.X_hat, p.ops, p.hp, gn);
  const EvidenceResult b = compute_evidence(f, p.data.X_hat, p.ops, p.hp, full);
  REQUIRE(b.positive_definite);
  CHECK(b.method == EvidenceMethod::full_hessian);
  CHECK((a.hessian - b.hessian).norm() < 0.05 * a.hessian.norm());
  CHECK(std::abs(a.log_evidence - b.log_evidence) < 0.5);
}

TEST_CASE("an extra spurious term lowers the evidence") {
  const Problem p = vdp_problem(0.01);
  const Model truth = ground_truth_model(make_system("vanderpol"), p.spec);
  const FitResult f = fit_truth_mask(p, truth);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask = truth.mask;
  mask(p.spec.find({3, 0}), 0) = true;
  Model bigger = Model::from_mask(p.spec, mask);
  bigger.xi = truth.xi;
  const FitResult g = fit_truth_mask(p, bigger);
  INFO(f.stop_reason);
  REQUIRE(f.converged);
  REQUIRE(g.converged);
  CHECK(g.loss_total <= f.loss_total + 1e-9);
  CHECK(compute_evidence(g, p.data.X_hat, p.ops, p.hp).log_evidence <
        compute_evidence(f, p.data.X_hat, p.ops, p.hp).log_evidence);
}
