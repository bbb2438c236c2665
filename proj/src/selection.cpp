#include "odrid/selection.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <mutex>
#include <thread>

namespace odrid {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int resolve_workers(int w) {
  if (w > 0) return w;
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class F>
void parallel_for(int n, int workers, F&& body) {
  workers = std::min(resolve_workers(workers), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + n / 2));
}

}  // namespace

void SelectionOptions::validate() const {
  if (n_bootstrap < 1 || n_multistart < 1) throw std::invalid_argument("ensemble sizes must be >= 1");
  if (n_multistart > n_bootstrap)
    throw std::invalid_argument("n_multistart cannot exceed n_bootstrap");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (trial_max_iterations < 1 || full_max_iterations < 1)
    throw std::invalid_argument("iteration caps must be >= 1");
  if (!(ridge_lambda > 0.0)) throw std::invalid_argument("ridge_lambda must be positive");
}

std::vector<Eigen::MatrixXd> bootstrap_linear_init(const Eigen::MatrixXd& x_hat,
                                                   const CollocationOperators& ops,
                                                   const LibrarySpec& spec,
                                                   const SelectionOptions& opts) {
  opts.validate();
  const auto [dX, IX] = apply(ops, x_hat);
  const Eigen::MatrixXd Th = eval_theta(spec, IX);
  const int N = static_cast<int>(Th.rows());
  const int M = static_cast<int>(Th.cols());
  if (N < M) throw std::invalid_argument("fewer collocation rows than library terms");
  const double scale = std::max((Th.transpose() * Th).trace() / M, 1e-300);
  const double lam = opts.ridge_lambda * scale;

  std::mt19937_64 gen(opts.seed);
  std::uniform_int_distribution<int> pick(0, N - 1);
  std::vector<Eigen::MatrixXd> fits;
  fits.reserve(opts.n_bootstrap);
  Eigen::MatrixXd Ts(N, M), Ds(N, dX.cols());
  for (int b = 0; b < opts.n_bootstrap; ++b) {
    for (int i = 0; i < N; ++i) {
      const int r = opts.resample ? pick(gen) : i;
      Ts.row(i) = Th.row(r);
      Ds.row(i) = dX.row(r);
    }
    Eigen::MatrixXd G = Ts.transpose() * Ts;
    G.diagonal().array() += lam;
    fits.push_back(G.ldlt().solve(Ts.transpose() * Ds));
  }

  // n_multistart members without replacement (all of them if fewer exist).
  std::vector<int> order(opts.n_bootstrap);
  for (int b = 0; b < opts.n_bootstrap; ++b) order[b] = b;
  std::shuffle(order.begin(), order.end(), gen);
  std::vector<Eigen::MatrixXd> out;
  for (int j = 0; j < std::min(opts.n_multistart, opts.n_bootstrap); ++j) out.push_back(fits[order[j]]);

  Eigen::MatrixXd med(M, dX.cols());
  std::vector<double> buf(opts.n_bootstrap);
  for (int m = 0; m < M; ++m) {
    for (Eigen::Index d = 0; d < dX.cols(); ++d) {
      for (int b = 0; b < opts.n_bootstrap; ++b) buf[b] = fits[b](m, d);
      med(m, d) = median(buf);
    }
  }
  out.push_back(med);
  return out;
}

FitResult fit_full_library(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                           const LibrarySpec& spec, const Hyperparameters& hyper,
                           const SelectionOptions& opts, std::vector<FitResult>* all_starts) {
  const std::vector<Eigen::MatrixXd> inits = bootstrap_linear_init(x_hat, ops, spec, opts);
  const Model full = Model::full(spec);
  SolverOptions so = opts.solver;
  so.max_iterations = opts.full_max_iterations;
  std::vector<FitResult> runs(inits.size());
  parallel_for(static_cast<int>(inits.size()), opts.workers, [&](int s) {
    Model m = full;
    m.xi = inits[s];
    runs[s] = solve_odr(x_hat, m.active_values(), x_hat, ops, hyper, full, so);
  });
  int best = -1;
  for (int s = 0; s < static_cast<int>(runs.size()); ++s) {
    const auto better = [&](const FitResult& a, const FitResult& b) {
      if (a.converged != b.converged) return a.converged;
      return a.loss_total < b.loss_total;
    };
    if (best < 0 || better(runs[s], runs[best])) best = s;
  }
  FitResult out = runs[best];
  if (all_starts) *all_starts = std::move(runs);
  return out;
}

SelectionResult greedy_select(const Eigen::MatrixXd& x_hat, const CollocationOperators& ops,
                              const LibrarySpec& spec, const Hyperparameters& hyper,
                              const SelectionOptions& opts, const FitResult* start) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SelectionResult res;
  if (start) {
    res.full_fit = *start;
  } else {
    res.full_fit = fit_full_library(x_hat, ops, spec, hyper, opts);
    res.total_fits += opts.n_multistart + 1;
  }

  auto evidence_of = [&](const FitResult& f) {
    try {
      return compute_evidence(f, x_hat, ops, hyper, opts.evidence);
    } catch (const std::runtime_error&) {
      EvidenceResult e;
      e.log_evidence = kNegInf;
      return e;
    }
  };

  FitResult incumbent = res.full_fit;
  EvidenceResult inc_ev = evidence_of(incumbent);
  res.trace.push_back({0, {}, incumbent.model.n_active(), inc_ev.log_evidence, incumbent.converged});
  bool have_best = false;
  double best_ev = kNegInf;
  if (incumbent.converged) {
    res.chosen_fit = incumbent;
    res.chosen_evidence = inc_ev;
    best_ev = inc_ev.log_evidence;
    have_best = true;
  }

  SolverOptions trial_opts = opts.solver;
  trial_opts.max_iterations = opts.trial_max_iterations;
  int declines = 0;
  for (int step = 1;; ++step) {
    if (incumbent.model.n_active() <= 1) {
      res.stop_reason = "single term";
      break;
    }
    // Candidate removals for this round.
    std::vector<std::vector<int>> removals;
    const std::vector<int> act = incumbent.model.active();
    if (opts.row_wise) {
      for (int m = 0; m < spec.num_terms(); ++m) {
        std::vector<int> ids;
        for (int id : act)
          if (incumbent.model.term_of(id) == m) ids.push_back(id);
        if (!ids.empty() && static_cast<int>(ids.size()) < static_cast<int>(act.size()))
          removals.push_back(ids);
      }
    } else {
      for (int id : act) removals.push_back({id});
    }
    if (removals.empty()) {
      res.stop_reason = "single term";
      break;
    }

    const int nc = static_cast<int>(removals.size());
    std::vector<FitResult> fits(nc);
    std::vector<EvidenceResult> evs(nc);
    parallel_for(nc, opts.workers, [&](int c) {
      Model m = incumbent.model;
      for (int id : removals[c]) m = m.without(id);
      fits[c] = solve_odr(incumbent.x_star, m.active_values(), x_hat, ops, hyper, m, trial_opts);
      if (fits[c].converged) {
        evs[c] = evidence_of(fits[c]);
      } else {
        evs[c].log_evidence = kNegInf;
      }
    });
    res.total_fits += nc;

    int pick = -1;
    for (int c = 0; c < nc; ++c) {
      res.candidates.push_back(
          {step, removals[c], fits[c].converged, fits[c].iterations, evs[c].log_evidence});
      if (!std::isfinite(evs[c].log_evidence)) continue;
      if (pick < 0) {
        pick = c;
        continue;
      }
      const double a = evs[c].log_evidence, b = evs[pick].log_evidence;
      const double tol = 1e-9 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
      if (a > b + tol) {
        pick = c;
      } else if (std::abs(a - b) <= tol) {
        const int na = fits[c].model.n_active(), nb = fits[pick].model.n_active();
        if (na < nb || (na == nb && removals[c].front() < removals[pick].front())) pick = c;
      }
    }
    if (pick < 0) {
      res.stop_reason = "no removable term";
      break;
    }

    incumbent = std::move(fits[pick]);
    const double ev = evs[pick].log_evidence;
    res.trace.push_back({step, removals[pick], incumbent.model.n_active(), ev, true});
    if (!have_best || ev > best_ev) {
      best_ev = ev;
      res.chosen_fit = incumbent;
      res.chosen_evidence = evs[pick];
      have_best = true;
      declines = 0;
    } else if (++declines >= opts.patience) {
      res.stop_reason = "patience";
      break;
    }
  }
  if (!have_best) {
    // Nothing converged; report the full fit so callers still get a model.
    res.chosen_fit = res.full_fit;
    res.chosen_evidence = inc_ev;
    res.chosen_evidence.log_evidence = kNegInf;
  }
  res.chosen = res.chosen_fit.model;
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

double param_error(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_true) {
  if (xi.rows() != xi_true.rows() || xi.cols() != xi_true.cols())
    throw std::invalid_argument("param_error: shape mismatch");
  const double n = xi_true.norm();
  if (!(n > 0.0)) throw std::invalid_argument("param_error: true coefficients are all zero");
  return (xi - xi_true).norm() / n;
}

bool same_support(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_true) {
  if (xi.rows() != xi_true.rows() || xi.cols() != xi_true.cols()) return false;
  return ((xi.array() != 0.0) == (xi_true.array() != 0.0)).all();
}

}  // namespace odrid
