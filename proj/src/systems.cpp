#include "odrid/systems.hpp"

#include "odrid/odr.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace odrid {

namespace {

double param(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw std::invalid_argument("missing system parameter '" + key + "'");
  return it->second;
}

void merge(std::map<std::string, double>& base, const std::map<std::string, double>& over) {
  for (const auto& [k, v] : over) {
    if (k.rfind("x0_", 0) == 0) continue;
    if (!base.count(k)) throw std::invalid_argument("unknown system parameter '" + k + "'");
    base[k] = v;
  }
}

void override_x0(SystemDef& s, const std::map<std::string, double>& over) {
  for (int j = 0; j < s.state_dim; ++j) {
    auto it = over.find("x0_" + std::to_string(j + 1));
    if (it != over.end()) s.x0[j] = it->second;
  }
}

}  // namespace

Eigen::MatrixXd SystemDef::xi_true(const LibrarySpec& spec) const {
  if (spec.state_dim != state_dim)
    throw std::invalid_argument("library state dimension does not match system '" + name + "'");
  Eigen::MatrixXd Xi = Eigen::MatrixXd::Zero(spec.num_terms(), state_dim);
  for (const auto& t : true_terms) {
    const int m = spec.find(t.exponents);
    if (m < 0) {
      LibrarySpec tmp = spec;
      tmp.terms = {t.exponents};
      throw std::invalid_argument("true term " + tmp.term_name(0) + " of system '" + name +
                                  "' is not in the library");
    }
    Xi(m, t.equation) += t.coefficient;
  }
  return Xi;
}

std::vector<std::string> system_names() {
  return {"lorenz63", "vanderpol", "rossler", "decay", "linear"};
}

SystemDef make_system(const std::string& name, const std::map<std::string, double>& params) {
  SystemDef s;
  s.name = name;
  if (name == "lorenz63") {
    s.params = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}};
    merge(s.params, params);
    const double sg = param(s.params, "sigma"), rho = param(s.params, "rho"),
                 beta = param(s.params, "beta");
    s.state_dim = 3;
    s.x0 = Eigen::Vector3d(-8.0, 8.0, 27.0);
    s.rhs = [sg, rho, beta](const Eigen::VectorXd& x) {
      Eigen::VectorXd f(3);
      f << sg * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2];
      return f;
    };
    s.true_terms = {{{1, 0, 0}, 0, -sg},  {{0, 1, 0}, 0, sg},    {{1, 0, 0}, 1, rho},
                    {{0, 1, 0}, 1, -1.0}, {{1, 0, 1}, 1, -1.0},  {{0, 0, 1}, 2, -beta},
                    {{1, 1, 0}, 2, 1.0}};
    s.defaults = {0.01, 10.0, 2, true, 6, 1e-3, 100.0};
  } else if (name == "vanderpol") {
    s.params = {{"mu", 0.5}};
    merge(s.params, params);
    const double mu = param(s.params, "mu");
    s.state_dim = 2;
    s.x0 = Eigen::Vector2d(-2.0, 1.0);
    s.rhs = [mu](const Eigen::VectorXd& x) {
      Eigen::VectorXd f(2);
      f << x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
      return f;
    };
    s.true_terms = {{{0, 1}, 0, 1.0}, {{1, 0}, 1, -1.0}, {{0, 1}, 1, mu}, {{2, 1}, 1, -mu}};
    s.defaults = {0.01, 20.0, 3, true, 4, 1e-2, 10.0};
  } else if (name == "rossler") {
    s.params = {{"a", 0.2}, {"b", 0.2}, {"c", 5.7}};
    merge(s.params, params);
    const double a = param(s.params, "a"), b = param(s.params, "b"), c = param(s.params, "c");
    s.state_dim = 3;
    s.x0 = Eigen::Vector3d(-6.0, 5.0, 0.0);
    s.rhs = [a, b, c](const Eigen::VectorXd& x) {
      Eigen::VectorXd f(3);
      f << -x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c);
      return f;
    };
    s.true_terms = {{{0, 1, 0}, 0, -1.0}, {{0, 0, 1}, 0, -1.0}, {{1, 0, 0}, 1, 1.0},
                    {{0, 1, 0}, 1, a},    {{0, 0, 0}, 2, b},    {{0, 0, 1}, 2, -c},
                    {{1, 0, 1}, 2, 1.0}};
    s.defaults = {0.05, 25.0, 2, true, 6, 5e-3, 50.0};
  } else if (name == "decay") {
    s.params = {{"rate", 1.0}};
    merge(s.params, params);
    const double rate = param(s.params, "rate");
    s.state_dim = 1;
    s.x0 = Eigen::VectorXd::Constant(1, 1.0);
    s.rhs = [rate](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, -rate * x[0]); };
    s.true_terms = {{{1}, 0, -rate}};
    s.defaults = {0.01, 5.0, 1, false, 4, 1e-3, 10.0};
  } else if (name == "linear") {
    s.params = {{"a", 0.5}};
    merge(s.params, params);
    const double a = param(s.params, "a");
    s.state_dim = 1;
    s.x0 = Eigen::VectorXd::Constant(1, 1.0);
    s.rhs = [a](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, a * x[0]); };
    s.true_terms = {{{1}, 0, a}};
    s.defaults = {0.1, 1.0, 1, false, 2, 1e-2, 10.0};
  } else {
    throw std::invalid_argument("unknown system '" + name + "'");
  }
  override_x0(s, params);
  return s;
}

TimeSeriesData integrate(const SystemDef& system, double dt, double T, int fine_substeps) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  if (!(T >= dt)) throw std::invalid_argument("integrate: T must be at least dt");
  if (fine_substeps < 1) throw std::invalid_argument("integrate: fine_substeps must be >= 1");
  const int n = static_cast<int>(std::floor(T / dt * (1.0 + 1e-12))) + 1;
  const double h = dt / fine_substeps;
  const int D = system.state_dim;

  TimeSeriesData out;
  out.dt = dt;
  out.times.resize(n);
  out.X_hat.resize(n, D);
  Eigen::VectorXd x = system.x0;
  for (int k = 0; k < n; ++k) {
    out.times[k] = k * dt;
    out.X_hat.row(k) = x.transpose();
    if (k + 1 == n) break;
    for (int s = 0; s < fine_substeps; ++s) {
      const Eigen::VectorXd k1 = system.rhs(x);
      const Eigen::VectorXd k2 = system.rhs(x + 0.5 * h * k1);
      const Eigen::VectorXd k3 = system.rhs(x + 0.5 * h * k2);
      const Eigen::VectorXd k4 = system.rhs(x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "integration of '" << system.name << "' diverged before t = " << (k + 1) * dt;
      throw std::runtime_error(os.str());
    }
  }
  out.X_clean = out.X_hat;
  return out;
}

double flattened_std(const Eigen::MatrixXd& X) {
  const double mean = X.mean();
  return std::sqrt((X.array() - mean).square().mean());
}

TimeSeriesData add_noise(const TimeSeriesData& clean, double noise_level, std::uint64_t seed) {
  if (!(noise_level >= 0.0)) throw std::invalid_argument("noise_level must be non-negative");
  const Eigen::MatrixXd& base = clean.X_clean ? *clean.X_clean : clean.X_hat;
  TimeSeriesData out = clean;
  out.X_clean = base;
  out.noise_level = noise_level;
  out.seed = seed;
  out.sigma_x = noise_level * flattened_std(base);
  out.X_hat = base;
  if (noise_level == 0.0) return out;

  std::mt19937_64 gen(seed);
  constexpr double inv53 = 1.0 / 9007199254740992.0;  // 2^-53
  double spare = 0.0;
  bool have_spare = false;
  for (Eigen::Index k = 0; k < base.rows(); ++k) {
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      double z;
      if (have_spare) {
        z = spare;
        have_spare = false;
      } else {
        const double u1 = static_cast<double>((gen() >> 11) + 1) * inv53;
        const double u2 = static_cast<double>(gen() >> 11) * inv53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        z = r * std::cos(a);
        spare = r * std::sin(a);
        have_spare = true;
      }
      out.X_hat(k, j) = base(k, j) + out.sigma_x * z;
    }
  }
  return out;
}

Model ground_truth_model(const SystemDef& system, const LibrarySpec& spec) {
  const Eigen::MatrixXd Xi = system.xi_true(spec);
  Model m = Model::from_mask(spec, Xi.array() != 0.0);
  m.xi = Xi;
  return m;
}

}  // namespace odrid
