#pragma once
// Built-in checks run by `hgan selftest`: basis orthonormality, expansion
// accuracy, gradient checks, solver moments and OU eigen-decay.

#include <hgan/discriminator.hpp>
#include <hgan/generator.hpp>
#include <hgan/hermite.hpp>
#include <hgan/nn.hpp>
#include <hgan/sde.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace hgan {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SelftestOptions {
  bool corrupt_norm = false;  // fault injection: scale one normalisation constant
};

namespace detail {

inline CheckResult check_le(std::string name, double value, double tol, std::string detail = {}) {
  return {std::move(name), std::isfinite(value) && value <= tol, value, tol, std::move(detail)};
}

inline CheckResult selftest_orthonormality(bool corrupt) {
  HermiteBasis basis(12, 200);
  if (corrupt) basis.scale_norm_constant_for_testing(7, 1.001);
  const Eigen::MatrixXd g = gram_matrix(basis);
  const double err = (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
  return check_le("orthonormality", err, 1e-8, "max |G - I|, N = 12, 200 nodes");
}

inline CheckResult selftest_reconstruction() {
  HermiteBasis basis(16);
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  const auto c = project_density(basis, pdf);
  std::vector<double> grid;
  for (int i = 0; i <= 800; ++i) grid.push_back(-4.0 + 0.01 * i);
  const auto p = reconstruct_density(basis, c, grid);
  double err = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) err = std::max(err, std::abs(p[i] - pdf(grid[i])));
  return check_le("reconstruction", err, 1e-3, "sup error of N(0,1) on [-4, 4], N = 16");
}

inline CheckResult selftest_mlp_gradient() {
  Mlp net({3, 12, 12, 2}, Activation::tanh, Activation::identity, {.seed = 17});
  Eigen::MatrixXd x(3, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * uniform_at(17, i, 0, Stream::probe) - 1.0;
  const auto res = grad_check(net, x,
                              [](const Eigen::MatrixXd& out) {
                                return std::pair<double, Eigen::MatrixXd>{0.5 * out.squaredNorm(), out};
                              },
                              40, 3);
  return check_le("mlp_gradient", res.max_rel_error, 1e-6, "40 probes, tanh net");
}

inline CheckResult selftest_generator_gradient() {
  NeuralSdeGenerator gen({.hidden = {16, 16}, .init_diffusion = 0.3, .final_weight_scale = 1.0, .seed = 4},
                         {0.0, 1.0, 10}, 20.0, 0.9);
  const std::size_t batch = 3;
  Eigen::MatrixXd w(batch, 11);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal_at(8, i, 0, Stream::probe);
  auto value = [&] {
    const auto p = gen.sample(batch, 11, false).paths;
    double acc = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t k = 0; k < p.points(); ++k) acc += w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * p.at(i, k);
    }
    return acc;
  };
  const auto s = gen.sample(batch, 11);
  const auto g = gen.backprop(*s.tape, w);
  double worst = 0.0;
  int probes = 0;
  auto probe = [&](Mlp& net, const Eigen::VectorXd& analytic, std::uint64_t tag) {
    for (int p = 0; p < 5; ++p, ++probes) {
      const auto idx = static_cast<Eigen::Index>(uniform_at(tag, p, 0, Stream::probe) * analytic.size());
      const double saved = net.params()[idx];
      net.mutable_params()[idx] = saved + 1e-5;
      const double up = value();
      net.mutable_params()[idx] = saved - 1e-5;
      const double down = value();
      net.mutable_params()[idx] = saved;
      const double fd = (up - down) / 2e-5;
      worst = std::max(worst, std::abs(fd - analytic[idx]) / std::max({std::abs(fd), std::abs(analytic[idx]), 1e-6}));
    }
  };
  probe(gen.h_net(), g.h, 1);
  probe(gen.f_net(), g.f, 2);
  probe(gen.g_net(), g.g, 3);
  return check_le("generator_gradient", worst, 1e-4, std::to_string(probes) + " probes, 10-step unroll");
}

inline CheckResult selftest_discriminator_gradient() {
  const TimeGrid grid{0.0, 1.0, 19};
  HermiteDiscriminator d({.order = 4, .hidden = {16, 16}, .target_first = 10, .target_count = 10, .seed = 3}, grid,
                         0.5, 0.8);
  PathBatch paths(grid, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < grid.points(); ++k) paths.at(i, k) = 0.5 + 0.8 * normal_at(21, i, k, Stream::probe);
  }
  const auto g = d.path_gradients(paths);
  double worst = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k : {std::size_t{0}, std::size_t{10}, std::size_t{15}, std::size_t{19}}) {
      const double saved = paths.at(i, k);
      paths.at(i, k) = saved + 1e-5;
      const double up = d.score_path(paths.path(i));
      paths.at(i, k) = saved - 1e-5;
      const double down = d.score_path(paths.path(i));
      paths.at(i, k) = saved;
      const double fd = (up - down) / 2e-5;
      const double a = g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6}));
    }
  }
  return check_le("discriminator_gradient", worst, 1e-5, "path gradients vs central differences");
}

inline CheckResult selftest_ou_moments() {
  const auto spec = [] {
    auto s = benchmark_spec(ProcessKind::ou);
    s.x0_halfwidth = 0.0;
    return s;
  }();
  const TimeGrid grid{0.0, 0.01, 1000};
  const std::size_t n = 20000;
  const auto p = euler_maruyama(spec, grid, n, 31);
  const auto col = p.column(grid.steps);
  double mean = 0.0;
  for (double v : col) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : col) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const auto m = ou_transition_moments(spec, spec.x0_mean, grid.horizon());
  const double z_mean = std::abs(mean - m.mean) / std::sqrt(m.variance / n);
  const double z_var = std::abs(var - m.variance) / (m.variance * std::sqrt(2.0 / (n - 1)));
  return check_le("ou_solver_moments", std::max(z_mean, z_var), 3.0, "standard errors from the analytic mean/variance");
}

inline CheckResult selftest_eigen_decay() {
  const auto spec = benchmark_spec(ProcessKind::ou);
  const double kappa = spec.param("kappa");
  const auto c5 = ou_eigen_coefficients(spec, 20.0, 5.0, 3);
  const auto c10 = ou_eigen_coefficients(spec, 20.0, 10.0, 3);
  double worst = 0.0;
  for (int n = 1; n <= 3; ++n) {
    const double slope = (std::log(std::abs(c10[n])) - std::log(std::abs(c5[n]))) / 5.0;
    worst = std::max(worst, std::abs(slope / (-kappa * n) - 1.0));
  }
  return check_le("ou_eigen_decay", worst, 0.01, "relative slope error, n = 1..3");
}

}  // namespace detail

/// Runs every check; a check that throws is reported as failed.
inline std::vector<CheckResult> run_selftest(const SelftestOptions& opt = {}) {
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks{
      {"orthonormality", [&] { return detail::selftest_orthonormality(opt.corrupt_norm); }},
      {"reconstruction", detail::selftest_reconstruction},
      {"mlp_gradient", detail::selftest_mlp_gradient},
      {"generator_gradient", detail::selftest_generator_gradient},
      {"discriminator_gradient", detail::selftest_discriminator_gradient},
      {"ou_solver_moments", detail::selftest_ou_moments},
      {"ou_eigen_decay", detail::selftest_eigen_decay},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, NAN, 0.0, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace hgan
