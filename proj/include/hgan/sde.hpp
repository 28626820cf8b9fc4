#pragma once

#include "hermite.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hgan {

/// Raised when a simulation produces a non-finite or out-of-domain state.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t path, std::size_t step)
      : std::runtime_error(what + " (path " + std::to_string(path) + ", step " +
                           std::to_string(step) + ")"),
        path_(path),
        step_(step) {}

  [[nodiscard]] std::size_t path() const { return path_; }
  [[nodiscard]] std::size_t step() const { return step_; }

 private:
  std::size_t path_;
  std::size_t step_;
};

// abm_gbm is dX = mu dt + sigma dW: arithmetic Brownian motion, listed as
// "GBM" in the benchmark table.
enum class ProcessKind { abm_gbm, ou, cir, poly_drift, neural };

inline std::string_view to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::abm_gbm: return "abm_gbm";
    case ProcessKind::ou: return "ou";
    case ProcessKind::cir: return "cir";
    case ProcessKind::poly_drift: return "poly_drift";
    case ProcessKind::neural: return "neural";
  }
  return "unknown";
}

inline ProcessKind parse_process_kind(std::string_view name) {
  if (name == "gbm" || name == "abm_gbm") return ProcessKind::abm_gbm;
  if (name == "ou") return ProcessKind::ou;
  if (name == "cir") return ProcessKind::cir;
  if (name == "poly" || name == "poly_drift") return ProcessKind::poly_drift;
  if (name == "neural") return ProcessKind::neural;
  throw std::invalid_argument("unknown process '" + std::string(name) +
                              "' (expected gbm, ou, cir or poly)");
}

struct ProcessSpec {
  ProcessKind kind = ProcessKind::ou;
  std::map<std::string, double, std::less<>> params;
  double x0_mean = 0.0;
  double x0_halfwidth = 0.0;   // uniform jitter on [x0_mean - hw, x0_mean + hw]
  bool positivity_scheme = false;  // full truncation inside drift and diffusion

  [[nodiscard]] double param(std::string_view name) const {
    const auto it = params.find(name);
    if (it == params.end()) {
      throw std::invalid_argument("process " + std::string(to_string(kind)) +
                                  " is missing parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  void validate() const {
    for (const auto& [name, value] : params) {
      if (!std::isfinite(value)) throw std::invalid_argument("parameter " + name + " is not finite");
    }
    if (!std::isfinite(x0_mean) || !(x0_halfwidth >= 0.0)) {
      throw std::invalid_argument("invalid initial-state distribution");
    }
    if (kind == ProcessKind::neural) return;
    if (param("sigma") < 0.0) throw std::invalid_argument("sigma must be non-negative");
    if (kind == ProcessKind::cir) {
      const double sigma = param("sigma");
      const double feller = 2.0 * param("kappa") * param("alpha");
      if (sigma * sigma > feller && !positivity_scheme) {
        throw std::invalid_argument(
            "CIR parameters violate sigma^2 <= 2 kappa alpha; enable the positivity scheme");
      }
    }
  }
};

/// Benchmark processes with their published parameters and x0 = 20 +- 0.1.
inline ProcessSpec benchmark_spec(ProcessKind kind) {
  ProcessSpec spec;
  spec.kind = kind;
  spec.x0_mean = 20.0;
  spec.x0_halfwidth = 0.1;
  switch (kind) {
    case ProcessKind::abm_gbm:
      spec.params = {{"mu", 0.05}, {"sigma", 0.02}};
      break;
    case ProcessKind::ou:
      spec.params = {{"kappa", 0.0658}, {"alpha", 23.0}, {"sigma", 0.2213}};
      break;
    case ProcessKind::cir:
      spec.params = {{"kappa", 0.0145}, {"alpha", 23.0}, {"sigma", 0.06521}};
      spec.positivity_scheme = true;
      break;
    case ProcessKind::poly_drift:
      spec.params = {{"a_m1", 0.01}, {"a0", 0.01}, {"a1", 0.001}, {"a2", -4.604}, {"sigma", 0.1}};
      spec.positivity_scheme = true;
      break;
    case ProcessKind::neural:
      throw std::invalid_argument("neural processes have no benchmark parameters");
  }
  return spec;
}

struct TimeGrid {
  double t0 = 0.0;
  double dt = 1.0;
  std::size_t steps = 1;

  [[nodiscard]] std::size_t points() const { return steps + 1; }
  [[nodiscard]] double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  [[nodiscard]] double horizon() const { return static_cast<double>(steps) * dt; }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt) || !std::isfinite(t0)) {
      throw std::invalid_argument("time grid needs finite t0 and dt > 0");
    }
    if (steps == 0) throw std::invalid_argument("time grid needs at least one step");
    if (!std::isfinite(horizon())) throw std::invalid_argument("time grid horizon overflows");
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Trajectories sharing one time grid, stored path-major.
class PathBatch {
 public:
  PathBatch() = default;
  PathBatch(TimeGrid grid, std::size_t batch, std::uint64_t seed = 0)
      : grid_(grid), batch_(batch), seed_(seed), values_(batch * grid.points(), 0.0) {
    grid_.validate();
  }

  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] std::size_t batch_size() const { return batch_; }
  [[nodiscard]] std::size_t points() const { return grid_.points(); }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  [[nodiscard]] std::span<double> path(std::size_t i) {
    return {values_.data() + i * points(), points()};
  }
  [[nodiscard]] std::span<const double> path(std::size_t i) const {
    return {values_.data() + i * points(), points()};
  }
  [[nodiscard]] double& at(std::size_t i, std::size_t k) { return values_[i * points() + k]; }
  [[nodiscard]] double at(std::size_t i, std::size_t k) const { return values_[i * points() + k]; }

  /// Cross-section of all paths at grid index k.
  [[nodiscard]] std::vector<double> column(std::size_t k) const {
    std::vector<double> out(batch_);
    for (std::size_t i = 0; i < batch_; ++i) out[i] = at(i, k);
    return out;
  }

  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] std::span<double> values() { return values_; }

  /// Rows [first, first + count) as a new batch.
  [[nodiscard]] PathBatch slice(std::size_t first, std::size_t count) const {
    if (first + count > batch_) throw std::out_of_range("path slice out of range");
    PathBatch out(grid_, count, seed_);
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(first * points()),
                count * points(), out.values_.begin());
    return out;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const PathBatch&, const PathBatch&) = default;

 private:
  TimeGrid grid_;
  std::size_t batch_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> values_;
};

enum class Scheme { euler_maruyama, stratonovich_heun };

inline std::string_view to_string(Scheme scheme) {
  return scheme == Scheme::euler_maruyama ? "euler_maruyama" : "stratonovich_heun";
}

inline Scheme parse_scheme(std::string_view name) {
  if (name == "euler_maruyama" || name == "em") return Scheme::euler_maruyama;
  if (name == "stratonovich_heun" || name == "heun") return Scheme::stratonovich_heun;
  throw std::invalid_argument("unknown scheme '" + std::string(name) + "'");
}

namespace detail {

inline void require_analytic(const ProcessSpec& spec) {
  if (spec.kind == ProcessKind::neural) {
    throw std::invalid_argument("drift/diffusion of a neural process live in the generator");
  }
}

}  // namespace detail

inline double drift(const ProcessSpec& spec, double /*t*/, double x) {
  detail::require_analytic(spec);
  switch (spec.kind) {
    case ProcessKind::abm_gbm:
      return spec.param("mu");
    case ProcessKind::ou:
    case ProcessKind::cir:
      return spec.param("kappa") * (spec.param("alpha") - x);
    case ProcessKind::poly_drift: {
      if (x == 0.0) throw std::domain_error("polynomial drift is singular at x = 0");
      return spec.param("a_m1") / x + spec.param("a0") + spec.param("a1") * x +
             spec.param("a2") * x * x;
    }
    case ProcessKind::neural:
      break;
  }
  return 0.0;
}

inline double diffusion(const ProcessSpec& spec, double /*t*/, double x) {
  detail::require_analytic(spec);
  const double sigma = spec.param("sigma");
  switch (spec.kind) {
    case ProcessKind::abm_gbm:
    case ProcessKind::ou:
      return sigma;
    case ProcessKind::cir:
      if (x < 0.0) throw std::domain_error("CIR diffusion needs x >= 0");
      return sigma * std::sqrt(x);
    case ProcessKind::poly_drift:
      if (x < 0.0) throw std::domain_error("x^(3/2) diffusion needs x >= 0");
      return sigma * x * std::sqrt(x);
    case ProcessKind::neural:
      break;
  }
  return 0.0;
}

/// Initial state x0_mean + halfwidth * U(-1, 1) for a given path.
inline double initial_state(const ProcessSpec& spec, std::uint64_t seed, std::uint64_t path) {
  if (spec.x0_halfwidth == 0.0) return spec.x0_mean;
  const double u = uniform_at(seed, path, 0, Stream::initial_jitter);
  return spec.x0_mean + spec.x0_halfwidth * (2.0 * u - 1.0);
}

struct SimulationOptions {
  int substeps = 1;              // integration steps per grid interval
  std::uint64_t first_path = 0;  // global index of row 0, keys the noise
};

/// Integrates one path given its Brownian increments, one per substep
/// (increments.size() == steps * substeps). Writes grid values into out.
/// Throws std::domain_error / NumericalError(path = 0) on invalid states.
inline void integrate_path(const ProcessSpec& spec, const TimeGrid& grid, Scheme scheme, double x0,
                           std::span<const double> increments, int substeps,
                           std::span<double> out) {
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  if (increments.size() != grid.steps * static_cast<std::size_t>(substeps)) {
    throw std::invalid_argument("increment count does not match grid");
  }
  const double h = grid.dt / substeps;
  const bool clamp = spec.positivity_scheme;
  auto f = [&](double t, double x) { return drift(spec, t, clamp ? std::max(x, 0.0) : x); };
  auto g = [&](double t, double x) { return diffusion(spec, t, clamp ? std::max(x, 0.0) : x); };

  double x = x0;
  out[0] = x;
  std::size_t n = 0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    for (int j = 0; j < substeps; ++j, ++n) {
      const double t = grid.time(k) + j * h;
      const double dw = increments[n];
      const double f0 = f(t, x);
      const double g0 = g(t, x);
      if (scheme == Scheme::euler_maruyama) {
        x = x + f0 * h + g0 * dw;
      } else {
        const double pred = x + f0 * h + g0 * dw;
        x = x + 0.5 * (f0 + f(t + h, pred)) * h + 0.5 * (g0 + g(t + h, pred)) * dw;
      }
      if (!std::isfinite(x)) throw NumericalError("non-finite state", 0, k + 1);
    }
    // Full truncation reports the positive part; the internal state keeps its sign.
    out[k + 1] = clamp ? std::max(x, 0.0) : x;
  }
}

/// Simulates a batch with noise keyed by (seed, global path index, substep),
/// so any row is reproducible independently of batch composition.
inline PathBatch simulate(const ProcessSpec& spec, const TimeGrid& grid, Scheme scheme,
                          std::size_t batch, std::uint64_t seed,
                          const SimulationOptions& options = {}) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  spec.validate();
  grid.validate();
  PathBatch out(grid, batch, seed);
  const std::size_t n_inc = grid.steps * static_cast<std::size_t>(options.substeps);
  const double sqrt_h = std::sqrt(grid.dt / options.substeps);
  std::vector<double> increments(n_inc);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::uint64_t gid = options.first_path + i;
    for (std::size_t s = 0; s < n_inc; ++s) {
      increments[s] = sqrt_h * normal_at(seed, gid, s, Stream::brownian);
    }
    try {
      integrate_path(spec, grid, scheme, initial_state(spec, seed, gid), increments,
                     options.substeps, out.path(i));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(to_string(spec.kind)) + " simulation aborted: non-finite state",
                           gid, e.step());
    } catch (const std::domain_error& e) {
      throw NumericalError(std::string(to_string(spec.kind)) + " simulation aborted: " + e.what(),
                           gid, 0);
    }
  }
  return out;
}

inline PathBatch euler_maruyama(const ProcessSpec& spec, const TimeGrid& grid, std::size_t batch,
                                std::uint64_t seed, const SimulationOptions& options = {}) {
  return simulate(spec, grid, Scheme::euler_maruyama, batch, seed, options);
}

inline PathBatch stratonovich_heun(const ProcessSpec& spec, const TimeGrid& grid,
                                   std::size_t batch, std::uint64_t seed,
                                   const SimulationOptions& options = {}) {
  return simulate(spec, grid, Scheme::stratonovich_heun, batch, seed, options);
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck oracles

struct GaussianMoments {
  double mean;
  double variance;
};

namespace detail {

inline void require_ou(const ProcessSpec& spec) {
  if (spec.kind != ProcessKind::ou) throw std::invalid_argument("OU oracle needs an OU process");
  if (!(spec.param("kappa") > 0.0) || !(spec.param("sigma") > 0.0)) {
    throw std::invalid_argument("OU oracle needs kappa > 0 and sigma > 0");
  }
}

}  // namespace detail

inline GaussianMoments ou_transition_moments(const ProcessSpec& spec, double x0, double t) {
  detail::require_ou(spec);
  if (!(t > 0.0)) throw std::invalid_argument("transition time must be positive");
  const double kappa = spec.param("kappa");
  const double alpha = spec.param("alpha");
  const double sigma = spec.param("sigma");
  const double decay = std::exp(-kappa * t);
  return {x0 * decay + alpha * (1.0 - decay),
          sigma * sigma * -std::expm1(-2.0 * kappa * t) / (2.0 * kappa)};
}

inline GaussianMoments ou_stationary_moments(const ProcessSpec& spec) {
  detail::require_ou(spec);
  const double sigma = spec.param("sigma");
  return {spec.param("alpha"), sigma * sigma / (2.0 * spec.param("kappa"))};
}

inline double ou_transition_density(const ProcessSpec& spec, double x0, double t, double x) {
  const auto [mean, var] = ou_transition_moments(spec, x0, t);
  const double z = (x - mean);
  return std::exp(-0.5 * z * z / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// Orthonormal probabilists' Hermite polynomials He_n(z) / sqrt(n!), n = 0..max_n.
inline std::vector<double> normalized_prob_hermite(int max_n, double z) {
  std::vector<double> out(max_n + 1);
  out[0] = 1.0;
  if (max_n >= 1) out[1] = z;
  for (int n = 1; n < max_n; ++n) {
    out[n + 1] = (z * out[n] - std::sqrt(static_cast<double>(n)) * out[n - 1]) /
                 std::sqrt(static_cast<double>(n + 1));
  }
  return out;
}

inline constexpr int kMaxOuEigenOrder = 20;

/// Coefficients of the OU transition density p(. | x0, t) in the eigenbasis of
/// the OU generator: c_n(t) = int p(x | x0, t) gamma_n(z(x)) dx, with
/// z = (x - alpha) / s, s^2 = sigma^2 / (2 kappa) and gamma_n = He_n / sqrt(n!).
/// Computed by Gauss-Hermite quadrature against the Gaussian transition law.
inline std::vector<double> ou_eigen_coefficients(const ProcessSpec& spec, double x0, double t,
                                                 int max_n) {
  if (max_n < 0 || max_n > kMaxOuEigenOrder) {
    throw std::out_of_range("OU eigen order must be in [0, " +
                            std::to_string(kMaxOuEigenOrder) + "]");
  }
  const auto [mean, var] = ou_transition_moments(spec, x0, t);
  const auto [alpha, stat_var] = ou_stationary_moments(spec);
  const double stat_sd = std::sqrt(stat_var);
  static const GaussHermiteRule rule = gauss_hermite(48);
  std::vector<double> coeffs(max_n + 1, 0.0);
  const double scale = std::sqrt(2.0 * var);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = mean + scale * rule.nodes[i];
    const auto gamma = normalized_prob_hermite(max_n, (x - alpha) / stat_sd);
    const double w = rule.weights[i] / std::sqrt(std::numbers::pi);
    for (int n = 0; n <= max_n; ++n) coeffs[n] += w * gamma[n];
  }
  return coeffs;
}

}  // namespace hgan
