#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

/// Highest Hermite order accepted anywhere in the library.
inline constexpr int kMaxHermiteOrder = 64;

namespace detail {

inline void check_order(int n, int max_order) {
  if (n < 0 || n > max_order) {
    throw std::out_of_range("Hermite order " + std::to_string(n) + " outside [0, " +
                            std::to_string(max_order) + "]");
  }
}

// mantissa * 2^exp2 * e^{-half_sq}, without forming e^{-half_sq} on its own when it
// would underflow.
inline double scaled_gaussian_product(double mantissa, int exp2, double half_sq) {
  if (mantissa == 0.0) return 0.0;
  if (exp2 == 0 && half_sq < 700.0) return mantissa * std::exp(-half_sq);
  const double log_mag =
      std::log(std::abs(mantissa)) + exp2 * std::numbers::ln2 - half_sq;
  return std::copysign(std::exp(log_mag), mantissa);
}

}  // namespace detail

/// Physicists' Hermite polynomial H_n(x) by the three-term recurrence
/// H_{n+1} = 2x H_n - 2n H_{n-1}.
inline double eval_hermite_poly(int n, double x) {
  detail::check_order(n, kMaxHermiteOrder);
  if (n == 0) return 1.0;
  double prev = 1.0;
  double cur = 2.0 * x;
  for (int k = 1; k < n; ++k) {
    const double next = 2.0 * x * cur - 2.0 * k * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

struct GaussHermiteRule {
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;  // for the weight function e^{-x^2}
};

/// Gauss-Hermite nodes and weights. Nodes start from the eigenvalues of the
/// Jacobi matrix (Golub-Welsch) and are polished by Newton steps on the
/// orthonormal recurrence, which also yields the weights 2 / (h_n'(x))^2.
inline GaussHermiteRule gauss_hermite(int count) {
  if (count < 1) throw std::invalid_argument("Gauss-Hermite rule needs at least one node");
  const int n = count;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& guess = solver.eigenvalues();

  const double pim4 = 1.0 / std::sqrt(std::sqrt(std::numbers::pi));
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = guess[i];
    double deriv = 0.0;
    for (int iter = 0; iter < 8; ++iter) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      deriv = std::sqrt(2.0 * n) * p2;
      const double step = p1 / deriv;
      z -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    w[i] = 2.0 / (deriv * deriv);
  }
  // Exact symmetry about the origin.
  for (int i = 0; i < n / 2; ++i) {
    const double node = 0.5 * (x[n - 1 - i] - x[i]);
    const double weight = 0.5 * (w[i] + w[n - 1 - i]);
    x[i] = -node;
    x[n - 1 - i] = node;
    w[i] = w[n - 1 - i] = weight;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  return {std::move(x), std::move(w)};
}

/// Orthonormal Hermite functions psi_0..psi_N,
/// psi_n(x) = (2^n n! sqrt(pi))^{-1/2} e^{-x^2/2} H_n(x),
/// together with a Gauss-Hermite rule used for projections and the Gram check.
class HermiteBasis {
 public:
  explicit HermiteBasis(int max_order, int quad_nodes = -1) : max_order_(max_order) {
    detail::check_order(max_order, kMaxHermiteOrder);
    if (quad_nodes < 0) quad_nodes = std::max(200, 2 * max_order + 2);
    norm_.resize(max_order + 1);
    // (2^n n! sqrt(pi))^{-1/2}, built by the ratio c_n / c_{n-1} = (2n)^{-1/2}.
    norm_[0] = 1.0 / std::sqrt(std::sqrt(std::numbers::pi));
    for (int n = 1; n <= max_order; ++n) norm_[n] = norm_[n - 1] / std::sqrt(2.0 * n);
    auto rule = gauss_hermite(quad_nodes);
    nodes_ = std::move(rule.nodes);
    weights_ = std::move(rule.weights);
    unweighted_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      unweighted_[i] = std::exp(std::log(weights_[i]) + nodes_[i] * nodes_[i]);
    }
  }

  [[nodiscard]] int max_order() const { return max_order_; }
  [[nodiscard]] int size() const { return max_order_ + 1; }
  [[nodiscard]] std::span<const double> norm_constants() const { return norm_; }
  [[nodiscard]] std::span<const double> quad_nodes() const { return nodes_; }
  [[nodiscard]] std::span<const double> quad_weights() const { return weights_; }
  /// Weights w_i e^{x_i^2}: integrate f over dx rather than against e^{-x^2}.
  [[nodiscard]] std::span<const double> unweighted_quad_weights() const { return unweighted_; }

  /// psi_0(x) .. psi_N(x) into out (size N+1) in a single recurrence pass.
  /// The polynomial part is carried with a binary exponent so neither H_n nor
  /// e^{-x^2/2} is formed separately.
  void features(double x, std::span<double> out) const { fill(x, max_order_, out); }

  /// Values and first derivatives, psi_n' = sqrt(2n) psi_{n-1} - x psi_n.
  void features_with_derivative(double x, std::span<double> value,
                                std::span<double> deriv) const {
    fill(x, max_order_, value);
    deriv[0] = -x * value[0];
    for (int n = 1; n <= max_order_; ++n) {
      deriv[n] = std::sqrt(2.0 * n) * value[n - 1] - x * value[n];
    }
  }

  [[nodiscard]] double eval(int n, double x) const {
    detail::check_order(n, max_order_);
    std::vector<double> buf(n + 1);
    fill(x, n, buf);
    return buf[n];
  }

  // Test hook: lets the self-test demonstrate that a bad constant is caught.
  void scale_norm_constant_for_testing(int n, double factor) {
    detail::check_order(n, max_order_);
    norm_[n] *= factor;
  }

 private:
  void fill(double x, int order, std::span<double> out) const {
    if (!std::isfinite(x)) throw std::domain_error("Hermite function evaluated at non-finite x");
    const double half_sq = 0.5 * x * x;
    // Physicists' recurrence on (mantissa, exp2) pairs sharing one exponent.
    double prev = 0.0;
    double cur = 1.0;
    int exp2 = 0;
    out[0] = detail::scaled_gaussian_product(norm_[0] * cur, exp2, half_sq);
    for (int n = 1; n <= order; ++n) {
      const double next = 2.0 * x * cur - 2.0 * (n - 1) * prev;
      prev = cur;
      cur = next;
      if (std::abs(cur) > 0x1.0p500) {
        cur = std::ldexp(cur, -500);
        prev = std::ldexp(prev, -500);
        exp2 += 500;
      }
      out[n] = detail::scaled_gaussian_product(norm_[n] * cur, exp2, half_sq);
    }
  }

  int max_order_;
  std::vector<double> norm_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::vector<double> unweighted_;
};

inline double eval_hermite_fn(const HermiteBasis& basis, int n, double x) {
  return basis.eval(n, x);
}

inline std::vector<double> feature_vector(const HermiteBasis& basis, double x) {
  std::vector<double> out(basis.size());
  basis.features(x, out);
  return out;
}

/// Coefficients c_0..c_N of a truncated expansion sum_n c_n psi_n.
class CoefficientVector {
 public:
  CoefficientVector() = default;
  explicit CoefficientVector(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {
    if (coeffs_.empty()) throw std::invalid_argument("coefficient vector must be non-empty");
    for (double c : coeffs_) {
      if (!std::isfinite(c)) throw std::domain_error("non-finite Hermite coefficient");
    }
  }

  [[nodiscard]] int basis_order() const { return static_cast<int>(coeffs_.size()) - 1; }
  [[nodiscard]] std::span<const double> coeffs() const { return coeffs_; }
  [[nodiscard]] double operator[](std::size_t n) const { return coeffs_[n]; }

 private:
  std::vector<double> coeffs_;
};

/// Quadrature estimate of int psi_n psi_m dx. Used as a correctness gate.
inline Eigen::MatrixXd gram_matrix(const HermiteBasis& basis) {
  const auto nodes = basis.quad_nodes();
  if (nodes.size() < static_cast<std::size_t>(2 * basis.max_order() + 2)) {
    throw std::invalid_argument("Gram matrix needs at least 2N+2 quadrature nodes, have " +
                                std::to_string(nodes.size()));
  }
  const auto weights = basis.unweighted_quad_weights();
  const int size = basis.size();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(size, size);
  Eigen::VectorXd psi(size);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    basis.features(nodes[i], {psi.data(), static_cast<std::size_t>(size)});
    gram.noalias() += weights[i] * psi * psi.transpose();
  }
  return gram;
}

/// Empirical mean of the feature vector over a sample set.
inline std::vector<double> mean_features(const HermiteBasis& basis,
                                         std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("sample set is empty");
  std::vector<double> acc(basis.size(), 0.0);
  std::vector<double> psi(basis.size());
  for (double x : samples) {
    basis.features(x, psi);
    for (int n = 0; n < basis.size(); ++n) acc[n] += psi[n];
  }
  for (double& a : acc) a /= static_cast<double>(samples.size());
  return acc;
}

/// c_n = (1/M) sum_i psi_n(x_i): Monte Carlo estimate of int p psi_n dx.
inline CoefficientVector project_samples(const HermiteBasis& basis,
                                         std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("projection needs at least 2 samples");
  return CoefficientVector(mean_features(basis, samples));
}

/// c_n = int f psi_n dx by Gauss-Hermite quadrature.
template <class Density>
CoefficientVector project_density(const HermiteBasis& basis, Density&& density) {
  const auto nodes = basis.quad_nodes();
  const auto weights = basis.unweighted_quad_weights();
  std::vector<double> coeffs(basis.size(), 0.0);
  std::vector<double> psi(basis.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double f = density(nodes[i]);
    if (f == 0.0) continue;
    basis.features(nodes[i], psi);
    for (int n = 0; n < basis.size(); ++n) coeffs[n] += weights[i] * f * psi[n];
  }
  return CoefficientVector(std::move(coeffs));
}

/// p(x) = sum_n c_n psi_n(x) on a grid. Values are returned raw and can dip
/// below zero where the truncation rings.
inline std::vector<double> reconstruct_density(const HermiteBasis& basis,
                                               const CoefficientVector& coeffs,
                                               std::span<const double> grid) {
  if (coeffs.basis_order() > basis.max_order()) {
    throw std::invalid_argument("coefficient order " + std::to_string(coeffs.basis_order()) +
                                " exceeds basis order " + std::to_string(basis.max_order()));
  }
  const int size = coeffs.basis_order() + 1;
  std::vector<double> psi(basis.size());
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    basis.features(grid[i], psi);
    double acc = 0.0;
    for (int n = 0; n < size; ++n) acc += coeffs[n] * psi[n];
    out[i] = acc;
  }
  return out;
}

/// Direction in coefficient space attaining the Hermite-span IPM over the unit
/// ball: (E_a[Psi] - E_b[Psi]) / norm. Zero vector when the means coincide.
inline std::vector<double> ipm_witness(const HermiteBasis& basis, std::span<const double> a,
                                       std::span<const double> b) {
  auto ma = mean_features(basis, a);
  const auto mb = mean_features(basis, b);
  double sq = 0.0;
  for (std::size_t n = 0; n < ma.size(); ++n) {
    ma[n] -= mb[n];
    sq += ma[n] * ma[n];
  }
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : ma) v *= inv;
  }
  return ma;
}

/// sup over unit-norm coefficient vectors of |E_a f - E_b f| for f in
/// span{psi_0..psi_N}, i.e. || E_a[Psi] - E_b[Psi] ||_2.
inline double hermite_ipm(const HermiteBasis& basis, std::span<const double> a,
                          std::span<const double> b) {
  const auto ma = mean_features(basis, a);
  const auto mb = mean_features(basis, b);
  double sq = 0.0;
  for (std::size_t n = 0; n < ma.size(); ++n) {
    const double d = ma[n] - mb[n];
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace hgan
