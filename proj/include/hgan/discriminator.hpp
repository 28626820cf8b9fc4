#pragma once

#include "hermite.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "sde.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

struct DiscriminatorConfig {
  int order = 4;
  std::vector<int> hidden = {128, 128};
  Activation activation = Activation::tanh;
  double penalty_weight = 10.0;
  std::size_t target_first = 100;  // first scored grid index
  std::size_t target_count = 50;
  std::uint64_t seed = 0;
};

inline constexpr int kMaxDiscriminatorOrder = 12;

struct ScoreTape {
  MlpCache cache;             // coeff_net over batch*K columns, path-major
  Eigen::MatrixXd features;   // (N+1) x batch*K
  Eigen::MatrixXd dfeatures;  // derivatives of the features
  std::size_t batch = 0;
};

struct ScoreResult {
  Eigen::VectorXd scores;
  ScoreTape tape;
};

struct DiscriminatorGradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd paths;  // batch x points, d loss / d x
};

struct PenaltyResult {
  double penalty = 0.0;
  Eigen::VectorXd params;     // d penalty / d coeff_net parameters
  Eigen::VectorXd grad_norms; // per-interpolant |grad_x D|
  Eigen::VectorXd scores;     // D at the interpolants
};

/// (|g_i| - 1)^2 averaged over rows of g, with d/dg. Rows with |g| = 0 get a
/// zero derivative since the direction is undefined there.
inline std::pair<double, Eigen::MatrixXd> penalty_from_gradients(const Eigen::MatrixXd& g) {
  if (g.rows() == 0) throw std::invalid_argument("penalty needs at least one gradient");
  const auto B = static_cast<double>(g.rows());
  double total = 0.0;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double norm = g.row(i).norm();
    total += (norm - 1.0) * (norm - 1.0);
    if (norm > 0.0) d.row(i) = (2.0 * (norm - 1.0) / (norm * B)) * g.row(i);
  }
  return {total / B, d};
}

/// D(x) = (1/K) sum_k <c(t_k, s(x_0)), Psi(s(x_k))> over the target window,
/// s(x) = (x - mean) / std.
class HermiteDiscriminator {
 public:
  HermiteDiscriminator() = default;

  HermiteDiscriminator(const DiscriminatorConfig& config, TimeGrid grid, double data_mean, double data_std)
      : basis_(check_order(config.order)), grid_(grid), mean_(data_mean), std_(data_std),
        penalty_weight_(config.penalty_weight), first_(config.target_first), count_(config.target_count) {
    grid_.validate();
    if (count_ == 0 || first_ + count_ > grid_.points()) {
      throw std::invalid_argument("target window [" + std::to_string(first_) + ", " +
                                  std::to_string(first_ + count_) + ") does not fit a grid of " +
                                  std::to_string(grid_.points()) + " points");
    }
    if (!(penalty_weight_ >= 0.0)) throw std::invalid_argument("penalty weight must be non-negative");
    std::vector<int> dims{2};
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
    dims.push_back(config.order + 1);
    coeff_net_ = Mlp(dims, config.activation, Activation::identity, {.seed = derive_seed(config.seed, 11)});
  }

  [[nodiscard]] int order() const { return basis_.max_order(); }
  [[nodiscard]] const HermiteBasis& basis() const { return basis_; }
  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] double standardize_mean() const { return mean_; }
  [[nodiscard]] double standardize_std() const { return std_; }
  [[nodiscard]] double penalty_weight() const { return penalty_weight_; }
  [[nodiscard]] std::size_t target_first() const { return first_; }
  [[nodiscard]] std::size_t target_count() const { return count_; }
  [[nodiscard]] const Mlp& coeff_net() const { return coeff_net_; }
  Mlp& coeff_net() { return coeff_net_; }

  void set_standardization(double mean, double std) {
    mean_ = mean;
    std_ = std;
  }

  [[nodiscard]] double standardize(double x) const { return (x - mean_) / std_; }
  [[nodiscard]] double normalized_time(std::size_t k) const {
    return static_cast<double>(k) / static_cast<double>(grid_.steps);
  }

  [[nodiscard]] ScoreResult score_batch(const PathBatch& paths) const {
    ScoreResult out;
    Eigen::MatrixXd input;
    prepare(paths, input, out.tape);
    out.tape.cache = coeff_net_.forward(input);
    out.scores = reduce(out.tape.cache.output(), out.tape.features, out.tape.batch);
    return out;
  }

  [[nodiscard]] double score_path(std::span<const double> path) const {
    PathBatch one(grid_, 1);
    if (path.size() != grid_.points()) throw std::invalid_argument("path length does not match the grid");
    std::copy(path.begin(), path.end(), one.path(0).begin());
    return score_batch(one).scores[0];
  }

  /// Gradients of sum_i w_i D(x_i) for parameters and path values.
  [[nodiscard]] DiscriminatorGradients backward(const ScoreTape& tape, const Eigen::VectorXd& weights,
                                                bool want_paths = true) const {
    if (weights.size() != static_cast<Eigen::Index>(tape.batch)) {
      throw std::invalid_argument("score weights do not match the scored batch");
    }
    const double inv_k = 1.0 / static_cast<double>(count_);
    const auto cols = tape.features.cols();
    Eigen::MatrixXd out_grad(tape.features.rows(), cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      out_grad.col(c) = (inv_k * weights[c / static_cast<Eigen::Index>(count_)]) * tape.features.col(c);
    }
    auto g = coeff_net_.backward(tape.cache, out_grad);
    DiscriminatorGradients out;
    out.params = std::move(g.params);
    if (want_paths) {
      out.paths = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tape.batch), static_cast<Eigen::Index>(grid_.points()));
      const Eigen::RowVectorXd dx =
          (tape.cache.output().array() * tape.dfeatures.array()).colwise().sum();
      for (std::size_t i = 0; i < tape.batch; ++i) {
        const double w = weights[static_cast<Eigen::Index>(i)] * inv_k / std_;
        double x0 = 0.0;
        for (std::size_t j = 0; j < count_; ++j) {
          const auto c = static_cast<Eigen::Index>(i * count_ + j);
          out.paths(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(first_ + j)) += w * dx[c];
          x0 += g.input(1, c);
        }
        out.paths(static_cast<Eigen::Index>(i), 0) += x0 / std_;
      }
    }
    return out;
  }

  /// d D(x_i) / d x_i for each path, batch x points.
  [[nodiscard]] Eigen::MatrixXd path_gradients(const PathBatch& paths) const {
    const auto r = score_batch(paths);
    return backward(r.tape, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(paths.batch_size()))).paths;
  }

  /// x_hat = u real + (1 - u) fake with u ~ U(0,1) per path (seeded).
  [[nodiscard]] PathBatch interpolate(const PathBatch& real, const PathBatch& fake, std::uint64_t seed) const {
    if (real.batch_size() != fake.batch_size() || !(real.grid() == fake.grid())) {
      throw std::invalid_argument("penalty needs real and fake batches of equal size on one grid");
    }
    PathBatch mix(real.grid(), real.batch_size(), seed);
    for (std::size_t i = 0; i < real.batch_size(); ++i) {
      const double u = uniform_at(seed, i, 0, Stream::interpolation);
      for (std::size_t k = 0; k < real.points(); ++k) mix.at(i, k) = u * real.at(i, k) + (1.0 - u) * fake.at(i, k);
    }
    return mix;
  }

  /// Gradient penalty on interpolants, with its exact parameter gradient.
  [[nodiscard]] PenaltyResult gradient_penalty(const PathBatch& real, const PathBatch& fake, std::uint64_t seed) const {
    return penalty_at(interpolate(real, fake, seed));
  }

  [[nodiscard]] PenaltyResult penalty_at(const PathBatch& points) const {
    ScoreTape tape;
    Eigen::MatrixXd input;
    prepare(points, input, tape);
    const std::size_t B = tape.batch;
    const auto cols = tape.features.cols();
    const double inv_k = 1.0 / static_cast<double>(count_);
    // x_0 enters only through coeff_net's second input; its derivative is the
    // tangent of coeff_net in that direction.
    Eigen::MatrixXd dir = Eigen::MatrixXd::Zero(2, cols);
    dir.row(1).setOnes();
    const auto tc = coeff_net_.forward_tangent(input, dir);
    const Eigen::RowVectorXd dx = (tc.output().array() * tape.dfeatures.array()).colwise().sum();
    const Eigen::RowVectorXd d0 = (tc.tangent_output().array() * tape.features.array()).colwise().sum();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(grid_.points()));
    const double scale = inv_k / std_;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < count_; ++j) {
        const auto c = static_cast<Eigen::Index>(i * count_ + j);
        g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(first_ + j)) += scale * dx[c];
        g(static_cast<Eigen::Index>(i), 0) += scale * d0[c];
      }
    }
    auto [value, dg] = penalty_from_gradients(g);
    PenaltyResult out;
    out.penalty = value;
    out.scores = reduce(tc.output(), tape.features, B);
    out.grad_norms = g.rowwise().norm();
    Eigen::MatrixXd primal_grad(tape.features.rows(), cols);
    Eigen::MatrixXd tangent_grad(tape.features.rows(), cols);
    for (std::size_t i = 0; i < B; ++i) {
      const double g0 = scale * dg(static_cast<Eigen::Index>(i), 0);
      for (std::size_t j = 0; j < count_; ++j) {
        const auto c = static_cast<Eigen::Index>(i * count_ + j);
        const double gk = scale * dg(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(first_ + j));
        primal_grad.col(c) = gk * tape.dfeatures.col(c);
        tangent_grad.col(c) = g0 * tape.features.col(c);
      }
    }
    out.params = coeff_net_.backward_tangent(tc, primal_grad, tangent_grad);
    return out;
  }

  /// sup_x |Psi_N(x)|_2 over a dense grid; |psi_n| <= pi^{-1/4} bounds it by sqrt(N+1) pi^{-1/4}.
  [[nodiscard]] double feature_norm_bound() const {
    std::vector<double> psi(basis_.size());
    double best = 0.0;
    for (int i = -4000; i <= 4000; ++i) {
      basis_.features(i * 0.005, psi);
      double sq = 0.0;
      for (double v : psi) sq += v * v;
      best = std::max(best, std::sqrt(sq));
    }
    return best;
  }

 private:
  static int check_order(int order) {
    if (order < 1 || order > kMaxDiscriminatorOrder) {
      throw std::invalid_argument("discriminator Hermite order must be in 1.." +
                                  std::to_string(kMaxDiscriminatorOrder));
    }
    return order;
  }

  void prepare(const PathBatch& paths, Eigen::MatrixXd& input, ScoreTape& tape) const {
    check_ready(paths);
    const std::size_t B = paths.batch_size();
    const auto cols = static_cast<Eigen::Index>(B * count_);
    const auto n = static_cast<std::size_t>(basis_.size());
    input.resize(2, cols);
    tape.batch = B;
    tape.features.resize(basis_.size(), cols);
    tape.dfeatures.resize(basis_.size(), cols);
    for (std::size_t i = 0; i < B; ++i) {
      const double s0 = standardize(paths.at(i, 0));
      for (std::size_t j = 0; j < count_; ++j) {
        const auto c = static_cast<Eigen::Index>(i * count_ + j);
        const std::size_t k = first_ + j;
        input(0, c) = normalized_time(k);
        input(1, c) = s0;
        basis_.features_with_derivative(standardize(paths.at(i, k)), {tape.features.col(c).data(), n},
                                        {tape.dfeatures.col(c).data(), n});
      }
    }
  }

  [[nodiscard]] Eigen::VectorXd reduce(const Eigen::MatrixXd& coeffs, const Eigen::MatrixXd& features,
                                       std::size_t batch) const {
    const Eigen::RowVectorXd dots = (coeffs.array() * features.array()).colwise().sum();
    Eigen::VectorXd scores(static_cast<Eigen::Index>(batch));
    const double inv_k = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < batch; ++i) {
      scores[static_cast<Eigen::Index>(i)] =
          inv_k * dots.segment(static_cast<Eigen::Index>(i * count_), static_cast<Eigen::Index>(count_)).sum();
    }
    return scores;
  }

  void check_ready(const PathBatch& paths) const {
    if (!(std_ > 0.0) || !std::isfinite(std_) || !std::isfinite(mean_)) {
      throw std::logic_error("discriminator standardization is unset");
    }
    if (!(paths.grid() == grid_)) throw std::invalid_argument("path grid does not match the discriminator grid");
    if (paths.batch_size() == 0) throw std::invalid_argument("empty path batch");
  }

  HermiteBasis basis_{1};
  TimeGrid grid_;
  double mean_ = 0.0;
  double std_ = 0.0;
  double penalty_weight_ = 10.0;
  std::size_t first_ = 0;
  std::size_t count_ = 1;
  Mlp coeff_net_;
};

inline nlohmann::json to_json(const HermiteDiscriminator& d) {
  return {{"format", "hgan-discriminator"},
          {"version", 1},
          {"order", d.order()},
          {"grid", {{"t0", d.grid().t0}, {"dt", d.grid().dt}, {"steps", d.grid().steps}}},
          {"standardize_mean", d.standardize_mean()},
          {"standardize_std", d.standardize_std()},
          {"penalty_weight", d.penalty_weight()},
          {"target_first", d.target_first()},
          {"target_count", d.target_count()},
          {"coeff_net", to_json(d.coeff_net())}};
}

inline HermiteDiscriminator discriminator_from_json(const nlohmann::json& j) {
  if (j.at("format") != "hgan-discriminator" || j.at("version") != 1) {
    throw std::invalid_argument("unsupported discriminator checkpoint format");
  }
  DiscriminatorConfig cfg;
  cfg.order = j.at("order");
  cfg.penalty_weight = j.at("penalty_weight");
  cfg.target_first = j.at("target_first");
  cfg.target_count = j.at("target_count");
  const auto& g = j.at("grid");
  HermiteDiscriminator d(cfg, {g.at("t0"), g.at("dt"), g.at("steps")}, j.at("standardize_mean"),
                         j.at("standardize_std"));
  Mlp net = mlp_from_json(j.at("coeff_net"));
  if (net.input_dim() != 2 || net.output_dim() != cfg.order + 1) {
    throw std::invalid_argument("coefficient network shape does not match the Hermite order");
  }
  d.coeff_net() = std::move(net);
  return d;
}

}  // namespace hgan
