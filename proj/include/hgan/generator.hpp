#pragma once

#include "nn.hpp"
#include "rng.hpp"
#include "sde.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

struct GeneratorConfig {
  int latent_dim = 8;
  int context_dim = 0;  // extra inputs to h_net, 0 = unconditional
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::tanh;
  Scheme scheme = Scheme::stratonovich_heun;
  double init_diffusion = 0.1;      // softplus output of g_net at init (standardized units)
  double final_weight_scale = 0.01;  // shrinks the output layers of f_net and g_net
  std::uint64_t seed = 0;
};

/// Everything needed to replay a sampled batch backwards.
struct GeneratorTape {
  std::uint64_t seed = 0;
  std::uint64_t first_path = 0;
  std::size_t batch = 0;
  std::uint64_t h_version = 0, f_version = 0, g_version = 0;
  Eigen::MatrixXd dw;   // steps x batch
  MlpCache h_cache;
  std::vector<MlpCache> f_cache, g_cache;            // at y_k
  std::vector<MlpCache> f_pred_cache, g_pred_cache;  // at the Heun predictor
};

struct GeneratorSample {
  PathBatch paths;
  std::optional<GeneratorTape> tape;
};

struct GeneratorGradients {
  Eigen::VectorXd h, f, g;
};

/// x(0) = h(v), dx = f(t, x) dt + g(t, x) o dW, integrated in standardized
/// units y = (x - mean) / std with network time t/T in [0, 1].
class NeuralSdeGenerator {
 public:
  NeuralSdeGenerator() = default;

  NeuralSdeGenerator(const GeneratorConfig& config, TimeGrid grid, double data_mean, double data_std,
                     double initial_mean = 0.0)
      : grid_(grid), scheme_(config.scheme), latent_dim_(config.latent_dim),
        context_dim_(config.context_dim), mean_(data_mean), std_(data_std) {
    grid_.validate();
    if (latent_dim_ < 1 || context_dim_ < 0) throw std::invalid_argument("bad generator dimensions");
    if (!(data_std > 0.0) || !std::isfinite(data_std) || !std::isfinite(data_mean)) {
      throw std::invalid_argument("generator standardization needs finite mean and std > 0");
    }
    if (!(config.init_diffusion > 0.0)) throw std::invalid_argument("init_diffusion must be positive");
    auto dims = [&](int in) {
      std::vector<int> d{in};
      d.insert(d.end(), config.hidden.begin(), config.hidden.end());
      d.push_back(1);
      return d;
    };
    // initial_mean: standardized mean of the data's first value, used as h_net's output bias
    h_net_ = Mlp(dims(latent_dim_ + context_dim_), config.activation, Activation::identity,
                 {.seed = derive_seed(config.seed, 1), .final_weight_scale = 0.1, .final_bias = initial_mean});
    f_net_ = Mlp(dims(2), config.activation, Activation::identity,
                 {.seed = derive_seed(config.seed, 2), .final_weight_scale = config.final_weight_scale});
    const double inv_softplus = std::log(std::expm1(config.init_diffusion));
    g_net_ = Mlp(dims(2), config.activation, Activation::softplus,
                 {.seed = derive_seed(config.seed, 3), .final_weight_scale = config.final_weight_scale,
                  .final_bias = inv_softplus});
  }

  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] Scheme scheme() const { return scheme_; }
  void set_scheme(Scheme s) { scheme_ = s; }
  [[nodiscard]] int latent_dim() const { return latent_dim_; }
  [[nodiscard]] int context_dim() const { return context_dim_; }
  [[nodiscard]] double data_mean() const { return mean_; }
  [[nodiscard]] double data_std() const { return std_; }

  [[nodiscard]] const Mlp& h_net() const { return h_net_; }
  [[nodiscard]] const Mlp& f_net() const { return f_net_; }
  [[nodiscard]] const Mlp& g_net() const { return g_net_; }
  Mlp& h_net() { return h_net_; }
  Mlp& f_net() { return f_net_; }
  Mlp& g_net() { return g_net_; }

  [[nodiscard]] std::size_t param_count() const {
    return h_net_.param_count() + f_net_.param_count() + g_net_.param_count();
  }

  /// Latent draws v for paths first_path .. first_path + batch - 1.
  [[nodiscard]] Eigen::MatrixXd latent(std::size_t batch, std::uint64_t seed, std::uint64_t first_path) const {
    Eigen::MatrixXd v(latent_dim_, static_cast<Eigen::Index>(batch));
    for (std::size_t i = 0; i < batch; ++i) {
      for (int j = 0; j < latent_dim_; ++j) {
        v(j, static_cast<Eigen::Index>(i)) = normal_at(seed, first_path + i, static_cast<std::uint64_t>(j), Stream::latent);
      }
    }
    return v;
  }

  /// Samples a batch. Path i uses noise keyed by (seed, first_path + i), so a
  /// path does not depend on which batch it was drawn in. context, if the
  /// generator is conditional, holds one column per path.
  [[nodiscard]] GeneratorSample sample(std::size_t batch, std::uint64_t seed, bool keep_tape = true,
                                       std::uint64_t first_path = 0,
                                       const Eigen::MatrixXd* context = nullptr) const {
    if (batch == 0) throw std::invalid_argument("batch must be at least 1");
    const auto B = static_cast<Eigen::Index>(batch);
    Eigen::MatrixXd h_in(latent_dim_ + context_dim_, B);
    h_in.topRows(latent_dim_) = latent(batch, seed, first_path);
    if (context_dim_ > 0) {
      if (context == nullptr || context->rows() != context_dim_ || context->cols() != B) {
        throw std::invalid_argument("conditional generator needs a context_dim x batch context");
      }
      h_in.bottomRows(context_dim_) = *context;
    } else if (context != nullptr && context->size() > 0) {
      throw std::invalid_argument("unconditional generator given a context");
    }

    GeneratorSample out{PathBatch(grid_, batch, seed), std::nullopt};
    GeneratorTape tape;
    tape.seed = seed;
    tape.first_path = first_path;
    tape.batch = batch;
    tape.h_version = h_net_.version();
    tape.f_version = f_net_.version();
    tape.g_version = g_net_.version();
    tape.dw.resize(static_cast<Eigen::Index>(grid_.steps), B);
    const double sqrt_dt = std::sqrt(grid_.dt);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t k = 0; k < grid_.steps; ++k) {
        tape.dw(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
            sqrt_dt * normal_at(seed, first_path + i, k, Stream::brownian);
      }
    }

    auto h_cache = h_net_.forward(h_in);
    Eigen::RowVectorXd y = h_cache.output().row(0);
    if (keep_tape) tape.h_cache = std::move(h_cache);
    record(out.paths, 0, y, first_path);

    const double dt = grid_.dt;
    Eigen::MatrixXd in(2, B);
    Eigen::MatrixXd in2(2, B);
    if (keep_tape) {
      tape.f_cache.reserve(grid_.steps);
      tape.g_cache.reserve(grid_.steps);
      if (scheme_ == Scheme::stratonovich_heun) {
        tape.f_pred_cache.reserve(grid_.steps);
        tape.g_pred_cache.reserve(grid_.steps);
      }
    }
    for (std::size_t k = 0; k < grid_.steps; ++k) {
      const auto dw = tape.dw.row(static_cast<Eigen::Index>(k));
      in.row(0).setConstant(normalized_time(k));
      in.row(1) = y;
      auto fc = f_net_.forward(in);
      auto gc = g_net_.forward(in);
      const auto F = fc.output().row(0);
      const auto G = gc.output().row(0);
      Eigen::RowVectorXd next;
      if (scheme_ == Scheme::euler_maruyama) {
        next = y + dt * F + G.cwiseProduct(dw);
      } else {
        in2.row(0).setConstant(normalized_time(k + 1));
        in2.row(1) = y + dt * F + G.cwiseProduct(dw);
        auto fp = f_net_.forward(in2);
        auto gp = g_net_.forward(in2);
        next = y + 0.5 * dt * (F + fp.output().row(0)) + 0.5 * (G + gp.output().row(0)).cwiseProduct(dw);
        if (keep_tape) {
          tape.f_pred_cache.push_back(std::move(fp));
          tape.g_pred_cache.push_back(std::move(gp));
        }
      }
      if (keep_tape) {
        tape.f_cache.push_back(std::move(fc));
        tape.g_cache.push_back(std::move(gc));
      }
      y = std::move(next);
      record(out.paths, k + 1, y, first_path);
    }
    if (keep_tape) out.tape = std::move(tape);
    return out;
  }

  /// Reverse pass through the unrolled solver with the taped noise.
  /// path_grads is batch x points, d loss / d x in data units; gradients are
  /// summed over the batch.
  [[nodiscard]] GeneratorGradients backprop(const GeneratorTape& tape, const Eigen::MatrixXd& path_grads) const {
    if (tape.h_version != h_net_.version() || tape.f_version != f_net_.version() ||
        tape.g_version != g_net_.version() || tape.f_cache.size() != grid_.steps ||
        (scheme_ == Scheme::stratonovich_heun && tape.f_pred_cache.size() != grid_.steps)) {
      throw std::logic_error("generator tape does not match the current generator");
    }
    const auto B = static_cast<Eigen::Index>(tape.batch);
    if (path_grads.rows() != B || path_grads.cols() != static_cast<Eigen::Index>(grid_.points())) {
      throw std::invalid_argument("path gradient must be batch x points");
    }
    GeneratorGradients grads{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h_net_.param_count())),
                             Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f_net_.param_count())),
                             Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g_net_.param_count()))};
    const double dt = grid_.dt;
    // adjoint of y_{k+1}
    Eigen::RowVectorXd adj = std_ * path_grads.col(static_cast<Eigen::Index>(grid_.steps)).transpose();
    Eigen::MatrixXd out_grad(1, B);
    for (std::size_t k = grid_.steps; k-- > 0;) {
      const auto dw = tape.dw.row(static_cast<Eigen::Index>(k));
      Eigen::RowVectorXd adj_y = adj;
      if (scheme_ == Scheme::euler_maruyama) {
        out_grad.row(0) = dt * adj;
        auto gf = f_net_.backward(tape.f_cache[k], out_grad);
        out_grad.row(0) = adj.cwiseProduct(dw);
        auto gg = g_net_.backward(tape.g_cache[k], out_grad);
        grads.f += gf.params;
        grads.g += gg.params;
        adj_y += gf.input.row(1) + gg.input.row(1);
      } else {
        out_grad.row(0) = 0.5 * dt * adj;
        auto gfp = f_net_.backward(tape.f_pred_cache[k], out_grad);
        out_grad.row(0) = 0.5 * adj.cwiseProduct(dw);
        auto ggp = g_net_.backward(tape.g_pred_cache[k], out_grad);
        const Eigen::RowVectorXd adj_pred = gfp.input.row(1) + ggp.input.row(1);
        out_grad.row(0) = 0.5 * dt * adj + dt * adj_pred;
        auto gf = f_net_.backward(tape.f_cache[k], out_grad);
        out_grad.row(0) = (0.5 * adj + adj_pred).cwiseProduct(dw);
        auto gg = g_net_.backward(tape.g_cache[k], out_grad);
        grads.f += gfp.params + gf.params;
        grads.g += ggp.params + gg.params;
        adj_y += adj_pred + gf.input.row(1) + gg.input.row(1);
      }
      adj = adj_y + std_ * path_grads.col(static_cast<Eigen::Index>(k)).transpose();
    }
    grads.h = h_net_.backward(tape.h_cache, adj).params;
    return grads;
  }

  [[nodiscard]] double normalized_time(std::size_t k) const {
    return static_cast<double>(k) / static_cast<double>(grid_.steps);
  }

  [[nodiscard]] bool all_finite() const {
    return h_net_.all_finite() && f_net_.all_finite() && g_net_.all_finite();
  }

 private:
  void record(PathBatch& paths, std::size_t k, const Eigen::RowVectorXd& y, std::uint64_t first_path) const {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double x = mean_ + std_ * y[i];
      if (!std::isfinite(x)) {
        throw NumericalError("generator state became non-finite", first_path + static_cast<std::size_t>(i), k);
      }
      paths.at(static_cast<std::size_t>(i), k) = x;
    }
  }

  TimeGrid grid_;
  Scheme scheme_ = Scheme::stratonovich_heun;
  int latent_dim_ = 8;
  int context_dim_ = 0;
  double mean_ = 0.0;
  double std_ = 1.0;
  Mlp h_net_, f_net_, g_net_;
};

inline nlohmann::json to_json(const NeuralSdeGenerator& gen) {
  return {{"format", "hgan-generator"},
          {"version", 1},
          {"grid", {{"t0", gen.grid().t0}, {"dt", gen.grid().dt}, {"steps", gen.grid().steps}}},
          {"scheme", to_string(gen.scheme())},
          {"latent_dim", gen.latent_dim()},
          {"context_dim", gen.context_dim()},
          {"data_mean", gen.data_mean()},
          {"data_std", gen.data_std()},
          {"h_net", to_json(gen.h_net())},
          {"f_net", to_json(gen.f_net())},
          {"g_net", to_json(gen.g_net())}};
}

inline NeuralSdeGenerator generator_from_json(const nlohmann::json& j) {
  if (j.at("format") != "hgan-generator" || j.at("version") != 1) {
    throw std::invalid_argument("unsupported generator checkpoint format");
  }
  GeneratorConfig cfg;
  cfg.latent_dim = j.at("latent_dim");
  cfg.context_dim = j.at("context_dim");
  cfg.scheme = parse_scheme(j.at("scheme").get<std::string>());
  const auto& g = j.at("grid");
  TimeGrid grid{g.at("t0"), g.at("dt"), g.at("steps")};
  NeuralSdeGenerator gen(cfg, grid, j.at("data_mean"), j.at("data_std"));
  auto load = [](Mlp& target, const nlohmann::json& net, int in_dim) {
    Mlp m = mlp_from_json(net);
    if (m.input_dim() != in_dim || m.output_dim() != 1) {
      throw std::invalid_argument("generator network has the wrong shape");
    }
    target = std::move(m);
  };
  load(gen.h_net(), j.at("h_net"), cfg.latent_dim + cfg.context_dim);
  load(gen.f_net(), j.at("f_net"), 2);
  load(gen.g_net(), j.at("g_net"), 2);
  return gen;
}

}  // namespace hgan
