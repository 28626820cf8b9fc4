#pragma once

#include "rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hgan {

enum class Activation { identity, tanh, relu, softplus };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

namespace detail {

inline double softplus(double a) { return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }
inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline void activate(Activation act, const Eigen::MatrixXd& pre, Eigen::MatrixXd& out) {
  switch (act) {
    case Activation::identity: out = pre; break;
    case Activation::tanh:
      // Eigen's double tanh is scalar; the exp form vectorizes. Absolute error ~1e-16.
      out = (1.0 - 2.0 / ((2.0 * pre.array().min(20.0).max(-20.0)).exp() + 1.0)).matrix();
      break;
    case Activation::relu: out = pre.cwiseMax(0.0); break;
    case Activation::softplus: out = pre.unaryExpr([](double a) { return softplus(a); }); break;
  }
}

// sigma'(a), written in terms of the cached pre-activation a and output z.
inline Eigen::MatrixXd first_derivative(Activation act, const Eigen::MatrixXd& pre,
                                        const Eigen::MatrixXd& out) {
  switch (act) {
    case Activation::identity: return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::softplus: return pre.unaryExpr([](double a) { return sigmoid(a); });
  }
  return {};
}

inline Eigen::MatrixXd second_derivative(Activation act, const Eigen::MatrixXd& pre,
                                         const Eigen::MatrixXd& out) {
  switch (act) {
    case Activation::identity:
    case Activation::relu: return Eigen::MatrixXd::Zero(pre.rows(), pre.cols());
    case Activation::tanh: return (-2.0 * out.array() * (1.0 - out.array().square())).matrix();
    case Activation::softplus:
      return pre.unaryExpr([](double a) {
        const double s = sigmoid(a);
        return s * (1.0 - s);
      });
  }
  return {};
}

inline std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

struct MlpInit {
  std::uint64_t seed = 0;
  double final_weight_scale = 1.0;  // multiplies the output layer's initial weights
  double final_bias = 0.0;          // initial value of every output bias
};

/// Activations retained by a forward pass, columns are batch entries.
struct MlpCache {
  std::uint64_t net_id = 0;
  std::uint64_t version = 0;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // a_l
  std::vector<Eigen::MatrixXd> post;  // z_l
  [[nodiscard]] const Eigen::MatrixXd& output() const { return post.back(); }
  [[nodiscard]] const Eigen::MatrixXd& layer_input(std::size_t l) const { return l == 0 ? input : post[l - 1]; }
};

/// Forward pass plus directional derivatives with respect to the input.
struct MlpTangentCache {
  MlpCache primal;
  Eigen::MatrixXd tangent_input;
  std::vector<Eigen::MatrixXd> tangent_pre;   // da_l
  std::vector<Eigen::MatrixXd> tangent_post;  // dz_l
  [[nodiscard]] const Eigen::MatrixXd& output() const { return primal.post.back(); }
  [[nodiscard]] const Eigen::MatrixXd& tangent_output() const { return tangent_post.back(); }
  [[nodiscard]] const Eigen::MatrixXd& tangent_layer_input(std::size_t l) const {
    return l == 0 ? tangent_input : tangent_post[l - 1];
  }
};

struct MlpGradients {
  Eigen::VectorXd params;  // same flat layout as Mlp::params()
  Eigen::MatrixXd input;   // d loss / d input, one column per batch entry
};

/// Fully connected network with a flat parameter vector. Layer l stores W_l
/// (out x in, column-major) followed by b_l.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> dims, Activation hidden, Activation final, const MlpInit& init = {})
      : dims_(std::move(dims)), hidden_(hidden), final_(final), id_(detail::next_net_id()) {
    if (dims_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output dims");
    for (int d : dims_) {
      if (d <= 0) throw std::invalid_argument("layer dims must be positive");
    }
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(total);
      total += static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
    std::uint64_t counter = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
      const int fan_in = dims_[l];
      const int fan_out = dims_[l + 1];
      const bool relu_layer = activation(l) == Activation::relu;
      double bound = relu_layer ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
      if (l + 1 == layers()) bound *= init.final_weight_scale;
      auto w = weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
          w(i, j) = bound * (2.0 * uniform_at(init.seed, counter++, 0, Stream::init_weights) - 1.0);
        }
      }
      if (l + 1 == layers()) bias(l).setConstant(init.final_bias);
    }
  }

  Mlp(const Mlp& other)
      : dims_(other.dims_), hidden_(other.hidden_), final_(other.final_), offsets_(other.offsets_),
        params_(other.params_), id_(detail::next_net_id()) {}
  Mlp& operator=(const Mlp& other) {
    if (this != &other) {
      dims_ = other.dims_;
      hidden_ = other.hidden_;
      final_ = other.final_;
      offsets_ = other.offsets_;
      params_ = other.params_;
      id_ = detail::next_net_id();
      ++version_;
    }
    return *this;
  }
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  [[nodiscard]] const std::vector<int>& dims() const { return dims_; }
  [[nodiscard]] std::size_t layers() const { return dims_.size() - 1; }
  [[nodiscard]] int input_dim() const { return dims_.front(); }
  [[nodiscard]] int output_dim() const { return dims_.back(); }
  [[nodiscard]] Activation hidden_activation() const { return hidden_; }
  [[nodiscard]] Activation final_activation() const { return final_; }
  [[nodiscard]] Activation activation(std::size_t layer) const {
    return layer + 1 == layers() ? final_ : hidden_;
  }
  [[nodiscard]] std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }
  [[nodiscard]] const Eigen::VectorXd& params() const { return params_; }
  [[nodiscard]] std::uint64_t version() const { return version_; }

  /// Mutable access; invalidates outstanding caches.
  Eigen::VectorXd& mutable_params() {
    ++version_;
    return params_;
  }

  void set_params(const Eigen::VectorXd& p) {
    if (p.size() != params_.size()) throw std::invalid_argument("parameter count mismatch");
    params_ = p;
    ++version_;
  }

  [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l],
            dims_[l + 1]};
  }
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l) {
    ++version_;
    return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l) {
    ++version_;
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l],
            dims_[l + 1]};
  }

  [[nodiscard]] MlpCache forward(const Eigen::MatrixXd& input) const {
    if (input.rows() != input_dim()) {
      throw std::invalid_argument("MLP input has " + std::to_string(input.rows()) +
                                  " rows, expected " + std::to_string(input_dim()));
    }
    MlpCache cache;
    cache.net_id = id_;
    cache.version = version_;
    cache.input = input;
    cache.pre.resize(layers());
    cache.post.resize(layers());
    for (std::size_t l = 0; l < layers(); ++l) {
      cache.pre[l].noalias() = weight(l) * cache.layer_input(l);
      cache.pre[l].colwise() += bias(l);
      detail::activate(activation(l), cache.pre[l], cache.post[l]);
    }
    return cache;
  }

  /// Single-vector convenience wrapper.
  [[nodiscard]] Eigen::VectorXd operator()(const Eigen::VectorXd& input) const {
    return forward(input).output().col(0);
  }

  /// Exact reverse-mode gradients of sum(output_grad .* output) over the batch.
  [[nodiscard]] MlpGradients backward(const MlpCache& cache, const Eigen::MatrixXd& output_grad) const {
    check_cache(cache);
    if (output_grad.rows() != output_dim() || output_grad.cols() != cache.output().cols()) {
      throw std::invalid_argument("output gradient shape does not match the cached forward pass");
    }
    MlpGradients grads;
    grads.params = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd g = output_grad;
    for (std::size_t l = layers(); l-- > 0;) {
      Eigen::MatrixXd a_bar = g;
      if (activation(l) != Activation::identity) {
        a_bar.array() *= detail::first_derivative(activation(l), cache.pre[l], cache.post[l]).array();
      }
      grad_weight(grads.params, l).noalias() += a_bar * cache.layer_input(l).transpose();
      grad_bias(grads.params, l) += a_bar.rowwise().sum();
      g.noalias() = weight(l).transpose() * a_bar;
    }
    grads.input = std::move(g);
    return grads;
  }

  /// Forward pass that also propagates a tangent direction on the input.
  [[nodiscard]] MlpTangentCache forward_tangent(const Eigen::MatrixXd& input,
                                                const Eigen::MatrixXd& direction) const {
    if (direction.rows() != input.rows() || direction.cols() != input.cols()) {
      throw std::invalid_argument("tangent direction shape mismatch");
    }
    MlpTangentCache cache;
    cache.primal = forward(input);
    cache.tangent_input = direction;
    cache.tangent_pre.resize(layers());
    cache.tangent_post.resize(layers());
    for (std::size_t l = 0; l < layers(); ++l) {
      cache.tangent_pre[l].noalias() = weight(l) * cache.tangent_layer_input(l);
      if (activation(l) == Activation::identity) {
        cache.tangent_post[l] = cache.tangent_pre[l];
      } else {
        cache.tangent_post[l] =
            (detail::first_derivative(activation(l), cache.primal.pre[l], cache.primal.post[l]).array() *
             cache.tangent_pre[l].array())
                .matrix();
      }
    }
    return cache;
  }

  /// Parameter gradient of sum(primal_grad .* output + tangent_grad .* tangent_output).
  /// This is reverse mode applied to the forward-tangent computation, i.e. the
  /// mixed second derivative needed by input-gradient penalties.
  [[nodiscard]] Eigen::VectorXd backward_tangent(const MlpTangentCache& cache,
                                                 const Eigen::MatrixXd& primal_grad,
                                                 const Eigen::MatrixXd& tangent_grad) const {
    check_cache(cache.primal);
    Eigen::VectorXd grads = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd z_bar = primal_grad;
    Eigen::MatrixXd dz_bar = tangent_grad;
    for (std::size_t l = layers(); l-- > 0;) {
      const auto& pre = cache.primal.pre[l];
      const auto& post = cache.primal.post[l];
      Eigen::MatrixXd a_bar;
      Eigen::MatrixXd da_bar;
      if (activation(l) == Activation::identity) {
        a_bar = z_bar;
        da_bar = dz_bar;
      } else {
        const Eigen::MatrixXd d1 = detail::first_derivative(activation(l), pre, post);
        const Eigen::MatrixXd d2 = detail::second_derivative(activation(l), pre, post);
        a_bar = (z_bar.array() * d1.array() + dz_bar.array() * d2.array() * cache.tangent_pre[l].array())
                    .matrix();
        da_bar = (dz_bar.array() * d1.array()).matrix();
      }
      grad_weight(grads, l).noalias() +=
          a_bar * cache.primal.layer_input(l).transpose() + da_bar * cache.tangent_layer_input(l).transpose();
      grad_bias(grads, l) += a_bar.rowwise().sum();
      z_bar.noalias() = weight(l).transpose() * a_bar;
      dz_bar.noalias() = weight(l).transpose() * da_bar;
    }
    return grads;
  }

  [[nodiscard]] bool all_finite() const { return params_.allFinite(); }

 private:
  void check_cache(const MlpCache& cache) const {
    if (cache.net_id != id_ || cache.version != version_ || cache.pre.size() != layers()) {
      throw std::logic_error("stale or foreign forward cache passed to backward");
    }
  }

  Eigen::Map<Eigen::MatrixXd> grad_weight(Eigen::VectorXd& g, std::size_t l) const {
    return {g.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  Eigen::Map<Eigen::VectorXd> grad_bias(Eigen::VectorXd& g, std::size_t l) const {
    return {g.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
  }

  std::vector<int> dims_;
  Activation hidden_ = Activation::tanh;
  Activation final_ = Activation::identity;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::uint64_t step_count = 0;
  std::uint64_t skipped = 0;  // updates refused because of non-finite gradients

  AdamState() = default;
  AdamState(std::size_t n, double lr_, double beta1_ = 0.5, double beta2_ = 0.9, double eps = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), epsilon(eps),
        first_moment(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
        second_moment(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.lr == b.lr && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon &&
           a.first_moment == b.first_moment && a.second_moment == b.second_moment &&
           a.step_count == b.step_count && a.skipped == b.skipped;
  }
};

/// Bias-corrected Adam update (descent). Returns false and leaves everything
/// but the skip counter untouched if any gradient entry is non-finite.
inline bool adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size()) {
    throw std::invalid_argument("Adam shapes do not match");
  }
  if (!grads.allFinite()) {
    ++state.skipped;
    return false;
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
  return true;
}

inline bool adam_step(Mlp& net, const Eigen::VectorXd& grads, AdamState& state) {
  return adam_step(net.mutable_params(), grads, state);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Loss on the network output: returns the value and d loss / d output.
using OutputLoss = std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

/// Compares backward() against central differences (step h) on probe_count
/// randomly chosen parameters. For relu layers a probe is redrawn when the
/// perturbation would flip any unit across its kink.
inline GradCheckResult grad_check(const Mlp& net, const Eigen::MatrixXd& input, const OutputLoss& loss,
                                  std::size_t probe_count, std::uint64_t seed, double h = 1e-5) {
  const auto cache = net.forward(input);
  const auto analytic = net.backward(cache, loss(cache.output()).second).params;
  Mlp probe = net;
  auto masks = [&](const Mlp& m) {
    std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> out;
    const auto c = m.forward(input);
    for (std::size_t l = 0; l < m.layers(); ++l) {
      if (m.activation(l) == Activation::relu) out.emplace_back(c.pre[l].array() > 0.0);
    }
    return out;
  };
  const auto base_masks = masks(net);
  GradCheckResult result;
  std::uint64_t draw = 0;
  while (result.probes < probe_count && draw < 100 * probe_count + 100) {
    const auto idx = static_cast<Eigen::Index>(
        uniform_at(seed, draw++, 0, Stream::probe) * static_cast<double>(net.param_count()));
    const double saved = net.params()[idx];
    probe.mutable_params()[idx] = saved + h;
    const auto plus_masks = masks(probe);
    const double lp = loss(probe.forward(input).output()).first;
    probe.mutable_params()[idx] = saved - h;
    const auto minus_masks = masks(probe);
    const double lm = loss(probe.forward(input).output()).first;
    probe.mutable_params()[idx] = saved;
    bool kink = false;
    for (std::size_t m = 0; m < base_masks.size(); ++m) {
      kink |= !(plus_masks[m] == base_masks[m]).all() || !(minus_masks[m] == base_masks[m]).all();
    }
    if (kink) continue;
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
    ++result.probes;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Mlp& net) {
  return {{"format", "hgan-mlp"},
          {"version", 1},
          {"dims", net.dims()},
          {"hidden_activation", to_string(net.hidden_activation())},
          {"final_activation", to_string(net.final_activation())},
          {"params", std::vector<double>(net.params().data(), net.params().data() + net.params().size())}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.at("format") != "hgan-mlp" || j.at("version") != 1) {
    throw std::invalid_argument("unsupported MLP checkpoint format");
  }
  Mlp net(j.at("dims").get<std::vector<int>>(),
          parse_activation(j.at("hidden_activation").get<std::string>()),
          parse_activation(j.at("final_activation").get<std::string>()));
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != net.param_count()) throw std::invalid_argument("checkpoint parameter count mismatch");
  net.set_params(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
  return net;
}

inline nlohmann::json to_json(const AdamState& s) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"lr", s.lr}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"epsilon", s.epsilon},
          {"first_moment", vec(s.first_moment)}, {"second_moment", vec(s.second_moment)},
          {"step_count", s.step_count}, {"skipped", s.skipped}};
}

inline AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.lr = j.at("lr");
  s.beta1 = j.at("beta1");
  s.beta2 = j.at("beta2");
  s.epsilon = j.at("epsilon");
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  s.first_moment = vec(j.at("first_moment"));
  s.second_moment = vec(j.at("second_moment"));
  s.step_count = j.at("step_count");
  s.skipped = j.at("skipped");
  return s;
}

}  // namespace hgan
