#pragma once

#include "discriminator.hpp"
#include "generator.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "sde.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

struct TrainConfig {
  double gen_lr = 1e-4;
  double disc_lr = 1e-3;  // critic runs 10x the generator rate; see README
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int critic_steps_per_gen = 5;
  std::size_t batch_size = 32;
  std::size_t total_gen_steps = 2000;
  double penalty_weight = 10.0;
  std::uint64_t seed = 0;
  int hermite_order = 4;
  std::size_t eval_every = 100;
  std::size_t validation_paths = 500;  // held out from the training set for model selection
  std::size_t max_consecutive_skips = 10;
  // model shape
  int latent_dim = 8;
  int gen_hidden = 64;
  int gen_layers = 2;
  int disc_hidden = 128;
  int disc_layers = 2;
  Scheme scheme = Scheme::stratonovich_heun;
  bool conditional = false;  // feed (x_0, mean of the conditioning window) into h_net
  std::size_t target_first = 100;
  std::size_t target_count = 50;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument("config field '" + field + "' " + why);
    };
    if (!(gen_lr > 0.0 && gen_lr < 1.0)) fail("gen_lr", "must be in (0, 1)");
    if (!(disc_lr > 0.0 && disc_lr < 1.0)) fail("disc_lr", "must be in (0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must be in [0, 1)");
    if (critic_steps_per_gen < 1) fail("critic_steps_per_gen", "must be positive");
    if (batch_size < 1) fail("batch_size", "must be positive");
    if (!(penalty_weight >= 0.0)) fail("penalty_weight", "must be non-negative");
    if (hermite_order < 1 || hermite_order > kMaxDiscriminatorOrder) fail("hermite_order", "must be in 1..12");
    if (eval_every < 1) fail("eval_every", "must be positive");
    if (max_consecutive_skips < 1) fail("max_consecutive_skips", "must be positive");
    if (latent_dim < 1) fail("latent_dim", "must be positive");
    if (gen_hidden < 1 || gen_layers < 1) fail("gen_hidden", "and gen_layers must be positive");
    if (disc_hidden < 1 || disc_layers < 1) fail("disc_hidden", "and disc_layers must be positive");
    if (target_count < 1) fail("target_count", "must be positive");
  }
};

/// Canonical key=value text; the config hash is taken over this.
inline std::string canonical_config(const TrainConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "adam_beta1=" << c.adam_beta1 << "\nadam_beta2=" << c.adam_beta2 << "\nbatch_size=" << c.batch_size
    << "\nconditional=" << (c.conditional ? "true" : "false") << "\ncritic_steps_per_gen=" << c.critic_steps_per_gen
    << "\ndisc_hidden=" << c.disc_hidden << "\ndisc_layers=" << c.disc_layers << "\ndisc_lr=" << c.disc_lr
    << "\neval_every=" << c.eval_every << "\ngen_hidden=" << c.gen_hidden << "\ngen_layers=" << c.gen_layers
    << "\ngen_lr=" << c.gen_lr << "\nhermite_order=" << c.hermite_order << "\nlatent_dim=" << c.latent_dim
    << "\nmax_consecutive_skips=" << c.max_consecutive_skips << "\npenalty_weight=" << c.penalty_weight
    << "\nscheme=" << to_string(c.scheme) << "\nseed=" << c.seed << "\ntarget_count=" << c.target_count
    << "\ntarget_first=" << c.target_first << "\ntotal_gen_steps=" << c.total_gen_steps
    << "\nvalidation_paths=" << c.validation_paths << "\n";
  return o.str();
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

inline std::string config_hash(const TrainConfig& c) { return hex64(fnv1a(canonical_config(c))); }

// ---------------------------------------------------------------------------

/// Sampling without replacement; each epoch is a fresh seeded permutation.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw std::invalid_argument("cannot sample from an empty dataset");
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t count) {
    if (count > n_) throw std::invalid_argument("batch larger than the dataset");
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == n_) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(perm_[cursor_++]);
    }
    return out;
  }

  [[nodiscard]] std::uint64_t epoch() const { return epoch_; }
  [[nodiscard]] std::size_t cursor() const { return cursor_; }

 private:
  void reshuffle() {
    perm_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    const std::uint64_t key = derive_seed(seed_, epoch_);
    for (std::size_t i = n_ - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_at(key, i, 0, Stream::shuffle) * static_cast<double>(i + 1));
      std::swap(perm_[i], perm_[std::min(j, i)]);
    }
    cursor_ = 0;
  }

  std::size_t n_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> perm_;
};

inline PathBatch gather(const PathBatch& data, const std::vector<std::size_t>& rows) {
  PathBatch out(data.grid(), rows.size(), data.seed());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data.path(rows[i]).begin(), data.points(), out.path(i).begin());
  }
  return out;
}

struct Standardization {
  double mean = 0.0;
  double std = 1.0;
};

/// Global mean and std over every value of every path.
inline Standardization fit_standardization(const PathBatch& data) {
  const auto v = data.values();
  if (v.empty()) throw std::invalid_argument("cannot standardize an empty dataset");
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  s = std::sqrt(s / static_cast<double>(v.size()));
  if (!(s > 0.0)) s = 1.0;
  return {m, s};
}

/// Generator context: standardized x_0 and mean of the conditioning window.
inline Eigen::MatrixXd conditioning_context(const PathBatch& paths, std::size_t window, const Standardization& st) {
  if (window == 0 || window > paths.points()) throw std::invalid_argument("bad conditioning window");
  Eigen::MatrixXd ctx(2, static_cast<Eigen::Index>(paths.batch_size()));
  for (std::size_t i = 0; i < paths.batch_size(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < window; ++k) m += paths.at(i, k);
    m /= static_cast<double>(window);
    ctx(0, static_cast<Eigen::Index>(i)) = (paths.at(i, 0) - st.mean) / st.std;
    ctx(1, static_cast<Eigen::Index>(i)) = (m - st.mean) / st.std;
  }
  return ctx;
}

// ---------------------------------------------------------------------------

/// Generator, critic and optimizer state for one run.
struct HganModel {
  NeuralSdeGenerator gen;
  HermiteDiscriminator disc;
  AdamState adam_h, adam_f, adam_g, adam_d;
  std::uint64_t critic_updates = 0;  // attempted critic steps
  std::uint64_t gen_updates = 0;     // attempted generator steps
  std::uint64_t skipped = 0;
};

inline HganModel make_model(const TrainConfig& c, const TimeGrid& grid, const PathBatch& train_data) {
  c.validate();
  const auto st = fit_standardization(train_data);
  double x0 = 0.0;
  for (std::size_t i = 0; i < train_data.batch_size(); ++i) x0 += train_data.at(i, 0);
  x0 /= static_cast<double>(train_data.batch_size());
  GeneratorConfig gc;
  gc.latent_dim = c.latent_dim;
  gc.context_dim = c.conditional ? 2 : 0;
  gc.hidden.assign(static_cast<std::size_t>(c.gen_layers), c.gen_hidden);
  gc.scheme = c.scheme;
  gc.seed = derive_seed(c.seed, 101);
  DiscriminatorConfig dc;
  dc.order = c.hermite_order;
  dc.hidden.assign(static_cast<std::size_t>(c.disc_layers), c.disc_hidden);
  dc.penalty_weight = c.penalty_weight;
  dc.target_first = c.target_first;
  dc.target_count = c.target_count;
  dc.seed = derive_seed(c.seed, 102);
  HganModel m{NeuralSdeGenerator(gc, grid, st.mean, st.std, (x0 - st.mean) / st.std),
              HermiteDiscriminator(dc, grid, st.mean, st.std),
              {},
              {},
              {},
              {}};
  m.adam_h = AdamState(m.gen.h_net().param_count(), c.gen_lr, c.adam_beta1, c.adam_beta2);
  m.adam_f = AdamState(m.gen.f_net().param_count(), c.gen_lr, c.adam_beta1, c.adam_beta2);
  m.adam_g = AdamState(m.gen.g_net().param_count(), c.gen_lr, c.adam_beta1, c.adam_beta2);
  m.adam_d = AdamState(m.disc.coeff_net().param_count(), c.disc_lr, c.adam_beta1, c.adam_beta2);
  return m;
}

struct CriticStepResult {
  double loss = 0.0;         // mean D(fake) - mean D(real) + lambda P
  double wasserstein = 0.0;  // mean D(real) - mean D(fake)
  double penalty = 0.0;
  bool skipped = false;
};

/// One critic update: descend mean D(fake) - mean D(real) + lambda P. The
/// generator is only sampled, never updated.
inline CriticStepResult critic_step(HganModel& m, const PathBatch& real, const PathBatch& fake,
                                    std::uint64_t penalty_seed) {
  if (!(real.grid() == m.disc.grid()) || real.batch_size() != fake.batch_size()) {
    throw std::invalid_argument("critic step needs equal real and fake batches on the model grid");
  }
  const auto B = static_cast<Eigen::Index>(real.batch_size());
  CriticStepResult r;
  Eigen::VectorXd grads;
  try {
    const auto rs = m.disc.score_batch(real);
    const auto fs = m.disc.score_batch(fake);
    r.wasserstein = rs.scores.mean() - fs.scores.mean();
    grads = m.disc.backward(fs.tape, Eigen::VectorXd::Constant(B, 1.0 / static_cast<double>(B)), false).params;
    grads += m.disc.backward(rs.tape, Eigen::VectorXd::Constant(B, -1.0 / static_cast<double>(B)), false).params;
    if (m.disc.penalty_weight() > 0.0) {
      const auto p = m.disc.gradient_penalty(real, fake, penalty_seed);
      r.penalty = p.penalty;
      grads += m.disc.penalty_weight() * p.params;
    }
    r.loss = -r.wasserstein + m.disc.penalty_weight() * r.penalty;
  } catch (const std::domain_error&) {
    // non-finite path values reach the Hermite features
    r.loss = NAN;
  }
  ++m.critic_updates;
  if (!std::isfinite(r.loss) || !grads.allFinite()) {
    r.skipped = true;
    ++m.skipped;
    ++m.adam_d.skipped;
    return r;
  }
  adam_step(m.disc.coeff_net(), grads, m.adam_d);
  return r;
}

struct GeneratorStepResult {
  double loss = 0.0;  // -mean D(G(v))
  bool skipped = false;
};

struct GeneratorLossGradients {
  double loss = 0.0;  // -mean D(G(v))
  GeneratorGradients grads;
};

/// Generator loss and its exact gradient through the frozen-noise unroll.
inline GeneratorLossGradients generator_gradients(const HganModel& m, std::size_t batch, std::uint64_t seed,
                                                  std::uint64_t first_path, const Eigen::MatrixXd* context = nullptr) {
  const auto sample = m.gen.sample(batch, seed, true, first_path, context);
  const auto scored = m.disc.score_batch(sample.paths);
  const auto B = static_cast<Eigen::Index>(batch);
  GeneratorLossGradients out;
  out.loss = -scored.scores.mean();
  const auto dg = m.disc.backward(scored.tape, Eigen::VectorXd::Constant(B, -1.0 / static_cast<double>(B)));
  out.grads = m.gen.backprop(*sample.tape, dg.paths);
  return out;
}

/// One generator update; the critic is read only.
inline GeneratorStepResult generator_step(HganModel& m, std::size_t batch, std::uint64_t seed,
                                          std::uint64_t first_path, const Eigen::MatrixXd* context = nullptr) {
  GeneratorStepResult r;
  GeneratorLossGradients lg;
  try {
    lg = generator_gradients(m, batch, seed, first_path, context);
    r.loss = lg.loss;
  } catch (const NumericalError&) {
    r.loss = NAN;
  } catch (const std::domain_error&) {
    r.loss = NAN;
  }
  const auto& g = lg.grads;
  ++m.gen_updates;
  if (!std::isfinite(r.loss) || !g.h.allFinite() || !g.f.allFinite() || !g.g.allFinite()) {
    r.skipped = true;
    ++m.skipped;
    ++m.adam_h.skipped;
    return r;
  }
  adam_step(m.gen.h_net(), g.h, m.adam_h);
  adam_step(m.gen.f_net(), g.f, m.adam_f);
  adam_step(m.gen.g_net(), g.g, m.adam_g);
  return r;
}

// ---------------------------------------------------------------------------

struct TrainRecord {
  std::size_t step = 0;
  double critic_loss = 0.0;  // mean over this step's critic updates
  double wasserstein = 0.0;
  double penalty = 0.0;
  double gen_loss = 0.0;
  double wall_ms = 0.0;
  std::uint64_t critic_updates_total = 0;
  std::uint64_t gen_updates_total = 0;
  std::uint64_t skipped_total = 0;
  std::optional<MetricsReport> eval;
};

struct TrainLog {
  std::string config_hash;
  std::vector<TrainRecord> records;

  /// JSON lines; wall_ms is included unless stripped.
  [[nodiscard]] std::string to_jsonl(bool include_wall_time = true) const {
    std::string out;
    for (const auto& r : records) {
      nlohmann::json j{{"step", r.step},
                       {"critic_loss", r.critic_loss},
                       {"wasserstein", r.wasserstein},
                       {"penalty", r.penalty},
                       {"gen_loss", r.gen_loss},
                       {"critic_updates_total", r.critic_updates_total},
                       {"gen_updates_total", r.gen_updates_total},
                       {"skipped_total", r.skipped_total},
                       {"config_hash", config_hash}};
      if (include_wall_time) j["wall_ms"] = r.wall_ms;
      if (r.eval) j["eval"] = to_json(*r.eval);
      out += j.dump();
      out += '\n';
    }
    return out;
  }

  /// Hash of the log content with timestamps stripped.
  [[nodiscard]] std::string content_hash() const { return hex64(fnv1a(to_jsonl(false))); }
};

inline nlohmann::json checkpoint_json(const HganModel& m, const TrainConfig& c, std::size_t step) {
  return {{"format", "hgan-checkpoint"},
          {"version", 1},
          {"step", step},
          {"config_hash", config_hash(c)},
          {"config", canonical_config(c)},
          {"generator", to_json(m.gen)},
          {"discriminator", to_json(m.disc)},
          {"adam", {{"h", to_json(m.adam_h)}, {"f", to_json(m.adam_f)}, {"g", to_json(m.adam_g)}, {"d", to_json(m.adam_d)}}},
          {"rng", {{"seed", c.seed}, {"critic_updates", m.critic_updates}, {"gen_updates", m.gen_updates},
                   {"skipped", m.skipped}}}};
}

inline HganModel model_from_checkpoint(const nlohmann::json& j) {
  if (j.at("format") != "hgan-checkpoint" || j.at("version") != 1) {
    throw std::invalid_argument("unsupported checkpoint format");
  }
  HganModel m{generator_from_json(j.at("generator")), discriminator_from_json(j.at("discriminator")), {}, {}, {}, {}};
  const auto& a = j.at("adam");
  m.adam_h = adam_from_json(a.at("h"));
  m.adam_f = adam_from_json(a.at("f"));
  m.adam_g = adam_from_json(a.at("g"));
  m.adam_d = adam_from_json(a.at("d"));
  const auto& r = j.at("rng");
  m.critic_updates = r.at("critic_updates");
  m.gen_updates = r.at("gen_updates");
  m.skipped = r.at("skipped");
  return m;
}

struct TrainResult {
  bool aborted = false;
  std::string abort_reason;
  TrainLog log;
  nlohmann::json best_checkpoint;
  nlohmann::json final_checkpoint;
  std::size_t best_step = 0;
  double best_mmd = INFINITY;
  PathBatch validation;
};

/// Seed used for evaluation samples; fixed per config so reloading a
/// checkpoint reproduces logged metrics.
inline std::uint64_t eval_seed(const TrainConfig& c) { return derive_seed(c.seed, 9001); }

/// Samples as many paths as the reference set and computes all four metrics.
inline MetricsReport evaluate_generator(const NeuralSdeGenerator& gen, const PathBatch& reference, std::uint64_t seed,
                                        const MetricOptions& opt, const std::string& hash, bool conditional = false) {
  std::optional<Eigen::MatrixXd> ctx;
  if (conditional) {
    ctx = conditioning_context(reference, opt.target_first, {gen.data_mean(), gen.data_std()});
  }
  const auto fake = gen.sample(reference.batch_size(), seed, false, 0, ctx ? &*ctx : nullptr).paths;
  auto r = compute_metrics(reference, fake, opt, hash);
  r.seed = seed;
  return r;
}

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;  // progress reporting
};

/// Splits off the validation slice (last rows), then alternates
/// critic_steps_per_gen critic updates with one generator update.
inline TrainResult train(HganModel& m, const PathBatch& data, const TrainConfig& c, const TrainHooks& hooks = {}) {
  c.validate();
  if (!(data.grid() == m.gen.grid())) throw std::invalid_argument("dataset grid does not match the generator grid");
  const std::size_t n_val = std::min(c.validation_paths, data.batch_size() / 2);
  const std::size_t n_train = data.batch_size() - n_val;
  if (n_train < c.batch_size) throw std::invalid_argument("training set smaller than one batch");
  TrainResult res;
  res.log.config_hash = config_hash(c);
  const PathBatch train_set = data.slice(0, n_train);
  res.validation = data.slice(n_train, n_val);
  const Standardization st{m.gen.data_mean(), m.gen.data_std()};
  MetricOptions mopt{.target_first = c.target_first, .target_count = c.target_count, .seed = eval_seed(c)};
  const bool can_eval = n_val >= 100;

  BatchSampler sampler(n_train, derive_seed(c.seed, 201));
  const std::uint64_t fake_seed = derive_seed(c.seed, 202);
  const std::uint64_t gen_seed = derive_seed(c.seed, 203);
  const std::uint64_t penalty_seed = derive_seed(c.seed, 204);
  res.best_checkpoint = checkpoint_json(m, c, 0);
  std::size_t consecutive_skips = 0;
  auto note_skip = [&](bool skipped, const char* what, std::size_t step) {
    consecutive_skips = skipped ? consecutive_skips + 1 : 0;
    if (consecutive_skips >= c.max_consecutive_skips && !res.aborted) {
      res.aborted = true;
      res.abort_reason = std::to_string(consecutive_skips) + " consecutive non-finite updates (last: " + what +
                         " at generator step " + std::to_string(step) + ")";
    }
    return res.aborted;
  };

  for (std::size_t step = 1; step <= c.total_gen_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainRecord rec;
    rec.step = step;
    for (int k = 0; k < c.critic_steps_per_gen; ++k) {
      const auto real = gather(train_set, sampler.next(c.batch_size));
      std::optional<Eigen::MatrixXd> ctx;
      if (c.conditional) ctx = conditioning_context(real, c.target_first, st);
      PathBatch fake;
      try {
        fake = m.gen.sample(c.batch_size, fake_seed, false, m.critic_updates * c.batch_size, ctx ? &*ctx : nullptr)
                   .paths;
      } catch (const NumericalError&) {
        // a diverged generator counts as a skipped critic update
        ++m.critic_updates;
        ++m.skipped;
        rec.critic_loss = NAN;
        if (note_skip(true, "critic", step)) break;
        continue;
      }
      const auto cr = critic_step(m, real, fake, derive_seed(penalty_seed, m.critic_updates));
      rec.critic_loss += cr.loss / c.critic_steps_per_gen;
      rec.wasserstein += cr.wasserstein / c.critic_steps_per_gen;
      rec.penalty += cr.penalty / c.critic_steps_per_gen;
      if (note_skip(cr.skipped, "critic", step)) break;
    }
    auto stamp = [&] {
      rec.critic_updates_total = m.critic_updates;
      rec.gen_updates_total = m.gen_updates;
      rec.skipped_total = m.skipped;
    };
    if (res.aborted) {
      stamp();
      res.log.records.push_back(std::move(rec));
      break;
    }
    std::optional<Eigen::MatrixXd> ctx;
    if (c.conditional) ctx = conditioning_context(gather(train_set, sampler.next(c.batch_size)), c.target_first, st);
    const auto gr = generator_step(m, c.batch_size, gen_seed, m.gen_updates * c.batch_size, ctx ? &*ctx : nullptr);
    rec.gen_loss = gr.loss;
    stamp();
    if (note_skip(gr.skipped, "generator", step)) {
      res.log.records.push_back(std::move(rec));
      break;
    }
    if (can_eval && (step % c.eval_every == 0 || step == c.total_gen_steps)) {
      rec.eval = evaluate_generator(m.gen, res.validation, eval_seed(c), mopt, res.log.config_hash, c.conditional);
      if (rec.eval->mmd < res.best_mmd) {
        res.best_mmd = rec.eval->mmd;
        res.best_step = step;
        res.best_checkpoint = checkpoint_json(m, c, step);
      }
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_record) hooks.on_record(rec);
    res.log.records.push_back(std::move(rec));
  }
  res.final_checkpoint = checkpoint_json(m, c, c.total_gen_steps);
  if (!can_eval) {
    // nothing to select on
    res.best_checkpoint = res.final_checkpoint;
    res.best_step = c.total_gen_steps;
  }
  return res;
}

}  // namespace hgan
