#include <hgan/runtime.hpp>
#include <hgan/training.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace hgan;

namespace {

const TimeGrid kGrid{0.0, 1.0, 29};

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.total_gen_steps = 6;
  c.eval_every = 3;
  c.validation_paths = 100;
  c.gen_hidden = 8;
  c.disc_hidden = 16;
  c.latent_dim = 3;
  c.target_first = 20;
  c.target_count = 10;
  c.critic_steps_per_gen = 2;
  c.seed = 5;
  return c;
}

const PathBatch& ou_data() {
  static const PathBatch data = euler_maruyama(benchmark_spec(ProcessKind::ou), kGrid, 300, 1);
  return data;
}

PathBatch constant_paths(std::size_t n, double value) {
  PathBatch p(kGrid, n);
  for (double& v : p.values()) v = value;
  return p;
}

}  // namespace

TEST(TrainConfig, ValidationNamesTheField) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gen_lr = 1.5;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("gen_lr"), std::string::npos);
  }
  c = {};
  c.critic_steps_per_gen = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.hermite_order = 13;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.total_gen_steps = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, DefaultsAndHash) {
  const TrainConfig c;
  EXPECT_EQ(c.critic_steps_per_gen, 5);
  EXPECT_EQ(c.penalty_weight, 10.0);
  EXPECT_EQ(c.gen_lr, 1e-4);
  EXPECT_EQ(c.disc_lr, 1e-3);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.adam_beta1, 0.5);
  EXPECT_EQ(c.adam_beta2, 0.9);
  EXPECT_EQ(c.hermite_order, 4);
  EXPECT_EQ(config_hash(c), config_hash(TrainConfig{}));
  TrainConfig d;
  d.seed = 1;
  EXPECT_NE(config_hash(c), config_hash(d));
  EXPECT_EQ(config_hash(c).size(), 16u);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(BatchSampler, EachEpochIsAPermutation) {
  BatchSampler s(50, 3);
  std::multiset<std::size_t> seen;
  for (int b = 0; b < 5; ++b) {
    for (auto i : s.next(10)) seen.insert(i);
  }
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 50u);
  EXPECT_EQ(s.epoch(), 0u);
  const auto next_epoch = s.next(10);
  EXPECT_EQ(s.epoch(), 1u);
  BatchSampler again(50, 3);
  EXPECT_EQ(again.next(10), BatchSampler(50, 3).next(10));
  EXPECT_NE(again.next(50), BatchSampler(50, 4).next(50));
  EXPECT_THROW((void)s.next(51), std::invalid_argument);
  (void)next_epoch;
}

TEST(Standardization, GlobalMoments) {
  PathBatch p(kGrid, 2);
  for (std::size_t k = 0; k < p.points(); ++k) {
    p.at(0, k) = 1.0;
    p.at(1, k) = 3.0;
  }
  const auto st = fit_standardization(p);
  EXPECT_DOUBLE_EQ(st.mean, 2.0);
  EXPECT_DOUBLE_EQ(st.std, 1.0);
}

TEST(CriticStep, IdenticalSetsWithZeroCriticGiveZeroEstimate) {
  auto m = make_model(small_config(), kGrid, ou_data());
  m.disc.coeff_net().mutable_params().setZero();
  const Eigen::VectorXd gen_before = m.gen.f_net().params();
  const auto real = ou_data().slice(0, 16);
  const auto r = critic_step(m, real, real, 1);
  EXPECT_EQ(r.wasserstein, 0.0);
  EXPECT_EQ(r.penalty, 1.0);
  EXPECT_EQ(m.gen.f_net().params(), gen_before);
  EXPECT_EQ(m.critic_updates, 1u);
}

TEST(CriticStep, UnconstrainedCriticObjectiveIncreases) {
  auto c = small_config();
  c.penalty_weight = 0.0;
  c.disc_lr = 1e-3;
  auto m = make_model(c, kGrid, ou_data());
  const auto real = constant_paths(16, m.disc.standardize_mean());
  const auto fake = constant_paths(16, m.disc.standardize_mean() + 1.5 * m.disc.standardize_std());
  double prev = -INFINITY;
  for (int k = 0; k < 10; ++k) {
    const auto r = critic_step(m, real, fake, 1);
    EXPECT_GT(r.wasserstein, prev) << k;
    prev = r.wasserstein;
  }
}

TEST(CriticStep, DeterministicLossSequence) {
  auto run = [] {
    auto m = make_model(small_config(), kGrid, ou_data());
    std::vector<double> losses;
    for (int k = 0; k < 4; ++k) {
      const auto fake = m.gen.sample(16, 9, false, k * 16).paths;
      losses.push_back(critic_step(m, ou_data().slice(k * 16, 16), fake, k).loss);
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(CriticStep, NonFiniteLossIsSkipped) {
  auto m = make_model(small_config(), kGrid, ou_data());
  auto fake = ou_data().slice(16, 16);
  fake.at(0, 25) = INFINITY;
  const Eigen::VectorXd before = m.disc.coeff_net().params();
  const auto r = critic_step(m, ou_data().slice(0, 16), fake, 1);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(m.disc.coeff_net().params(), before);
  EXPECT_EQ(m.skipped, 1u);
}

TEST(GeneratorStep, ZeroCriticLeavesGeneratorUnchanged) {
  auto m = make_model(small_config(), kGrid, ou_data());
  m.disc.coeff_net().mutable_params().setZero();
  const Eigen::VectorXd f = m.gen.f_net().params(), g = m.gen.g_net().params(), h = m.gen.h_net().params();
  const auto r = generator_step(m, 16, 1, 0);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(m.gen.f_net().params(), f);
  EXPECT_EQ(m.gen.g_net().params(), g);
  EXPECT_EQ(m.gen.h_net().params(), h);
}

TEST(GeneratorStep, GradientMatchesFiniteDifferences) {
  const TimeGrid grid{0.0, 1.0, 10};
  const auto data = euler_maruyama(benchmark_spec(ProcessKind::ou), grid, 64, 2);
  auto c = small_config();
  c.target_first = 5;
  c.target_count = 6;
  auto m = make_model(c, grid, data);
  const auto lg = generator_gradients(m, 8, 3, 0);
  auto loss = [&] { return generator_gradients(m, 8, 3, 0).loss; };
  struct Probe {
    Mlp* net;
    const Eigen::VectorXd* grad;
  };
  const std::vector<Probe> probes{{&m.gen.h_net(), &lg.grads.h}, {&m.gen.f_net(), &lg.grads.f}, {&m.gen.g_net(), &lg.grads.g}};
  double worst = 0.0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    Mlp& net = *probes[p].net;
    const auto& grad = *probes[p].grad;
    // largest-gradient entry keeps the comparison away from round-off
    Eigen::Index idx = 0;
    grad.cwiseAbs().maxCoeff(&idx);
    const double saved = net.params()[idx];
    net.mutable_params()[idx] = saved + 1e-5;
    const double up = loss();
    net.mutable_params()[idx] = saved - 1e-5;
    const double down = loss();
    net.mutable_params()[idx] = saved;
    const double fd = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(fd - grad[idx]) / std::max(std::abs(fd), std::abs(grad[idx])));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(GeneratorStep, LossFiniteOver100StepsAtDefaultConfig) {
  tune_allocator();
  const TimeGrid grid{0.0, 1.0, 149};
  const auto data = euler_maruyama(benchmark_spec(ProcessKind::ou), grid, 400, 3);
  TrainConfig c;
  c.total_gen_steps = 100;
  c.eval_every = 1000;
  c.validation_paths = 0;
  auto m = make_model(c, grid, data);
  const auto res = train(m, data, c);
  ASSERT_FALSE(res.aborted) << res.abort_reason;
  ASSERT_EQ(res.log.records.size(), 100u);
  for (const auto& r : res.log.records) {
    EXPECT_TRUE(std::isfinite(r.gen_loss));
    EXPECT_TRUE(std::isfinite(r.critic_loss));
  }
  EXPECT_EQ(res.log.records.back().skipped_total, 0u);
  EXPECT_TRUE(m.gen.all_finite());
}

TEST(Train, ZeroStepsKeepsInitialization) {
  auto c = small_config();
  c.total_gen_steps = 0;
  auto m = make_model(c, kGrid, ou_data());
  const auto init = checkpoint_json(m, c, 0);
  const auto res = train(m, ou_data(), c);
  EXPECT_TRUE(res.log.records.empty());
  EXPECT_EQ(res.final_checkpoint, init);
  EXPECT_EQ(res.best_checkpoint, init);
}

TEST(Train, SameSeedGivesIdenticalLogHash) {
  auto run = [](std::uint64_t seed) {
    auto c = small_config();
    c.seed = seed;
    auto m = make_model(c, kGrid, ou_data());
    return train(m, ou_data(), c);
  };
  const auto a = run(5), b = run(5), other = run(6);
  EXPECT_EQ(a.log.content_hash(), b.log.content_hash());
  EXPECT_EQ(a.log.to_jsonl(false), b.log.to_jsonl(false));
  EXPECT_EQ(a.final_checkpoint, b.final_checkpoint);
  EXPECT_NE(a.log.content_hash(), other.log.content_hash());
}

TEST(Train, AlternationCountersAndRecords) {
  const auto c = small_config();
  auto m = make_model(c, kGrid, ou_data());
  const auto res = train(m, ou_data(), c);
  ASSERT_EQ(res.log.records.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& r = res.log.records[i];
    EXPECT_EQ(r.step, i + 1);
    EXPECT_EQ(r.critic_updates_total, (i + 1) * 2);
    EXPECT_EQ(r.gen_updates_total, i + 1);
    EXPECT_EQ(r.eval.has_value(), r.step % 3 == 0);
  }
  const auto lines = res.log.to_jsonl();
  std::size_t count = 0;
  for (std::size_t pos = 0; (pos = lines.find('\n', pos)) != std::string::npos; ++pos) ++count;
  EXPECT_EQ(count, 6u);
  const auto first = nlohmann::json::parse(lines.substr(0, lines.find('\n')));
  EXPECT_EQ(first.at("config_hash"), config_hash(c));
  EXPECT_TRUE(first.contains("wall_ms"));
  EXPECT_GE(res.best_step, 3u);
}

TEST(Train, FinalCheckpointReproducesLoggedMetrics) {
  const auto c = small_config();
  auto m = make_model(c, kGrid, ou_data());
  const auto res = train(m, ou_data(), c);
  const auto& logged = *res.log.records.back().eval;
  const auto loaded = model_from_checkpoint(nlohmann::json::parse(res.final_checkpoint.dump()));
  MetricOptions opt{.target_first = c.target_first, .target_count = c.target_count, .seed = eval_seed(c)};
  const auto again = evaluate_generator(loaded.gen, res.validation, eval_seed(c), opt, config_hash(c));
  EXPECT_EQ(to_json(again).dump(), to_json(logged).dump());
  EXPECT_TRUE(loaded.adam_d == m.adam_d);
  EXPECT_EQ(loaded.disc.coeff_net().params(), m.disc.coeff_net().params());
}

TEST(Train, NonFiniteCascadeAborts) {
  auto c = small_config();
  c.total_gen_steps = 20;
  auto m = make_model(c, kGrid, ou_data());
  m.disc.coeff_net().mutable_params()[0] = NAN;
  const auto res = train(m, ou_data(), c);
  EXPECT_TRUE(res.aborted);
  EXPECT_NE(res.abort_reason.find("consecutive"), std::string::npos);
  EXPECT_LT(res.log.records.size(), 20u);
  EXPECT_GE(res.log.records.back().skipped_total, 10u);
}

TEST(Train, RejectsMismatchedGrid) {
  const auto c = small_config();
  auto m = make_model(c, kGrid, ou_data());
  const auto other = euler_maruyama(benchmark_spec(ProcessKind::ou), {0.0, 0.5, 29}, 300, 1);
  EXPECT_THROW((void)train(m, other, c), std::invalid_argument);
}

TEST(Train, ConditionalModeRuns) {
  auto c = small_config();
  c.conditional = true;
  auto m = make_model(c, kGrid, ou_data());
  EXPECT_EQ(m.gen.context_dim(), 2);
  const auto res = train(m, ou_data(), c);
  EXPECT_FALSE(res.aborted);
  EXPECT_TRUE(res.log.records.back().eval->all_finite());
  const auto ctx = conditioning_context(ou_data().slice(0, 3), 20, {0.0, 1.0});
  double mean = 0.0;
  for (std::size_t k = 0; k < 20; ++k) mean += ou_data().at(1, k) / 20.0;
  EXPECT_DOUBLE_EQ(ctx(0, 1), ou_data().at(1, 0));
  EXPECT_NEAR(ctx(1, 1), mean, 1e-12);
}
