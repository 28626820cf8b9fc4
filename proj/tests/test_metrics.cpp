#include <hgan/metrics.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace hgan;

namespace {

// One scored step: grid of two points, window = {1}.
const TimeGrid kOne{0.0, 1.0, 1};

PathBatch normal_batch(std::size_t n, double mean, double sd, std::uint64_t seed, const TimeGrid& grid = kOne) {
  PathBatch p(grid, n, seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p.points(); ++k) p.at(i, k) = mean + sd * normal_at(seed, i, k, Stream::probe);
  }
  return p;
}

PathBatch shifted(const PathBatch& p, double c) {
  PathBatch out = p;
  for (double& v : out.values()) v += c;
  return out;
}

std::vector<double> normals(std::size_t n, double mean, double sd, std::uint64_t seed) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = mean + sd * normal_at(seed, i, 0, Stream::probe);
  return v;
}

}  // namespace

TEST(Quantile, Type7Interpolation) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 1.0), 10.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 5.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.05), 1.45);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.95), 9.55);
}

TEST(Bandwidth, SilvermanAndFloor) {
  std::vector<double> v = normals(10000, 0, 2, 1);
  std::sort(v.begin(), v.end());
  EXPECT_NEAR(silverman_bandwidth(v).first, 0.9 * 2.0 * std::pow(1e4, -0.2), 0.05 * 0.9 * 2.0 * std::pow(1e4, -0.2));
  const std::vector<double> flat(50, 3.0);
  EXPECT_EQ(silverman_bandwidth(flat), std::make_pair(kBandwidthFloor, true));
}

TEST(Mise, IdenticalSetsGiveExactZero) {
  const auto p = normal_batch(500, 0, 1, 1);
  EXPECT_EQ(mise(p, p, 512, 1, 1), 0.0);
}

TEST(Mise, SameDistributionLargeSamples) {
  EXPECT_LE(mise(normal_batch(10000, 0, 1, 1), normal_batch(10000, 0, 1, 2), 512, 1, 1), 0.005);
}

TEST(Mise, SeparatedNormalsMatchClosedForm) {
  // int (phi_0 - phi_3)^2 dx = (1/sqrt(pi)) (1 - e^{-9/4})
  const double exact = (1.0 - std::exp(-2.25)) / std::sqrt(std::numbers::pi);
  const double est = mise(normal_batch(10000, 0, 1, 1), normal_batch(10000, 3, 1, 2), 512, 1, 1);
  EXPECT_GE(est, 0.1);
  EXPECT_NEAR(est, exact, 0.2 * exact);
}

TEST(Mise, DegenerateMarginalFloorsBandwidth) {
  PathBatch a(kOne, 40), b(kOne, 40);
  for (std::size_t i = 0; i < 40; ++i) {
    a.at(i, 1) = 1.0;
    b.at(i, 1) = 1.0 + 0.01 * static_cast<double>(i);
  }
  bool floored = false;
  const double v = mise(a, b, 256, 1, 1, &floored);
  EXPECT_TRUE(floored);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW((void)mise(normal_batch(29, 0, 1, 1), a, 256, 1, 1), std::invalid_argument);
}

TEST(TailDifference, IdentityShiftAndClip) {
  const auto p = normal_batch(2000, 0, 1, 3);
  EXPECT_EQ(tail_difference(p, p, 1, 1), 0.0);
  EXPECT_NEAR(tail_difference(p, shifted(p, 0.7), 1, 1), 1.4, 1e-12);
  EXPECT_EQ(tail_difference(p, shifted(p, 50.0), 1, 1), 10.0);
  EXPECT_NEAR(tail_difference_unclipped(p, shifted(p, 50.0), 1, 1), 100.0, 1e-9);
  EXPECT_THROW((void)tail_difference(normal_batch(99, 0, 1, 1), p, 1, 1), std::invalid_argument);
}

TEST(Mse, IdentityConstantAndSymmetry) {
  const auto a = normal_batch(300, 0, 1, 4, {0, 1, 9});
  const auto b = normal_batch(300, 0.5, 2, 5, {0, 1, 9});
  EXPECT_EQ(mse(a, a, 5, 5), 0.0);
  EXPECT_NEAR(mse(a, shifted(a, 0.3), 5, 5), 0.09, 1e-12);
  EXPECT_EQ(mse(a, b, 5, 5), mse(b, a, 5, 5));
  EXPECT_THROW((void)mse(a, b, 8, 5), std::invalid_argument);
}

TEST(Mmd, SplitHalvesOfOneSample) {
  const auto v = normals(10000, 0, 1, 7);
  const std::span<const double> all(v);
  EXPECT_LE(mmd(all.first(5000), all.last(5000)), 0.02);
}

TEST(Mmd, SplitHalvesWithinPermutationNull) {
  // oracle: the permutation distribution of the same statistic
  const auto v = normals(4000, 0, 1, 17);
  const std::span<const double> all(v);
  const double observed = mmd(all.first(2000), all.last(2000));
  std::vector<double> null;
  for (std::uint64_t r = 0; r < 20; ++r) {
    std::vector<double> perm(v);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
      std::swap(perm[i], perm[static_cast<std::size_t>(uniform_at(r, i, 0, Stream::shuffle) * (i + 1))]);
    }
    const std::span<const double> p(perm);
    null.push_back(mmd(p.first(2000), p.last(2000)));
  }
  EXPECT_LE(observed, *std::max_element(null.begin(), null.end()) + 0.01);
}

TEST(Mmd, ShiftedNormalsSeparate) {
  const auto a = normals(10000, 0, 1, 1);
  const auto b = normals(10000, 1, 1, 2);
  EXPECT_GE(mmd(a, b), 0.1);
}

TEST(Mmd, SelfDistanceClampsToZero) {
  const auto a = normals(500, 0, 1, 3);
  EXPECT_LT(mmd_squared_unbiased(a, a, 1.0), 0.0);
  EXPECT_EQ(mmd(a, a), 0.0);
  const std::vector<double> flat(10, 2.0);
  double h = 0.0;
  bool floored = false;
  (void)mmd(flat, flat, &h, &floored);
  EXPECT_EQ(h, kBandwidthFloor);
  EXPECT_TRUE(floored);
  EXPECT_THROW((void)mmd(std::vector<double>{1.0}, a), std::invalid_argument);
}

TEST(Mmd, MedianHeuristicMatchesBruteForce) {
  const auto a = normals(30, 0, 1, 1);
  const auto b = normals(31, 2, 1, 2);
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> d;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::abs(pooled[i] - pooled[j]));
  }
  std::sort(d.begin(), d.end());
  EXPECT_DOUBLE_EQ(median_heuristic(a, b).first, 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]));
}

TEST(Metrics, SameProcessSplitsNearZero) {
  const auto spec = benchmark_spec(ProcessKind::ou);
  const TimeGrid grid{0.0, 1.0, 149};
  const auto real = euler_maruyama(spec, grid, 10000, 5);
  const auto fake = euler_maruyama(spec, grid, 10000, 5, {.first_path = 10000});
  const auto r = compute_metrics(real, fake);
  // stationary sd ~ 0.61
  EXPECT_LE(r.mise, 0.005 / 0.61);
  EXPECT_LE(r.td, 0.1 * 0.61);
  EXPECT_LE(r.mse, std::pow(4.0 * 0.61 * std::sqrt(2.0 / 10000.0), 2));
  EXPECT_LE(r.mmd, 0.02);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Metrics, MonotoneUnderMeanShift) {
  const TimeGrid grid{0.0, 1.0, 4};
  const auto real = normal_batch(10000, 0, 1, 9, grid);
  MetricOptions opt{.target_first = 2, .target_count = 3};
  MetricsReport prev;
  bool first = true;
  for (double c : {0.0, 0.5, 1.0, 2.0}) {
    const auto r = compute_metrics(real, shifted(real, c), opt);
    if (!first) {
      EXPECT_GE(r.mise, prev.mise) << c;
      EXPECT_GE(r.td_unclipped, prev.td_unclipped) << c;
      EXPECT_GE(r.mse, prev.mse) << c;
      EXPECT_GE(r.mmd, prev.mmd) << c;
    } else {
      EXPECT_EQ(r.mise, 0.0);
      EXPECT_EQ(r.td, 0.0);
      EXPECT_EQ(r.mse, 0.0);
      EXPECT_EQ(r.mmd, 0.0);
    }
    prev = r;
    first = false;
  }
}

TEST(Metrics, StableBetween5000And6000TestPaths) {
  const TimeGrid grid{0.0, 1.0, 149};
  const auto real = euler_maruyama(benchmark_spec(ProcessKind::ou), grid, 6000, 21);
  auto perturbed = benchmark_spec(ProcessKind::ou);
  perturbed.params["sigma"] *= 1.3;
  perturbed.params["alpha"] += 0.3;
  const auto fake = euler_maruyama(perturbed, grid, 6000, 22);
  const auto full = compute_metrics(real, fake);
  const auto part = compute_metrics(real.slice(0, 5000), fake.slice(0, 5000));
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); };
  EXPECT_LT(rel(full.mise, part.mise), 0.1);
  EXPECT_LT(rel(full.td, part.td), 0.1);
  EXPECT_LT(rel(full.mse, part.mse), 0.1);
  EXPECT_LT(rel(full.mmd, part.mmd), 0.1);
}

TEST(Metrics, PerStepMmdFlag) {
  const TimeGrid grid{0.0, 1.0, 4};
  const auto a = normal_batch(400, 0, 1, 1, grid);
  const auto b = normal_batch(400, 1, 1, 2, grid);
  const auto terminal = compute_metrics(a, b, {.target_first = 2, .target_count = 3});
  const auto per_step = compute_metrics(a, b, {.target_first = 2, .target_count = 3, .mmd_per_step = true});
  double expected = 0.0;
  for (std::size_t k = 2; k < 5; ++k) expected += mmd(a.column(k), b.column(k)) / 3.0;
  EXPECT_DOUBLE_EQ(per_step.mmd, expected);
  EXPECT_DOUBLE_EQ(terminal.mmd, mmd(a.column(4), b.column(4)));
}

TEST(Metrics, ReportJsonAndTableRow) {
  const TimeGrid grid{0.0, 1.0, 4};
  const auto a = normal_batch(200, 0, 1, 1, grid);
  const auto b = normal_batch(200, 30, 1, 2, grid);
  const auto r = compute_metrics(a, b, {.target_first = 2, .target_count = 3, .seed = 4}, "abc");
  EXPECT_EQ(r.td, 10.0);
  EXPECT_FALSE(r.warnings.empty());
  const auto j = to_json(r);
  EXPECT_EQ(j.at("mse_scale"), 1.0);
  const auto back = metrics_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.mise, r.mise);
  EXPECT_EQ(back.mmd, r.mmd);
  EXPECT_EQ(back.config_hash, "abc");
  EXPECT_EQ(table_header(), "dataset,MISE,TD,MSE,MMD");
  EXPECT_EQ(table_row("OU", r).rfind("OU,", 0), 0u);
  EXPECT_EQ(format_double(0.1), "0.1");
}
