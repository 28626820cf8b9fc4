#pragma once

#include "sde.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

inline constexpr double kTdClip = 10.0;
inline constexpr double kBandwidthFloor = 1e-6;

struct MetricOptions {
  std::size_t target_first = 100;
  std::size_t target_count = 50;
  int kde_grid_points = 512;
  bool mmd_per_step = false;         // average MMD over target steps instead of terminal values
  std::size_t mmd_median_sample = 2000;  // pooled points used for the median heuristic
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double mise = 0.0;
  double td = 0.0;
  double td_unclipped = 0.0;
  double mse = 0.0;
  double mse_scale = 1.0;  // mse is reported raw
  double mmd = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  double bandwidth = 0.0;  // MMD kernel bandwidth (terminal, or mean over steps)
  std::uint64_t seed = 0;
  std::string config_hash;
  MetricOptions options;
  std::vector<std::string> warnings;

  [[nodiscard]] bool all_finite() const {
    return std::isfinite(mise) && std::isfinite(td) && std::isfinite(mse) && std::isfinite(mmd);
  }
};

namespace detail {

inline void check_window(const PathBatch& p, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > p.points()) throw std::invalid_argument("metric step window out of range");
}

inline void check_pair(const PathBatch& real, const PathBatch& fake, std::size_t first, std::size_t count) {
  if (real.points() != fake.points()) throw std::invalid_argument("real and fake paths have different grids");
  check_window(real, first, count);
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Type-7 (linear interpolation) quantile of an ascending sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, p);
}

/// 0.9 min(sd, IQR/1.34) n^{-1/5}; falls back to sd when the IQR vanishes.
/// Returns the floored value and whether the floor was hit.
inline std::pair<double, bool> silverman_bandwidth(std::span<const double> sorted) {
  const double sd = detail::sd_of(sorted);
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  const double h = 0.9 * spread * std::pow(static_cast<double>(sorted.size()), -0.2);
  if (!(h >= kBandwidthFloor)) return {kBandwidthFloor, true};
  return {h, false};
}

/// Gaussian KDE evaluated on grid.
inline Eigen::ArrayXd kde(std::span<const double> samples, double h, const Eigen::ArrayXd& grid) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(grid.size());
  const double inv_h = 1.0 / h;
  for (double x : samples) out += (-0.5 * ((grid - x) * inv_h).square()).exp();
  return out * (inv_h / (std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(samples.size())));
}

/// Integrated squared difference of two KDEs for one cross-section.
inline double ise_kde(std::vector<double> a, std::vector<double> b, int grid_points, bool* floored = nullptr) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("KDE needs at least 2 samples per set");
  if (grid_points < 2) throw std::invalid_argument("KDE grid needs at least 2 points");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a == b) return 0.0;
  const auto [ha, fa] = silverman_bandwidth(a);
  const auto [hb, fb] = silverman_bandwidth(b);
  if (floored != nullptr) *floored = *floored || fa || fb;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double lo = quantile_sorted(pooled, 0.001);
  double hi = quantile_sorted(pooled, 0.999);
  if (!(hi > lo)) {
    lo -= 5.0 * std::max(ha, hb);
    hi += 5.0 * std::max(ha, hb);
  }
  const Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(grid_points, lo, hi);
  const Eigen::ArrayXd d = (kde(a, ha, grid) - kde(b, hb, grid)).square();
  const double step = (hi - lo) / (grid_points - 1);
  return step * (d.sum() - 0.5 * (d[0] + d[grid_points - 1]));
}

/// Mean over target steps of the KDE integrated squared error.
inline double mise(const PathBatch& real, const PathBatch& fake, int grid_points = 512, std::size_t first = 100,
                   std::size_t count = 50, bool* floored = nullptr) {
  detail::check_pair(real, fake, first, count);
  if (real.batch_size() < 30 || fake.batch_size() < 30) throw std::invalid_argument("MISE needs at least 30 paths per set");
  double total = 0.0;
  for (std::size_t k = first; k < first + count; ++k) total += ise_kde(real.column(k), fake.column(k), grid_points, floored);
  return total / static_cast<double>(count);
}

/// Mean over target steps of |q05 - q05'| + |q95 - q95'|, before clipping.
inline double tail_difference_unclipped(const PathBatch& real, const PathBatch& fake, std::size_t first = 100,
                                        std::size_t count = 50) {
  detail::check_pair(real, fake, first, count);
  if (real.batch_size() < 100 || fake.batch_size() < 100) {
    throw std::invalid_argument("tail difference needs at least 100 paths per set");
  }
  double total = 0.0;
  for (std::size_t k = first; k < first + count; ++k) {
    auto a = real.column(k);
    auto b = fake.column(k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    total += std::abs(quantile_sorted(a, 0.05) - quantile_sorted(b, 0.05)) +
             std::abs(quantile_sorted(a, 0.95) - quantile_sorted(b, 0.95));
  }
  return total / static_cast<double>(count);
}

inline double tail_difference(const PathBatch& real, const PathBatch& fake, std::size_t first = 100,
                              std::size_t count = 50) {
  return std::min(kTdClip, tail_difference_unclipped(real, fake, first, count));
}

/// Mean over target steps of the squared gap between cross-sectional means.
inline double mse(const PathBatch& real, const PathBatch& fake, std::size_t first = 100, std::size_t count = 50) {
  detail::check_pair(real, fake, first, count);
  if (real.batch_size() == 0 || fake.batch_size() == 0) throw std::invalid_argument("MSE of an empty set");
  double total = 0.0;
  for (std::size_t k = first; k < first + count; ++k) {
    const double d = detail::mean_of(real.column(k)) - detail::mean_of(fake.column(k));
    total += d * d;
  }
  return total / static_cast<double>(count);
}

/// Median pairwise distance of the pooled sample, using an evenly strided
/// subsample of at most max_points values. Floored at 1e-6.
inline std::pair<double, bool> median_heuristic(std::span<const double> a, std::span<const double> b,
                                                std::size_t max_points = 2000) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  if (pooled.size() > max_points) {
    std::vector<double> sub;
    sub.reserve(max_points);
    const double stride = static_cast<double>(pooled.size()) / static_cast<double>(max_points);
    for (std::size_t i = 0; i < max_points; ++i) sub.push_back(pooled[static_cast<std::size_t>(i * stride)]);
    pooled = std::move(sub);
  }
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::abs(pooled[i] - pooled[j]));
  }
  if (d.empty()) return {kBandwidthFloor, true};
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  if (!(med >= kBandwidthFloor)) return {kBandwidthFloor, true};
  return {med, false};
}

namespace detail {

// sum_{i != j} k(x_i, x_j) (offdiag) or sum_{i,j} k(x_i, y_j)
inline double kernel_sum(std::span<const double> x, std::span<const double> y, double h, bool offdiag) {
  const double c = -0.5 / (h * h);
  const Eigen::Map<const Eigen::ArrayXd> ya(y.data(), static_cast<Eigen::Index>(y.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (c * (ya - x[i]).square()).exp().sum();
  if (offdiag) total -= static_cast<double>(x.size());
  return total;
}

}  // namespace detail

/// Unbiased squared MMD with a Gaussian kernel of bandwidth h.
inline double mmd_squared_unbiased(std::span<const double> a, std::span<const double> b, double h) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("MMD needs at least 2 samples per set");
  const auto m = static_cast<double>(a.size());
  const auto n = static_cast<double>(b.size());
  return detail::kernel_sum(a, a, h, true) / (m * (m - 1.0)) + detail::kernel_sum(b, b, h, true) / (n * (n - 1.0)) -
         2.0 * detail::kernel_sum(a, b, h, false) / (m * n);
}

/// sqrt(max(0, MMD^2_u)) with the median-heuristic bandwidth.
inline double mmd(std::span<const double> a, std::span<const double> b, double* bandwidth = nullptr,
                  bool* floored = nullptr, std::size_t median_sample = 2000) {
  const auto [h, fl] = median_heuristic(a, b, median_sample);
  if (bandwidth != nullptr) *bandwidth = h;
  if (floored != nullptr) *floored = *floored || fl;
  return std::sqrt(std::max(0.0, mmd_squared_unbiased(a, b, h)));
}

inline MetricsReport compute_metrics(const PathBatch& real, const PathBatch& fake, const MetricOptions& opt = {},
                                     std::string config_hash = {}) {
  MetricsReport r;
  r.options = opt;
  r.seed = opt.seed;
  r.config_hash = std::move(config_hash);
  r.n_real = real.batch_size();
  r.n_fake = fake.batch_size();
  bool kde_floor = false;
  r.mise = mise(real, fake, opt.kde_grid_points, opt.target_first, opt.target_count, &kde_floor);
  if (kde_floor) r.warnings.emplace_back("KDE bandwidth floored at 1e-6 (degenerate marginal)");
  r.td_unclipped = tail_difference_unclipped(real, fake, opt.target_first, opt.target_count);
  r.td = std::min(kTdClip, r.td_unclipped);
  if (r.td_unclipped > kTdClip) r.warnings.emplace_back("tail difference clipped at 10");
  r.mse = mse(real, fake, opt.target_first, opt.target_count);
  bool mmd_floor = false;
  if (opt.mmd_per_step) {
    double total = 0.0, bw = 0.0;
    for (std::size_t k = opt.target_first; k < opt.target_first + opt.target_count; ++k) {
      double h = 0.0;
      total += mmd(real.column(k), fake.column(k), &h, &mmd_floor, opt.mmd_median_sample);
      bw += h;
    }
    r.mmd = total / static_cast<double>(opt.target_count);
    r.bandwidth = bw / static_cast<double>(opt.target_count);
  } else {
    const std::size_t last = real.points() - 1;
    r.mmd = mmd(real.column(last), fake.column(last), &r.bandwidth, &mmd_floor, opt.mmd_median_sample);
  }
  if (mmd_floor) r.warnings.emplace_back("MMD bandwidth floored at 1e-6 (zero median distance)");
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"mise", r.mise},
          {"td", r.td},
          {"td_unclipped", r.td_unclipped},
          {"mse", r.mse},
          {"mse_scale", r.mse_scale},
          {"mmd", r.mmd},
          {"n_real", r.n_real},
          {"n_fake", r.n_fake},
          {"bandwidth", r.bandwidth},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"warnings", r.warnings},
          {"target_first", r.options.target_first},
          {"target_count", r.options.target_count},
          {"kde_grid_points", r.options.kde_grid_points},
          {"mmd_per_step", r.options.mmd_per_step},
          {"definitions",
           {{"mise", "Gaussian KDE (Silverman bandwidth) per target step, squared difference integrated by "
                     "trapezoid on a shared grid over the pooled 0.1%-99.9% quantile range, averaged over steps"},
            {"td", "per target step |q05 - q05'| + |q95 - q95'| (type-7 quantiles), averaged over steps, clipped at 10"},
            {"mse", "squared difference of cross-sectional means, averaged over target steps"},
            {"mmd", r.options.mmd_per_step
                        ? "sqrt(max(0, unbiased MMD^2)), Gaussian kernel, median-heuristic bandwidth, averaged over target steps"
                        : "sqrt(max(0, unbiased MMD^2)), Gaussian kernel, median-heuristic bandwidth, terminal values"}}}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.mise = j.at("mise");
  r.td = j.at("td");
  r.td_unclipped = j.at("td_unclipped");
  r.mse = j.at("mse");
  r.mse_scale = j.at("mse_scale");
  r.mmd = j.at("mmd");
  r.n_real = j.at("n_real");
  r.n_fake = j.at("n_fake");
  r.bandwidth = j.at("bandwidth");
  r.seed = j.at("seed");
  r.config_hash = j.at("config_hash");
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.options.target_first = j.at("target_first");
  r.options.target_count = j.at("target_count");
  r.options.kde_grid_points = j.at("kde_grid_points");
  r.options.mmd_per_step = j.at("mmd_per_step");
  r.options.seed = r.seed;
  return r;
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::string table_header() { return "dataset,MISE,TD,MSE,MMD"; }

inline std::string table_row(const std::string& dataset, const MetricsReport& r) {
  return dataset + "," + format_double(r.mise) + "," + format_double(r.td) + "," + format_double(r.mse) + "," +
         format_double(r.mmd);
}

}  // namespace hgan
