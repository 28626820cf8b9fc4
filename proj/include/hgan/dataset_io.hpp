#pragma once
// Dataset files: wide CSV (series_id,t0,dt,v0..vK) plus a JSON sidecar, and
// ingestion of external long/wide series into fixed-length windows.

#include <hgan/sde.hpp>

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace hgan {

/// Parse failure carrying a 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// wide CSV

/// Header `series_id,t0,dt,v0,...`, one row per path, shortest round-trip
/// decimal formatting so reading back is bit-exact.
inline void write_paths_csv(std::ostream& os, const PathBatch& paths, std::size_t first_id = 0) {
  os << "series_id,t0,dt";
  for (std::size_t k = 0; k < paths.points(); ++k) os << ",v" << k;
  os << '\n';
  const auto t0 = format_number(paths.grid().t0);
  const auto dt = format_number(paths.grid().dt);
  for (std::size_t i = 0; i < paths.batch_size(); ++i) {
    os << (first_id + i) << ',' << t0 << ',' << dt;
    for (double v : paths.path(i)) os << ',' << format_number(v);
    os << '\n';
  }
}

inline PathBatch read_paths_csv(std::istream& is, const std::string& source = "<csv>") {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source, 1, "empty file");
  const auto header = detail::split_csv(detail::trim(line));
  if (header.size() < 5 || detail::trim(header[0]) != "series_id" || detail::trim(header[1]) != "t0" ||
      detail::trim(header[2]) != "dt") {
    throw ParseError(source, 1, "expected header series_id,t0,dt,v0,...");
  }
  const std::size_t points = header.size() - 3;
  std::vector<double> values;
  std::optional<TimeGrid> grid;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError(source, lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                           std::to_string(fields.size()));
    }
    const auto t0 = detail::parse_double(fields[1]);
    const auto dt = detail::parse_double(fields[2]);
    if (!t0 || !dt || !(*dt > 0.0)) throw ParseError(source, lineno, "bad t0/dt");
    const TimeGrid g{*t0, *dt, points - 1};
    if (!grid) {
      grid = g;
    } else if (!(*grid == g)) {
      throw ParseError(source, lineno, "time grid differs from earlier rows");
    }
    for (std::size_t k = 0; k < points; ++k) {
      const auto v = detail::parse_double(fields[3 + k]);
      if (!v) throw ParseError(source, lineno, "bad value in column v" + std::to_string(k));
      values.push_back(*v);
    }
  }
  if (!grid) throw ParseError(source, lineno, "no data rows");
  PathBatch out(*grid, values.size() / points);
  std::copy(values.begin(), values.end(), out.values().begin());
  return out;
}

inline void save_paths_csv(const std::filesystem::path& file, const PathBatch& paths, std::size_t first_id = 0) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::system_error(errno, std::generic_category(), "cannot write " + file.string());
  write_paths_csv(os, paths, first_id);
  if (!os.flush()) throw std::system_error(errno, std::generic_category(), "write failed: " + file.string());
}

inline PathBatch load_paths_csv(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::system_error(errno, std::generic_category(), "cannot read " + file.string());
  return read_paths_csv(is, file.string());
}

// ---------------------------------------------------------------------------
// generated benchmark datasets

inline constexpr std::size_t kConditioningPoints = 100;
inline constexpr std::size_t kTargetPoints = 50;
inline constexpr std::size_t kBenchmarkTrain = 20000;
inline constexpr std::size_t kBenchmarkTest = 6000;

/// dt = 1 grid with 150 points (100 conditioning + 50 target).
inline TimeGrid benchmark_grid() { return {0.0, 1.0, kConditioningPoints + kTargetPoints - 1}; }

/// Integration substeps per grid interval; the quadratic pull of the
/// polynomial process is stiff at dt = 1.
inline int benchmark_substeps(ProcessKind kind) { return kind == ProcessKind::poly_drift ? 200 : 1; }

struct DatasetMeta {
  std::string source = "generated";  // or "ingested"
  std::optional<ProcessSpec> spec;
  TimeGrid grid = benchmark_grid();
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t conditioning = kConditioningPoints;
  std::size_t target = kTargetPoints;
  Scheme scheme = Scheme::euler_maruyama;
  int substeps = 1;
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json to_json(const DatasetMeta& m) {
  nlohmann::json j;
  j["format"] = "hgan-dataset";
  j["version"] = 1;
  j["source"] = m.source;
  if (m.spec) {
    j["process"] = to_string(m.spec->kind);
    j["params"] = m.spec->params;
    j["x0_mean"] = m.spec->x0_mean;
    j["x0_halfwidth"] = m.spec->x0_halfwidth;
    j["positivity_scheme"] = m.spec->positivity_scheme;
  }
  j["grid"] = {{"t0", m.grid.t0}, {"dt", m.grid.dt}, {"steps", m.grid.steps}};
  j["seed"] = m.seed;
  j["n_train"] = m.n_train;
  j["n_test"] = m.n_test;
  j["split"] = {{"conditioning", m.conditioning}, {"target", m.target}};
  j["scheme"] = to_string(m.scheme);
  j["substeps"] = m.substeps;
  j["extra"] = m.extra;
  return j;
}

inline DatasetMeta dataset_meta_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "hgan-dataset") throw std::invalid_argument("not a dataset sidecar");
  DatasetMeta m;
  m.source = j.at("source").get<std::string>();
  if (j.contains("process")) {
    ProcessSpec s;
    s.kind = parse_process_kind(j.at("process").get<std::string>());
    for (const auto& [k, v] : j.at("params").items()) s.params[k] = v.get<double>();
    s.x0_mean = j.at("x0_mean").get<double>();
    s.x0_halfwidth = j.at("x0_halfwidth").get<double>();
    s.positivity_scheme = j.at("positivity_scheme").get<bool>();
    m.spec = s;
  }
  const auto& g = j.at("grid");
  m.grid = {g.at("t0").get<double>(), g.at("dt").get<double>(), g.at("steps").get<std::size_t>()};
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_train = j.at("n_train").get<std::size_t>();
  m.n_test = j.at("n_test").get<std::size_t>();
  m.conditioning = j.at("split").at("conditioning").get<std::size_t>();
  m.target = j.at("split").at("target").get<std::size_t>();
  m.scheme = parse_scheme(j.at("scheme").get<std::string>());
  m.substeps = j.at("substeps").get<int>();
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

struct Dataset {
  PathBatch train;
  PathBatch test;
  DatasetMeta meta;
};

/// Train rows use path ids [0, n_train), test rows continue after them, so
/// the two sets share no noise.
inline Dataset generate_dataset(ProcessKind kind, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                const TimeGrid& grid = benchmark_grid()) {
  if (n_train == 0 || n_test == 0) throw std::invalid_argument("train and test counts must be positive");
  Dataset d;
  d.meta.spec = benchmark_spec(kind);
  d.meta.grid = grid;
  d.meta.seed = seed;
  d.meta.n_train = n_train;
  d.meta.n_test = n_test;
  d.meta.substeps = benchmark_substeps(kind);
  const SimulationOptions train_opt{.substeps = d.meta.substeps, .first_path = 0};
  const SimulationOptions test_opt{.substeps = d.meta.substeps, .first_path = n_train};
  d.train = simulate(*d.meta.spec, grid, d.meta.scheme, n_train, seed, train_opt);
  d.test = simulate(*d.meta.spec, grid, d.meta.scheme, n_test, seed, test_opt);
  return d;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  save_paths_csv(dir / "train.csv", d.train);
  save_paths_csv(dir / "test.csv", d.test, d.meta.n_train);
  std::ofstream os(dir / "dataset.json", std::ios::binary);
  if (!os) throw std::system_error(errno, std::generic_category(), "cannot write dataset.json");
  os << to_json(d.meta).dump(2) << '\n';
}

/// Reads train.csv, test.csv and dataset.json from a directory.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::system_error(std::make_error_code(std::errc::no_such_file_or_directory),
                            "dataset directory not found: " + dir.string());
  }
  Dataset d;
  d.train = load_paths_csv(dir / "train.csv");
  d.test = load_paths_csv(dir / "test.csv");
  std::ifstream is(dir / "dataset.json");
  if (!is) throw std::system_error(errno, std::generic_category(), "cannot read dataset.json");
  d.meta = dataset_meta_from_json(nlohmann::json::parse(is));
  if (!(d.train.grid() == d.test.grid())) throw std::invalid_argument("train and test grids differ");
  return d;
}

// ---------------------------------------------------------------------------
// ingestion

enum class IngestSchema { long_format, wide };
enum class MissingPolicy { forward_fill, drop_series };

inline IngestSchema parse_ingest_schema(std::string_view s) {
  if (s == "long") return IngestSchema::long_format;
  if (s == "wide") return IngestSchema::wide;
  throw std::invalid_argument("unknown schema '" + std::string(s) + "' (long, wide)");
}

inline MissingPolicy parse_missing_policy(std::string_view s) {
  if (s == "forward_fill") return MissingPolicy::forward_fill;
  if (s == "drop_series") return MissingPolicy::drop_series;
  throw std::invalid_argument("unknown missing policy '" + std::string(s) + "' (forward_fill, drop_series)");
}

struct IngestOptions {
  IngestSchema schema = IngestSchema::wide;
  MissingPolicy missing = MissingPolicy::forward_fill;
  std::size_t window = kConditioningPoints + kTargetPoints;
  std::size_t stride = 50;
  bool standardize = false;
  double dt = 1.0;  // used when the file carries no dt column
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t series_read = 0;
  std::size_t gaps_filled = 0;
  std::size_t series_dropped = 0;  // gaps under drop_series, or all missing
  std::size_t series_too_short = 0;
  std::size_t windows = 0;
  bool standardized = false;
  double mean = 0.0;
  double std = 1.0;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const IngestReport& r) {
  return {{"rows_read", r.rows_read},         {"series_read", r.series_read},
          {"gaps_filled", r.gaps_filled},     {"series_dropped", r.series_dropped},
          {"series_too_short", r.series_too_short}, {"windows", r.windows},
          {"standardized", r.standardized},   {"mean", r.mean},
          {"std", r.std},                     {"warnings", r.warnings}};
}

struct IngestResult {
  PathBatch paths;
  IngestReport report;
};

namespace detail {

struct RawSeries {
  std::string id;
  std::vector<std::optional<double>> values;
  double dt = 1.0;
};

inline std::vector<RawSeries> read_wide(std::istream& is, const std::string& source, const IngestOptions& opt,
                                        IngestReport& rep) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source, 1, "empty file");
  const auto header = split_csv(trim(line));
  if (header.size() < 2 || trim(header[0]) != "series_id") throw ParseError(source, 1, "first column must be series_id");
  std::size_t first_value = 1;
  bool has_grid = false;
  if (header.size() >= 3 && trim(header[1]) == "t0" && trim(header[2]) == "dt") {
    first_value = 3;
    has_grid = true;
  }
  std::vector<RawSeries> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError(source, lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                           std::to_string(f.size()));
    }
    ++rep.rows_read;
    RawSeries s;
    s.id = std::string(trim(f[0]));
    s.dt = opt.dt;
    if (has_grid) {
      const auto dt = parse_double(f[2]);
      if (!dt || !(*dt > 0.0)) throw ParseError(source, lineno, "bad dt");
      s.dt = *dt;
    }
    for (std::size_t c = first_value; c < f.size(); ++c) {
      if (is_missing(f[c])) {
        s.values.emplace_back();
        continue;
      }
      const auto v = parse_double(f[c]);
      if (!v) throw ParseError(source, lineno, "malformed value '" + std::string(trim(f[c])) + "'");
      s.values.emplace_back(*v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Long rows `series_id,t,value`, grouped by id in order of first appearance;
/// t must increase within a series.
inline std::vector<RawSeries> read_long(std::istream& is, const std::string& source, const IngestOptions& opt,
                                        IngestReport& rep) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source, 1, "empty file");
  const auto header = split_csv(trim(line));
  if (header.size() != 3 || trim(header[0]) != "series_id") {
    throw ParseError(source, 1, "expected header series_id,t,value");
  }
  std::vector<RawSeries> out;
  std::vector<double> last_t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw ParseError(source, lineno, "expected 3 fields, got " + std::to_string(f.size()));
    ++rep.rows_read;
    const std::string id(trim(f[0]));
    const auto t = parse_double(f[1]);
    if (!t) throw ParseError(source, lineno, "malformed time '" + std::string(trim(f[1])) + "'");
    std::optional<double> v;
    if (!is_missing(f[2])) {
      v = parse_double(f[2]);
      if (!v) throw ParseError(source, lineno, "malformed value '" + std::string(trim(f[2])) + "'");
    }
    std::size_t idx = out.size();
    for (std::size_t s = out.size(); s-- > 0;) {
      if (out[s].id == id) {
        idx = s;
        break;
      }
    }
    if (idx == out.size()) {
      out.push_back({id, {}, opt.dt});
      last_t.push_back(-INFINITY);
    }
    if (!(*t > last_t[idx])) throw ParseError(source, lineno, "time does not increase within series " + id);
    last_t[idx] = *t;
    out[idx].values.push_back(v);
  }
  return out;
}

}  // namespace detail

/// Parses external series, resolves gaps per policy and cuts sliding windows.
/// Leading gaps under forward_fill take the first observed value.
inline IngestResult ingest_csv(std::istream& is, const IngestOptions& opt, const std::string& source = "<csv>") {
  if (opt.window < 2) throw std::invalid_argument("window must be at least 2");
  if (opt.stride < 1) throw std::invalid_argument("stride must be at least 1");
  IngestReport rep;
  auto raw = opt.schema == IngestSchema::wide ? detail::read_wide(is, source, opt, rep)
                                              : detail::read_long(is, source, opt, rep);
  rep.series_read = raw.size();
  std::vector<std::vector<double>> windows;
  std::optional<double> dt;
  for (auto& s : raw) {
    std::size_t gaps = 0;
    std::optional<double> first;
    for (const auto& v : s.values) {
      if (!v) ++gaps;
      else if (!first) first = v;
    }
    if (!first) {
      ++rep.series_dropped;
      rep.warnings.push_back("series " + s.id + " has no observed values; dropped");
      continue;
    }
    if (gaps > 0 && opt.missing == MissingPolicy::drop_series) {
      ++rep.series_dropped;
      continue;
    }
    std::vector<double> filled(s.values.size());
    double prev = *first;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      if (s.values[k]) prev = *s.values[k];
      filled[k] = prev;
    }
    rep.gaps_filled += gaps;
    if (filled.size() < opt.window) {
      ++rep.series_too_short;
      rep.warnings.push_back("series " + s.id + " is shorter than the window; skipped");
      continue;
    }
    if (dt && *dt != s.dt) throw std::invalid_argument("series " + s.id + " has a different dt");
    dt = s.dt;
    for (std::size_t start = 0; start + opt.window <= filled.size(); start += opt.stride) {
      windows.emplace_back(filled.begin() + static_cast<std::ptrdiff_t>(start),
                           filled.begin() + static_cast<std::ptrdiff_t>(start + opt.window));
    }
  }
  if (windows.empty()) throw std::invalid_argument(source + ": no complete windows after ingestion");
  rep.windows = windows.size();
  PathBatch out({0.0, *dt, opt.window - 1}, windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) std::copy(windows[i].begin(), windows[i].end(), out.path(i).begin());
  if (opt.standardize) {
    double sum = 0.0, sq = 0.0;
    for (double v : out.values()) sum += v;
    const double n = static_cast<double>(out.values().size());
    rep.mean = sum / n;
    for (double v : out.values()) sq += (v - rep.mean) * (v - rep.mean);
    rep.std = std::sqrt(sq / n);
    if (!(rep.std > 0.0)) throw std::invalid_argument("cannot standardize constant data");
    for (double& v : out.values()) v = (v - rep.mean) / rep.std;
    rep.standardized = true;
  }
  return {std::move(out), std::move(rep)};
}

}  // namespace hgan
