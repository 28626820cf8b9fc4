#pragma once
// Command-line front end: gen-data, train, evaluate, selftest, ingest, sweep.
// Every command writes into a staging directory and renames it into place on
// success; failed runs are moved under <parent>/.hgan-quarantine.

#include <hgan/dataset_io.hpp>
#include <hgan/metrics.hpp>
#include <hgan/selftest.hpp>
#include <hgan/training.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#ifndef HGAN_BUILD_ID
#define HGAN_BUILD_ID "unknown"
#endif

namespace hgan::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AbortError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// config files

/// TrainConfig plus the fields only the CLI needs.
struct RunConfig {
  TrainConfig train;
  std::string dataset;         // directory written by gen-data or ingest
  std::size_t train_paths = 0; // 0 = use every training row
};

namespace detail {

template <class T>
T parse_number(const std::string& key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw UsageError("config field '" + key + "' has invalid value '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw UsageError("config field '" + key + "' must be true or false");
}

inline void set_field(RunConfig& rc, const std::string& key, const std::string& value) {
  auto& c = rc.train;
  using ull = unsigned long long;
  if (key == "dataset") rc.dataset = value;
  else if (key == "train_paths") rc.train_paths = parse_number<ull>(key, value);
  else if (key == "gen_lr") c.gen_lr = parse_number<double>(key, value);
  else if (key == "disc_lr") c.disc_lr = parse_number<double>(key, value);
  else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, value);
  else if (key == "critic_steps_per_gen") c.critic_steps_per_gen = parse_number<int>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<ull>(key, value);
  else if (key == "total_gen_steps") c.total_gen_steps = parse_number<ull>(key, value);
  else if (key == "penalty_weight") c.penalty_weight = parse_number<double>(key, value);
  else if (key == "seed") c.seed = parse_number<ull>(key, value);
  else if (key == "hermite_order") c.hermite_order = parse_number<int>(key, value);
  else if (key == "eval_every") c.eval_every = parse_number<ull>(key, value);
  else if (key == "validation_paths") c.validation_paths = parse_number<ull>(key, value);
  else if (key == "max_consecutive_skips") c.max_consecutive_skips = parse_number<ull>(key, value);
  else if (key == "latent_dim") c.latent_dim = parse_number<int>(key, value);
  else if (key == "gen_hidden") c.gen_hidden = parse_number<int>(key, value);
  else if (key == "gen_layers") c.gen_layers = parse_number<int>(key, value);
  else if (key == "disc_hidden") c.disc_hidden = parse_number<int>(key, value);
  else if (key == "disc_layers") c.disc_layers = parse_number<int>(key, value);
  else if (key == "scheme") {
    try {
      c.scheme = parse_scheme(value);
    } catch (const std::invalid_argument&) {
      throw UsageError("config field 'scheme' has invalid value '" + value + "'");
    }
  } else if (key == "conditional") c.conditional = parse_bool(key, value);
  else if (key == "target_first") c.target_first = parse_number<ull>(key, value);
  else if (key == "target_count") c.target_count = parse_number<ull>(key, value);
  else throw UsageError("unknown config field '" + key + "'");
}

}  // namespace detail

/// Flat `key = value` lines; `#` starts a comment. Unknown keys and bad
/// values are errors naming the field and line.
inline RunConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  RunConfig rc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = hgan::detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key(hgan::detail::trim(body.substr(0, eq)));
    const std::string value(hgan::detail::trim(body.substr(eq + 1)));
    try {
      detail::set_field(rc, key, value);
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(source + ": " + e.what());
  }
  return rc;
}

inline RunConfig load_config(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read config " + file.string());
  return parse_config(is, file.string());
}

/// Accepts "4", "1,2,3,4,6", "1..6" or "1-6".
inline std::vector<int> parse_order_list(const std::string& text) {
  std::vector<int> out;
  auto to_int = [&](std::string_view s) {
    s = hgan::detail::trim(s);
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw UsageError("invalid --hermite-order '" + text + "'");
    }
    return v;
  };
  for (auto part : hgan::detail::split_csv(text)) {
    std::size_t sep = part.find("..");
    std::size_t width = 2;
    if (sep == std::string_view::npos) {
      sep = part.find('-', 1);
      width = 1;
    }
    if (sep != std::string_view::npos) {
      const int lo = to_int(part.substr(0, sep));
      const int hi = to_int(part.substr(sep + width));
      if (lo > hi) throw UsageError("empty --hermite-order range '" + text + "'");
      for (int n = lo; n <= hi; ++n) out.push_back(n);
    } else {
      out.push_back(to_int(part));
    }
  }
  for (int n : out) {
    if (n < 1 || n > kMaxDiscriminatorOrder) throw UsageError("--hermite-order values must be in 1..12");
  }
  if (out.empty()) throw UsageError("empty --hermite-order");
  return out;
}

// ---------------------------------------------------------------------------
// output handling

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot write " + file.string());
  os << text;
  if (!os.flush()) throw IoError("write failed: " + file.string());
}

inline std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Stages output next to its destination and moves it into place on commit.
class OutputDir {
 public:
  OutputDir(fs::path dest, bool force) : dest_(fs::absolute(std::move(dest)).lexically_normal()), force_(force) {
    if (dest_.filename().empty()) dest_ = dest_.parent_path();
    if (fs::exists(dest_) && !force_) {
      throw IoError("output directory " + dest_.string() + " exists (use --force to overwrite)");
    }
    std::error_code ec;
    fs::create_directories(dest_.parent_path(), ec);
    staging_ = dest_.parent_path() / (".staging-" + dest_.filename().string() + "-" + std::to_string(::getpid()));
    fs::remove_all(staging_, ec);
    if (!fs::create_directories(staging_, ec) || ec) throw IoError("cannot create " + staging_.string());
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (committed_) return;
    std::error_code ec;
    quarantine_ = dest_.parent_path() / ".hgan-quarantine" /
                  (dest_.filename().string() + "-" + std::to_string(::getpid()));
    fs::create_directories(quarantine_.parent_path(), ec);
    fs::remove_all(quarantine_, ec);
    fs::rename(staging_, quarantine_, ec);
    if (ec) fs::remove_all(staging_, ec);
  }

  [[nodiscard]] const fs::path& path() const { return staging_; }
  [[nodiscard]] const fs::path& dest() const { return dest_; }
  [[nodiscard]] fs::path quarantine_path() const {
    return dest_.parent_path() / ".hgan-quarantine" / (dest_.filename().string() + "-" + std::to_string(::getpid()));
  }

  void commit() {
    std::error_code ec;
    if (fs::exists(dest_)) {
      if (!force_) throw IoError("output directory " + dest_.string() + " appeared during the run");
      fs::remove_all(dest_, ec);
      if (ec) throw IoError("cannot replace " + dest_.string() + ": " + ec.message());
    }
    fs::rename(staging_, dest_, ec);
    if (ec) throw IoError("cannot move output into " + dest_.string() + ": " + ec.message());
    committed_ = true;
  }

 private:
  fs::path dest_;
  fs::path staging_;
  fs::path quarantine_;
  bool force_ = false;
  bool committed_ = false;
};

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string started_at;
};

/// One manifest per output directory, listing content hashes of every other
/// file it holds (recursively).
inline void write_manifest(const fs::path& dir, const Manifest& m) {
  nlohmann::json files = nlohmann::json::object();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) files[fs::relative(p, dir).generic_string()] = hex64(fnv1a(read_text(p)));
  const nlohmann::json j{{"format", "hgan-manifest"},
                         {"command", m.command},
                         {"args", m.args},
                         {"config", m.config_path},
                         {"seed", m.seed},
                         {"build", HGAN_BUILD_ID},
                         {"output_dir", m.output_dir},
                         {"started_at", m.started_at},
                         {"finished_at", utc_now()},
                         {"files", files}};
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// commands

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> args;
};

inline int cmd_gen_data(Context& ctx, const std::string& process, const fs::path& out_dir, std::uint64_t seed,
                        std::size_t n_train, std::size_t n_test, bool force) {
  ProcessKind kind;
  try {
    kind = parse_process_kind(process);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (kind == ProcessKind::neural) throw UsageError("gen-data supports gbm, ou, cir and poly");
  const auto started = utc_now();
  OutputDir out(out_dir, force);
  const auto d = generate_dataset(kind, n_train, n_test, seed);
  save_dataset(out.path(), d);
  write_manifest(out.path(), {"gen-data", ctx.args, "", seed, out.dest().string(), started});
  out.commit();
  ctx.out << "wrote " << n_train << " train and " << n_test << " test paths of " << to_string(kind) << " to "
          << out.dest().string() << "\n";
  return kOk;
}

struct RunSummary {
  int order = 0;
  bool aborted = false;
  std::string abort_reason;
  std::size_t best_step = 0;
  MetricsReport test;
};

/// Trains one configuration into dir; returns the held-out test report of
/// the best-by-validation checkpoint.
inline RunSummary train_one(const RunConfig& rc, const Dataset& data, const fs::path& dir, std::ostream& log,
                            std::mutex& log_mutex) {
  const auto& c = rc.train;
  const PathBatch train_rows =
      rc.train_paths > 0 ? data.train.slice(0, std::min(rc.train_paths, data.train.batch_size())) : data.train;
  auto m = make_model(c, train_rows.grid(), train_rows);
  std::string timing;
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) {
    timing += "{\"step\":" + std::to_string(r.step) + ",\"wall_ms\":" + format_number(r.wall_ms) + "}\n";
    if (r.eval) {
      std::lock_guard lock(log_mutex);
      log << "[order " << c.hermite_order << "] step " << r.step << " W=" << format_double(r.wasserstein)
          << " val_mmd=" << format_double(r.eval->mmd) << " val_mise=" << format_double(r.eval->mise) << "\n";
    }
  };
  const auto res = train(m, train_rows, c, hooks);
  write_text(dir / "config.cfg", "dataset=" + rc.dataset + "\ntrain_paths=" + std::to_string(rc.train_paths) + "\n" +
                                     canonical_config(c));
  write_text(dir / "train_log.jsonl", res.log.to_jsonl(false));
  write_text(dir / "timing.jsonl", timing);
  write_text(dir / "checkpoint_final.json", res.final_checkpoint.dump() + "\n");
  write_text(dir / "checkpoint_best.json", res.best_checkpoint.dump() + "\n");
  RunSummary s;
  s.order = c.hermite_order;
  s.aborted = res.aborted;
  s.abort_reason = res.abort_reason;
  s.best_step = res.best_step;
  if (res.aborted) return s;
  const auto best = model_from_checkpoint(res.best_checkpoint);
  MetricOptions opt{.target_first = c.target_first, .target_count = c.target_count, .seed = eval_seed(c)};
  s.test = evaluate_generator(best.gen, data.test, eval_seed(c), opt, config_hash(c), c.conditional);
  write_text(dir / "test_metrics.json", to_json(s.test).dump(2) + "\n");
  write_text(dir / "test_metrics.csv", table_header() + "\n" + table_row("order_" + std::to_string(s.order), s.test) + "\n");
  return s;
}

/// Runs one job per order, at most `workers` at a time.
inline std::vector<RunSummary> run_orders(Context& ctx, const RunConfig& base, const Dataset& data,
                                          const std::vector<int>& orders, const fs::path& root, bool nested,
                                          int workers) {
  std::vector<RunSummary> results(orders.size());
  std::vector<std::exception_ptr> errors(orders.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < orders.size(); i = next++) {
      try {
        RunConfig rc = base;
        rc.train.hermite_order = orders[i];
        const fs::path dir = nested ? root / ("order_" + std::to_string(orders[i])) : root;
        fs::create_directories(dir);
        results[i] = train_one(rc, data, dir, ctx.out, log_mutex);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(orders.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

inline Dataset load_dataset_checked(const std::string& dir) {
  if (dir.empty()) throw UsageError("config field 'dataset' is required");
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
  try {
    return load_dataset(dir);
  } catch (const ParseError& e) {
    throw IoError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad dataset.json: ") + e.what());
  }
}

inline int train_orders(Context& ctx, const std::string& command, const fs::path& config_path,
                        std::optional<std::uint64_t> seed, const fs::path& out_dir,
                        std::optional<std::string> order_text, std::vector<int> default_orders, int workers,
                        bool force) {
  RunConfig rc = load_config(config_path);
  if (seed) rc.train.seed = *seed;
  std::vector<int> orders = order_text ? parse_order_list(*order_text) : default_orders;
  if (orders.empty()) orders = {rc.train.hermite_order};
  const bool nested = command == "sweep" || orders.size() > 1;
  const auto started = utc_now();
  const auto data = load_dataset_checked(rc.dataset);
  OutputDir out(out_dir, force);
  const auto results = run_orders(ctx, rc, data, orders, out.path(), nested, workers);
  for (const auto& r : results) {
    if (r.aborted) {
      const auto where = out.quarantine_path();
      throw AbortError("training with hermite_order=" + std::to_string(r.order) + " aborted: " + r.abort_reason +
                       " (partial output kept in " + where.string() + ")");
    }
  }
  if (nested) {
    std::string csv = "order,MISE,TD,MSE,MMD,best_step\n";
    for (const auto& r : results) {
      csv += std::to_string(r.order) + "," + format_double(r.test.mise) + "," + format_double(r.test.td) + "," +
             format_double(r.test.mse) + "," + format_double(r.test.mmd) + "," + std::to_string(r.best_step) + "\n";
    }
    write_text(out.path() / "mise_vs_order.csv", csv);
  }
  write_manifest(out.path(), {command, ctx.args, fs::absolute(config_path).string(), rc.train.seed,
                              out.dest().string(), started});
  out.commit();
  for (const auto& r : results) {
    ctx.out << "order " << r.order << ": test MISE=" << format_double(r.test.mise)
            << " TD=" << format_double(r.test.td) << " MSE=" << format_double(r.test.mse)
            << " MMD=" << format_double(r.test.mmd) << "\n";
  }
  ctx.out << "wrote " << out.dest().string() << "\n";
  return kOk;
}

/// KDE curves of real and generated marginals at the first, middle and last
/// target steps, for density-evolution plots.
inline std::string density_csv(const PathBatch& real, const PathBatch& fake, std::size_t first, std::size_t count) {
  std::string csv = "step,x,real,fake\n";
  for (std::size_t k : {first, first + count / 2, first + count - 1}) {
    auto a = real.column(k);
    auto b = fake.column(k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::sort(pooled.begin(), pooled.end());
    const double lo = quantile_sorted(pooled, 0.001);
    const double hi = quantile_sorted(pooled, 0.999);
    Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(200, lo, hi);
    const Eigen::ArrayXd da = kde(a, silverman_bandwidth(a).first, grid);
    const Eigen::ArrayXd db = kde(b, silverman_bandwidth(b).first, grid);
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      csv += std::to_string(k) + "," + format_number(grid[i]) + "," + format_number(da[i]) + "," +
             format_number(db[i]) + "\n";
    }
  }
  return csv;
}

inline int cmd_evaluate(Context& ctx, const fs::path& checkpoint, const fs::path& data_path, const fs::path& out_dir,
                        std::optional<std::uint64_t> seed, std::string name, bool force) {
  nlohmann::json ck;
  try {
    ck = nlohmann::json::parse(read_text(checkpoint));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unreadable checkpoint " + checkpoint.string() + ": " + e.what());
  }
  std::optional<HganModel> model;
  RunConfig rc;
  try {
    model = model_from_checkpoint(ck);
    std::istringstream cfg(ck.at("config").get<std::string>());
    rc = parse_config(cfg, "checkpoint config");
  } catch (const std::exception& e) {
    throw IoError("unreadable checkpoint " + checkpoint.string() + ": " + e.what());
  }
  PathBatch reference;
  try {
    if (fs::is_directory(data_path)) {
      reference = load_dataset(data_path).test;
      if (name.empty()) {
        std::ifstream meta(data_path / "dataset.json");
        const auto j = nlohmann::json::parse(meta);
        name = j.value("process", data_path.filename().string());
      }
    } else {
      reference = load_paths_csv(data_path);
    }
  } catch (const ParseError& e) {
    throw IoError(e.what());
  } catch (const std::system_error& e) {
    throw IoError(e.what());
  }
  if (name.empty()) name = data_path.stem().string();
  if (!(reference.grid() == model->gen.grid())) {
    throw UsageError("dataset grid (" + std::to_string(reference.points()) + " points, dt " +
                     format_number(reference.grid().dt) + ") does not match the checkpoint grid (" +
                     std::to_string(model->gen.grid().points()) + " points, dt " +
                     format_number(model->gen.grid().dt) + ")");
  }
  const auto& c = rc.train;
  const std::uint64_t s = seed ? *seed : eval_seed(c);
  const auto started = utc_now();
  OutputDir out(out_dir, force);
  MetricOptions opt{.target_first = c.target_first, .target_count = c.target_count, .seed = s};
  const auto report = evaluate_generator(model->gen, reference, s, opt, ck.value("config_hash", ""), c.conditional);
  write_text(out.path() / "report.json", to_json(report).dump(2) + "\n");
  write_text(out.path() / "table.csv", table_header() + "\n" + table_row(name, report) + "\n");
  std::optional<Eigen::MatrixXd> cond;
  if (c.conditional) {
    cond = conditioning_context(reference, c.target_first, {model->gen.data_mean(), model->gen.data_std()});
  }
  const auto fake = model->gen.sample(reference.batch_size(), s, false, 0, cond ? &*cond : nullptr).paths;
  write_text(out.path() / "density.csv", density_csv(reference, fake, c.target_first, c.target_count));
  write_manifest(out.path(), {"evaluate", ctx.args, fs::absolute(checkpoint).string(), s, out.dest().string(), started});
  out.commit();
  ctx.out << table_header() << "\n" << table_row(name, report) << "\n";
  for (const auto& w : report.warnings) ctx.err << "warning: " << w << "\n";
  return kOk;
}

inline int cmd_selftest(Context& ctx, bool corrupt_norm) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_selftest({.corrupt_norm = corrupt_norm});
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    ctx.out << (r.passed ? "PASS " : "FAIL ") << r.name << " value=" << format_double(r.value)
            << " tol=" << format_double(r.tolerance) << " (" << r.detail << ")\n";
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.err << "selftest finished in " << format_double(s) << " s\n";
  return ok ? kOk : kNumerical;
}

inline int cmd_ingest(Context& ctx, const fs::path& input, const IngestOptions& opt, double test_fraction,
                      const fs::path& out_dir, bool force) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("--test-fraction must be in (0, 1)");
  std::ifstream is(input, std::ios::binary);
  if (!is) throw IoError("cannot read " + input.string());
  IngestResult r;
  try {
    r = ingest_csv(is, opt, input.string());
  } catch (const ParseError& e) {
    throw IoError(e.what());
  }
  const std::size_t n = r.paths.batch_size();
  // chronological split: the last windows are held out
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(test_fraction * n)));
  if (n_test >= n) throw UsageError("not enough windows (" + std::to_string(n) + ") for a train/test split");
  const auto started = utc_now();
  OutputDir out(out_dir, force);
  Dataset d;
  d.train = r.paths.slice(0, n - n_test);
  d.test = r.paths.slice(n - n_test, n_test);
  d.meta.source = "ingested";
  d.meta.grid = r.paths.grid();
  d.meta.n_train = n - n_test;
  d.meta.n_test = n_test;
  d.meta.conditioning = std::min(kConditioningPoints, opt.window - 1);
  d.meta.target = opt.window - d.meta.conditioning;
  d.meta.extra = {{"input", input.filename().string()},
                  {"schema", opt.schema == IngestSchema::wide ? "wide" : "long"},
                  {"missing_policy", opt.missing == MissingPolicy::forward_fill ? "forward_fill" : "drop_series"},
                  {"window", opt.window},
                  {"stride", opt.stride},
                  {"test_fraction", test_fraction},
                  {"report", to_json(r.report)}};
  save_dataset(out.path(), d);
  write_text(out.path() / "ingest_report.json", to_json(r.report).dump(2) + "\n");
  write_manifest(out.path(), {"ingest", ctx.args, "", 0, out.dest().string(), started});
  out.commit();
  ctx.out << "rows_read=" << r.report.rows_read << " gaps_filled=" << r.report.gaps_filled
          << " series_dropped=" << r.report.series_dropped << " windows=" << r.report.windows << "\n";
  for (const auto& w : r.report.warnings) ctx.err << "warning: " << w << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

/// Entry point; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Context ctx{out, err, {}};
  for (int i = 1; i < argc; ++i) ctx.args.emplace_back(argv[i]);

  CLI::App app{"Neural SDE generator with a Hermite-function discriminator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string out_dir;
  bool force = false;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Simulate a benchmark dataset (gbm, ou, cir, poly)");
  std::string process;
  std::size_t n_train = kBenchmarkTrain, n_test = kBenchmarkTest;
  gen->add_option("process", process, "gbm | ou | cir | poly")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Simulation seed");
  gen->add_option("--train", n_train, "Training paths")->check(CLI::PositiveNumber);
  gen->add_option("--test", n_test, "Test paths")->check(CLI::PositiveNumber);
  gen->add_flag("--force", force, "Overwrite an existing output directory");

  std::string config;
  std::string orders;
  int workers = 1;
  auto* tr = app.add_subcommand("train", "Train from a key=value config");
  tr->add_option("--config", config, "Config file")->required();
  tr->add_option("--out", out_dir, "Output directory")->required();
  auto* tr_seed = tr->add_option("--seed", seed, "Override the config seed");
  auto* tr_orders = tr->add_option("--hermite-order", orders, "Order, list or range (one run per order)");
  tr->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
  tr->add_flag("--force", force, "Overwrite an existing output directory");

  auto* sw = app.add_subcommand("sweep", "Hermite-order ablation; writes mise_vs_order.csv");
  sw->add_option("--config", config, "Config file")->required();
  sw->add_option("--out", out_dir, "Output directory")->required();
  auto* sw_seed = sw->add_option("--seed", seed, "Override the config seed");
  auto* sw_orders = sw->add_option("--hermite-order", orders, "Orders (default 1,2,3,4,6)");
  sw->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
  sw->add_flag("--force", force, "Overwrite an existing output directory");

  std::string checkpoint, data, name;
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint against a dataset's test split or a CSV");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  ev->add_option("--data", data, "Dataset directory or wide CSV")->required();
  ev->add_option("--out", out_dir, "Output directory")->required();
  auto* ev_seed = ev->add_option("--seed", seed, "Sampling seed (default derived from the config)");
  ev->add_option("--name", name, "Row label in table.csv");
  ev->add_flag("--force", force, "Overwrite an existing output directory");

  bool corrupt = false;
  auto* st = app.add_subcommand("selftest", "Run built-in numerical checks");
  st->add_flag("--corrupt-norm", corrupt)->group("");  // fault injection, hidden

  std::string input, schema = "wide", missing = "forward_fill";
  IngestOptions iopt;
  double test_fraction = 0.2;
  auto* in = app.add_subcommand("ingest", "Cut external series into fixed-length windows");
  in->add_option("--input", input, "CSV file")->required();
  in->add_option("--schema", schema, "long (series_id,t,value) | wide (series_id,v0,...)");
  in->add_option("--missing", missing, "forward_fill | drop_series");
  in->add_option("--window", iopt.window, "Window length");
  in->add_option("--stride", iopt.stride, "Window stride");
  in->add_option("--dt", iopt.dt, "Time step when the file has none");
  in->add_flag("--standardize", iopt.standardize, "Standardize with the global mean/std");
  in->add_option("--test-fraction", test_fraction, "Fraction of windows (latest) held out");
  in->add_option("--out", out_dir, "Output directory")->required();
  in->add_flag("--force", force, "Overwrite an existing output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ctx, process, out_dir, seed, n_train, n_test, force);
    if (tr->parsed()) {
      return train_orders(ctx, "train", config, tr_seed->count() ? std::optional(seed) : std::nullopt, out_dir,
                          tr_orders->count() ? std::optional(orders) : std::nullopt, {}, workers, force);
    }
    if (sw->parsed()) {
      return train_orders(ctx, "sweep", config, sw_seed->count() ? std::optional(seed) : std::nullopt, out_dir,
                          sw_orders->count() ? std::optional(orders) : std::nullopt, {1, 2, 3, 4, 6}, workers,
                          force);
    }
    if (ev->parsed()) {
      return cmd_evaluate(ctx, checkpoint, data, out_dir, ev_seed->count() ? std::optional(seed) : std::nullopt,
                          name, force);
    }
    if (st->parsed()) return cmd_selftest(ctx, corrupt);
    if (in->parsed()) {
      iopt.schema = parse_ingest_schema(schema);
      iopt.missing = parse_missing_policy(missing);
      return cmd_ingest(ctx, input, iopt, test_fraction, out_dir, force);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const AbortError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::system_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}

}  // namespace hgan::cli
