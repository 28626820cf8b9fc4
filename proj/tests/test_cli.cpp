#include <hgan/cli.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

using namespace hgan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hgan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("hgan_cli_" + std::to_string(::getpid()) + "_" +
                                         ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string p(const std::string& rel) const { return (root_ / rel).string(); }

  // desk-sized OU dataset shared by the training tests
  std::string small_dataset() {
    const auto dir = p("ou");
    if (!fs::exists(dir)) {
      const auto r = run_cli({"gen-data", "ou", "--train", "240", "--test", "120", "--seed", "3", "--out", dir});
      EXPECT_EQ(r.code, 0) << r.err;
    }
    return dir;
  }

  std::string small_config(const std::string& extra = "") {
    const auto file = p("desk.cfg");
    cli::write_text(file, "# tiny run\ndataset = " + small_dataset() +
                              "\ntotal_gen_steps = 4\nbatch_size = 16\ncritic_steps_per_gen = 2\n"
                              "gen_hidden = 8\ndisc_hidden = 16\nlatent_dim = 3\neval_every = 2\n"
                              "validation_paths = 100\n" + extra);
    return file;
  }

  fs::path root_;
};

bool no_staging_left(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().rfind(".staging-", 0) == 0) return false;
  }
  return true;
}

}  // namespace

TEST(CliConfig, ParsesKeysCommentsAndWhitespace) {
  std::istringstream is("# comment\n gen_lr = 0.001  # trailing\nscheme=euler_maruyama\nconditional = true\n\n"
                        "dataset = data/ou\nhermite_order=6\n");
  const auto rc = cli::parse_config(is);
  EXPECT_EQ(rc.train.gen_lr, 0.001);
  EXPECT_EQ(rc.train.scheme, Scheme::euler_maruyama);
  EXPECT_TRUE(rc.train.conditional);
  EXPECT_EQ(rc.dataset, "data/ou");
  EXPECT_EQ(rc.train.hermite_order, 6);
  EXPECT_EQ(rc.train.batch_size, TrainConfig{}.batch_size);
}

TEST(CliConfig, ErrorsNameTheFieldAndLine) {
  auto message = [](const std::string& text) {
    std::istringstream is(text);
    try {
      (void)cli::parse_config(is, "run.cfg");
    } catch (const cli::UsageError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("seed=1\nbatch_sise=3\n").find("run.cfg:2: unknown config field 'batch_sise'"), std::string::npos);
  EXPECT_NE(message("gen_lr = fast\n").find("'gen_lr'"), std::string::npos);
  EXPECT_NE(message("hermite_order = 40\n").find("'hermite_order'"), std::string::npos);
  EXPECT_NE(message("just words\n").find("run.cfg:1"), std::string::npos);
}

TEST(CliConfig, CanonicalConfigParsesBack) {
  TrainConfig c;
  c.seed = 77;
  c.gen_lr = 3e-4;
  c.conditional = true;
  std::istringstream is(canonical_config(c));
  EXPECT_EQ(canonical_config(cli::parse_config(is).train), canonical_config(c));
}

TEST(CliConfig, OrderLists) {
  EXPECT_EQ(cli::parse_order_list("4"), (std::vector<int>{4}));
  EXPECT_EQ(cli::parse_order_list("1,2,3,4,6"), (std::vector<int>{1, 2, 3, 4, 6}));
  EXPECT_EQ(cli::parse_order_list("1..6"), (std::vector<int>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(cli::parse_order_list("2-4"), (std::vector<int>{2, 3, 4}));
  EXPECT_THROW((void)cli::parse_order_list("0"), cli::UsageError);
  EXPECT_THROW((void)cli::parse_order_list("5..2"), cli::UsageError);
  EXPECT_THROW((void)cli::parse_order_list("x"), cli::UsageError);
}

TEST_F(CliTest, GenDataWritesDeskDatasetDeterministically) {
  const auto a = run_cli({"gen-data", "ou", "--train", "200", "--test", "60", "--seed", "5", "--out", p("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run_cli({"gen-data", "ou", "--train", "200", "--test", "60", "--seed", "5", "--out", p("b")});
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"train.csv", "test.csv", "dataset.json"}) {
    EXPECT_EQ(cli::read_text(p(std::string("a/") + f)), cli::read_text(p(std::string("b/") + f))) << f;
  }
  const auto d = load_dataset(p("a"));
  EXPECT_EQ(d.train.batch_size(), 200u);
  EXPECT_EQ(d.test.batch_size(), 60u);
  EXPECT_EQ(d.train.points(), 150u);
  const auto manifest = nlohmann::json::parse(cli::read_text(p("a/manifest.json")));
  EXPECT_EQ(manifest.at("command"), "gen-data");
  EXPECT_EQ(manifest.at("files").size(), 3u);
  EXPECT_TRUE(no_staging_left(root_));
}

TEST_F(CliTest, GenDataErrors) {
  const auto bad = run_cli({"gen-data", "heston", "--out", p("x")});
  EXPECT_EQ(bad.code, cli::kUsage);
  EXPECT_NE(bad.err.find("heston"), std::string::npos);
  EXPECT_FALSE(fs::exists(p("x")));
  EXPECT_EQ(run_cli({"gen-data"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({}).code, cli::kUsage);
}

TEST_F(CliTest, RefusesToOverwriteWithoutForce) {
  const std::vector<std::string> args{"gen-data", "gbm", "--train", "10", "--test", "5", "--out", p("g")};
  ASSERT_EQ(run_cli(args).code, 0);
  const auto again = run_cli(args);
  EXPECT_EQ(again.code, cli::kIo);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  auto forced = args;
  forced.push_back("--force");
  EXPECT_EQ(run_cli(forced).code, 0);
  EXPECT_TRUE(fs::exists(p("g/manifest.json")));
}

TEST_F(CliTest, TrainMissingDatasetLeavesNothing) {
  cli::write_text(p("bad.cfg"), "dataset = " + p("nowhere") + "\n");
  const auto r = run_cli({"train", "--config", p("bad.cfg"), "--out", p("run")});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(p("run")));
  EXPECT_FALSE(fs::exists(p(".hgan-quarantine")));
  EXPECT_TRUE(no_staging_left(root_));
}

TEST_F(CliTest, TrainConfigErrorIsUsage) {
  cli::write_text(p("bad.cfg"), "dataset = x\nlearning_rate = 1\n");
  const auto r = run_cli({"train", "--config", p("bad.cfg"), "--out", p("run")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
  EXPECT_EQ(run_cli({"train", "--config", p("absent.cfg"), "--out", p("run")}).code, cli::kIo);
}

TEST_F(CliTest, TrainWritesArtifactsAndReproduces) {
  const auto cfg = small_config();
  const auto a = run_cli({"train", "--config", cfg, "--out", p("r1")});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run_cli({"train", "--config", cfg, "--out", p("r2")});
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"train_log.jsonl", "checkpoint_final.json", "checkpoint_best.json", "test_metrics.json",
                        "config.cfg"}) {
    ASSERT_TRUE(fs::exists(p(std::string("r1/") + f))) << f;
    EXPECT_EQ(cli::read_text(p(std::string("r1/") + f)), cli::read_text(p(std::string("r2/") + f))) << f;
  }
  const auto log = cli::read_text(p("r1/train_log.jsonl"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  EXPECT_EQ(log.find("wall_ms"), std::string::npos);
  const auto report = metrics_from_json(nlohmann::json::parse(cli::read_text(p("r1/test_metrics.json"))));
  EXPECT_TRUE(report.all_finite());
  EXPECT_EQ(report.n_real, 120u);
}

TEST_F(CliTest, SeedFlagOverridesConfig) {
  const auto cfg = small_config("total_gen_steps = 1\n");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", p("s1"), "--seed", "9"}).code, 0);
  const auto m = nlohmann::json::parse(cli::read_text(p("s1/manifest.json")));
  EXPECT_EQ(m.at("seed"), 9);
  EXPECT_NE(cli::read_text(p("s1/config.cfg")).find("seed=9\n"), std::string::npos);
}

TEST_F(CliTest, HermiteOrderRangeGivesOneRunPerOrder) {
  const auto cfg = small_config("total_gen_steps = 2\n");
  const auto r = run_cli({"train", "--config", cfg, "--out", p("sweep"), "--hermite-order", "1..3", "--workers", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (int n = 1; n <= 3; ++n) {
    const auto dir = p("sweep/order_" + std::to_string(n));
    ASSERT_TRUE(fs::exists(dir + "/checkpoint_final.json"));
    const auto ck = nlohmann::json::parse(cli::read_text(dir + "/checkpoint_final.json"));
    EXPECT_EQ(ck.at("discriminator").at("order"), n);
  }
  const auto csv = cli::read_text(p("sweep/mise_vs_order.csv"));
  EXPECT_EQ(csv.rfind("order,MISE,TD,MSE,MMD,best_step\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(p("sweep/manifest.json")));
  EXPECT_FALSE(fs::exists(p("sweep/order_1/manifest.json")));
}

TEST_F(CliTest, EvaluateIsDeterministicAndChecksGrids) {
  const auto cfg = small_config("total_gen_steps = 2\n");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", p("run")}).code, 0);
  const auto ck = p("run/checkpoint_final.json");
  const auto e1 = run_cli({"evaluate", "--checkpoint", ck, "--data", small_dataset(), "--out", p("e1")});
  ASSERT_EQ(e1.code, 0) << e1.err;
  const auto e2 = run_cli({"evaluate", "--checkpoint", ck, "--data", small_dataset(), "--out", p("e2")});
  ASSERT_EQ(e2.code, 0);
  EXPECT_EQ(cli::read_text(p("e1/report.json")), cli::read_text(p("e2/report.json")));
  EXPECT_EQ(cli::read_text(p("e1/table.csv")).rfind("dataset,MISE,TD,MSE,MMD\nou,", 0), 0u);
  EXPECT_TRUE(fs::exists(p("e1/density.csv")));
  // a different seed changes the sample
  const auto e3 = run_cli({"evaluate", "--checkpoint", ck, "--data", small_dataset(), "--out", p("e3"), "--seed", "1"});
  ASSERT_EQ(e3.code, 0);
  EXPECT_NE(cli::read_text(p("e1/report.json")), cli::read_text(p("e3/report.json")));

  PathBatch short_grid({0.0, 1.0, 99}, 120);
  save_paths_csv(p("short.csv"), short_grid);
  const auto bad = run_cli({"evaluate", "--checkpoint", ck, "--data", p("short.csv"), "--out", p("e4")});
  EXPECT_EQ(bad.code, cli::kUsage);
  EXPECT_NE(bad.err.find("grid"), std::string::npos);
  EXPECT_FALSE(fs::exists(p("e4")));

  cli::write_text(p("junk.json"), "{not json");
  EXPECT_EQ(run_cli({"evaluate", "--checkpoint", p("junk.json"), "--data", small_dataset(), "--out", p("e5")}).code,
            cli::kIo);
}

TEST_F(CliTest, IngestedStockFileEvaluatesEndToEnd) {
  // synthetic stand-in for a price file in long format with two gaps
  std::string csv = "series_id,t,value\n";
  double price = 20.0;
  for (int t = 0; t < 3000; ++t) {
    price += 0.05 * normal_at(1, 0, static_cast<std::uint64_t>(t), Stream::probe) + 0.01 * (22.0 - price);
    csv += "AAL," + std::to_string(t) + "," + ((t == 17 || t == 901) ? std::string("") : format_number(price)) + "\n";
  }
  cli::write_text(p("stock.csv"), csv);
  const auto in = run_cli({"ingest", "--input", p("stock.csv"), "--schema", "long", "--stride", "5", "--out", p("stock")});
  ASSERT_EQ(in.code, 0) << in.err;
  EXPECT_NE(in.out.find("gaps_filled=2"), std::string::npos);
  const auto rep = nlohmann::json::parse(cli::read_text(p("stock/ingest_report.json")));
  EXPECT_EQ(rep.at("gaps_filled"), 2);
  EXPECT_EQ(rep.at("windows"), 571);
  const auto d = load_dataset(p("stock"));
  EXPECT_EQ(d.meta.source, "ingested");
  EXPECT_EQ(d.test.batch_size(), 114u);

  const auto cfg = small_config("total_gen_steps = 2\n");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", p("run")}).code, 0);
  const auto ev = run_cli({"evaluate", "--checkpoint", p("run/checkpoint_final.json"), "--data", p("stock"), "--out",
                           p("ev"), "--name", "AAL"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("\nAAL,"), std::string::npos);
}

TEST_F(CliTest, IngestErrorsCarryLineNumbers) {
  cli::write_text(p("bad.csv"), "series_id,t,value\na,0,1\na,1,oops\n");
  const auto r = run_cli({"ingest", "--input", p("bad.csv"), "--schema", "long", "--out", p("x")});
  EXPECT_EQ(r.code, cli::kIo);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos);
  EXPECT_FALSE(fs::exists(p("x")));
  EXPECT_EQ(run_cli({"ingest", "--input", p("bad.csv"), "--schema", "tall", "--out", p("x")}).code, cli::kUsage);
}

TEST(CliSelftest, PassesAndDetectsCorruptedNorm) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ok = run_cli({"selftest"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(std::count(ok.out.begin(), ok.out.end(), '\n'), 7);
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  EXPECT_LT(secs, 60.0);
  const auto again = run_cli({"selftest"});
  EXPECT_EQ(again.out, ok.out);

  const auto bad = run_cli({"selftest", "--corrupt-norm"});
  EXPECT_EQ(bad.code, cli::kNumerical);
  EXPECT_NE(bad.out.find("FAIL orthonormality"), std::string::npos);
}

TEST(CliBinary, HelpAndUsageExitCodes) {
  const std::string bin = HGAN_CLI_PATH;
  auto code = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(code("--help"), 0);
  EXPECT_EQ(code(""), 1);
  EXPECT_EQ(code("frobnicate"), 1);
  EXPECT_EQ(code("selftest --corrupt-norm"), 2);
}
