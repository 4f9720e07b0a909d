#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "cli_runner.hpp"
#include "zico/zico.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kSamples = ZICO_SAMPLES_DIR;

std::string sample(const std::string& name) { return kSamples + "/" + name; }

const std::string kTinySearch =
    "search --family resnet_like --strides 1,2 --resolution 4x4 --stem-channels 8 --num-classes 3 "
    "--max-repeats 2 --min-channels 16 --max-channels 32 --channel-step 8 --population 8 --batches 2 "
    "--batch-size 2 --seed 3";

}  // namespace

TEST(CliScore, BetaOnlyMovesZicoBc) {
  const auto a = cli::run("score " + sample("tiny.json") + " --beta 0 --batches 3 --batch-size 2");
  const auto b = cli::run("score " + sample("tiny.json") + " --beta 1 --batches 3 --batch-size 2");
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  const auto ja = json::parse(a.out), jb = json::parse(b.out);
  EXPECT_EQ(ja["zico"], jb["zico"]);
  EXPECT_NE(ja["zico_bc"], jb["zico_bc"]);
  EXPECT_EQ(ja["zico_bc"], ja["zico"]);
}

TEST(CliScore, RepeatableAndSeeded) {
  const std::string args = "score " + sample("resnet_small.json") + " --batches 2 --batch-size 2 --seed 9";
  const auto a = cli::run(args), b = cli::run(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(cli::run("score " + sample("resnet_small.json") + " --batches 2 --batch-size 2 --seed 10").out, a.out);
}

TEST(CliScore, SeedFromEnvironment) {
  const std::string base = "score " + sample("tiny.json") + " --batches 2 --batch-size 2";
  const auto explicit_seed = cli::run(base + " --seed 21");
  const std::string cmd = "ZICO_BC_SEED=21 " + std::string(ZICO_NAS_BIN) + " " + base + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  pclose(p);
  EXPECT_EQ(out, explicit_seed.out);
}

TEST(CliScore, DefaultBetaFollowsFamily) {
  const auto r = json::parse(cli::run("score " + sample("tiny.json") + " --batches 2 --batch-size 2").out);
  EXPECT_EQ(r["beta"], 2.0);
  const auto e = json::parse(cli::run("score " + sample("effnet_small.json") + " --batches 2 --batch-size 2").out);
  EXPECT_EQ(e["beta"], 1.0);
}

TEST(CliScore, NegativeBetaIsAUsageError) {
  const auto dir = cli::scratch("beta");
  const std::string cmd = std::string(ZICO_NAS_BIN) + " score " + sample("tiny.json") + " --beta -1 2>" +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
  EXPECT_NE(cli::slurp(dir / "err").find("beta"), std::string::npos);
  fs::remove_all(dir);
}

TEST(CliScore, BadGenomeIsAUsageError) {
  const auto dir = cli::scratch("bad");
  cli::spit(dir / "g.json", "{\"family\": \"resnet_like\"}");
  EXPECT_EQ(cli::run("score " + (dir / "g.json").string()).code, 2);
  EXPECT_EQ(cli::run("score " + (dir / "missing.json").string()).code, 2);
  EXPECT_EQ(cli::run("frobnicate").code, 2);
  fs::remove_all(dir);
}

TEST(CliScore, OutWritesManifest) {
  const auto dir = cli::scratch("manifest");
  const auto out = dir / "s.json";
  const auto r = cli::run("score " + sample("tiny.json") + " --batches 2 --batch-size 2 --out " + out.string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(cli::slurp(out), r.out);
  const auto m = json::parse(cli::slurp(dir / "s.json.manifest.json"));
  EXPECT_EQ(m["subcommand"], "score");
  EXPECT_EQ(m["config"]["proxy"]["batches"], 2);
  EXPECT_TRUE(m["inputs"].contains(sample("tiny.json")));
  fs::remove_all(dir);
}

TEST(CliLatency, TableHitsReturnEntries) {
  const auto r = cli::run("latency " + sample("tiny.json") + " --table " + sample("tiny_latency.csv"));
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["misses"], 0);
  const std::vector<double> expected{2.5, 4.0, 4.0, 0.5};
  ASSERT_EQ(j["per_layer"].size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(j["per_layer"][i]["us"], expected[i]);
  EXPECT_EQ(j["total_us"], 11.0);
}

TEST(CliLatency, NeedsTableOrFallback) {
  EXPECT_EQ(cli::run("latency " + sample("tiny.json")).code, 2);
  const auto r = cli::run("latency " + sample("tiny.json") + " --fallback-us-per-mac 0.5");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["total_us"].get<double>(), 0.5 * j["macs"].get<double>());
}

TEST(CliPlot, EmptyArchiveIsHeaderOnly) {
  const auto r = cli::run("pareto-plotdata " + sample("empty_archive.json"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "depth,mean_width,score,latency\n");
}

TEST(CliSearch, NoVariationArchiveIsInitialFront) {
  const auto dir = cli::scratch("search");
  const auto r = cli::run(kTinySearch + " --generations 1 --mutation-rate 0 --crossover-rate 0 --log " +
                          (dir / "log.jsonl").string());
  ASSERT_EQ(r.code, 0);
  std::set<std::string> front, archive;
  std::istringstream log(cli::slurp(dir / "log.jsonl"));
  std::string line;
  while (std::getline(log, line)) {
    const auto e = json::parse(line);
    EXPECT_EQ(e["generation"], 0);
    if (e["rank"] == 0) front.insert(e["genome"].dump());
  }
  for (const auto& m : json::parse(r.out)) archive.insert(m["genome"].dump());
  EXPECT_FALSE(archive.empty());
  EXPECT_EQ(archive, front);
  fs::remove_all(dir);
}

TEST(CliSearch, ThreadCountDoesNotChangeOutputs) {
  const auto dir = cli::scratch("threads");
  const std::string args = kTinySearch + " --generations 3";
  ASSERT_EQ(cli::run(args + " --threads 1 --archive " + (dir / "a1.json").string() + " --log " +
                     (dir / "l1.jsonl").string())
                .code,
            0);
  ASSERT_EQ(cli::run(args + " --threads 8 --archive " + (dir / "a8.json").string() + " --log " +
                     (dir / "l8.jsonl").string())
                .code,
            0);
  EXPECT_EQ(cli::slurp(dir / "a1.json"), cli::slurp(dir / "a8.json"));
  EXPECT_EQ(cli::slurp(dir / "l1.jsonl"), cli::slurp(dir / "l8.jsonl"));
  const auto plot = cli::run("pareto-plotdata " + (dir / "a1.json").string());
  ASSERT_EQ(plot.code, 0);
  EXPECT_EQ(std::count(plot.out.begin(), plot.out.end(), '\n'), 1 + static_cast<long>(json::parse(cli::slurp(dir / "a1.json")).size()));
  fs::remove_all(dir);
}

TEST(CliCorrelate, PlantedMonotoneSuiteGivesTauOne) {
  const auto dir = cli::scratch("corr");
  zico::ProxyConfig cfg;
  cfg.seed = 4;
  cfg.batches = 2;
  cfg.batch_size = 2;
  std::string records;
  int id = 0;
  for (int r = 1; r <= 3; ++r)
    for (int c : {16, 32}) {
      zico::Genome g;
      g.stem_channels = 8;
      g.num_classes = 3;
      g.input_height = g.input_width = 4;
      g.stages = {{r, c, 3, zico::ConvMode::regular, 1}};
      const double acc = 60.0 + std::tanh(zico::evaluate_genome(g, cfg).zico_bc / 100.0) * 30.0;
      records += json{{"id", "n" + std::to_string(id++)}, {"genome", zico::to_json(g)}, {"test_accuracy", acc}}.dump() +
                 "\n";
    }
  cli::spit(dir / "records.jsonl", records);
  const auto r = cli::run("correlate --records " + (dir / "records.jsonl").string() +
                          " --seed 4 --batches 2 --batch-size 2 --beta 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["tau"], 1.0);
  EXPECT_EQ(j["n"], 6);
  fs::remove_all(dir);
}
