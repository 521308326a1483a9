#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lakeqa/cli.hpp"
#include "lakeqa/config.hpp"
#include "lakeqa/synthetic.hpp"

using namespace lakeqa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lakeqa_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST(Config, RoundTripAndDefaults) {
  AppConfig c;
  c.corpus_dir = "lake";
  c.thresholds.tau_u = 0.8;
  c.retrieval.k = 3;
  c.benchgen.seed = 9;
  const AppConfig back = AppConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(AppConfig::from_json(json::object()).to_json(), AppConfig{}.to_json());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(AppConfig::from_json(json{{"corpus_dri", "x"}}), ConfigError);
  json j = AppConfig{}.to_json();
  j["thresholds"]["tau_u"] = 1.5;
  EXPECT_THROW(AppConfig::from_json(j), ConfigError);
  j = AppConfig{}.to_json();
  j["seed"] = "seven";
  EXPECT_THROW(AppConfig::from_json(j), ConfigError);
  EXPECT_THROW(AppConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"graph", "build"}).code, kExitUsage);  // --out missing
  EXPECT_EQ(run({"answer", "--corpus", "/nonexistent/lake"}).code, kExitUsage);
  EXPECT_EQ(run({"graph", "build", "--corpus", "/nonexistent/lake", "--out", "/tmp/x.json"}).code, kExitInput);
}

TEST(Cli, GraphBuildThenStats) {
  const fs::path dir = fresh_dir("graph");
  save_corpus(synthetic_corpus(3, 15), dir / "lake");
  CliRun r = run({"graph", "build", "--corpus", (dir / "lake").string(), "--out", (dir / "g.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  r = run({"graph", "stats", "--graph", (dir / "g.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("clusters"), std::string::npos);
  const RelationshipGraph g = RelationshipGraph::load(dir / "g.json");
  EXPECT_EQ(g.corpus_hash(), load_corpus(dir / "lake").content_hash());
}

TEST(Cli, BenchmarkAnswerEvalFlow) {
  const fs::path dir = fresh_dir("flow");
  small_seed_database(7).save(dir / "seed");
  save_corpus(synthetic_external_pool(7, 30), dir / "external");
  const std::string bench = (dir / "bench").string();

  CliRun r = run({"benchgen", "--seed-db", (dir / "seed").string(), "--external", (dir / "external").string(), "--out",
               bench, "--seed", "7"});
  ASSERT_EQ(r.code, kExitOk) << r.err << r.out;
  const json summary = json::parse(r.out);
  ASSERT_GT(summary["questions"].get<int>(), 0);
  const std::string questions = (dir / "bench" / "questions.json").string();

  r = run({"graph", "build", "--corpus", bench, "--out", (dir / "g.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;

  const std::string runs = (dir / "runs.json").string();
  r = run({"answer", "--corpus", bench, "--graph", (dir / "g.json").string(), "--gold-plans", questions,
           "--questions", questions, "--k", "3", "--k", "5", "--out", runs});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_runs(runs).size(), 2 * summary["questions"].get<std::size_t>());

  const std::string report = (dir / "report.json").string();
  r = run({"eval", "--pred", runs, "--gold", questions, "--k", "3", "--k", "5", "--graph", (dir / "g.json").string(),
           "--out", report});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json rep = read(report);
  EXPECT_TRUE(rep.contains("overall"));

  // one question with a trace
  const json first = read(questions)["questions"][0];
  const std::string trace = (dir / "trace.json").string();
  r = run({"answer", "--corpus", bench, "--graph", (dir / "g.json").string(), "--gold-plans", questions,
           "--question", first["question"].get<std::string>(), "--trace", trace});
  EXPECT_EQ(r.code, kExitOk) << r.err << r.out;
  EXPECT_TRUE(fs::exists(trace));
  EXPECT_TRUE(json::parse(r.out).contains("answer"));
}

TEST(Cli, StaleGraphIsRejected) {
  const fs::path dir = fresh_dir("stale");
  save_corpus(synthetic_corpus(3, 10), dir / "a");
  save_corpus(synthetic_corpus(4, 10), dir / "b");
  ASSERT_EQ(run({"graph", "build", "--corpus", (dir / "a").string(), "--out", (dir / "g.json").string()}).code, kExitOk);
  const CliRun r = run({"retrieve", "--corpus", (dir / "b").string(), "--graph", (dir / "g.json").string(), "--question",
                     "which employees earn the most"});
  EXPECT_EQ(r.code, kExitInput);
}

TEST(Cli, ArtifactsAreByteIdenticalAcrossRuns) {
  const fs::path dir = fresh_dir("repeat");
  small_seed_database(5).save(dir / "seed");
  save_corpus(synthetic_external_pool(5, 20), dir / "external");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::vector<std::map<std::string, std::string>> outputs;
  for (const std::string run_dir : {"r1", "r2"}) {
    const fs::path out = dir / run_dir;
    ASSERT_EQ(run({"benchgen", "--seed-db", (dir / "seed").string(), "--external", (dir / "external").string(),
                   "--out", out.string(), "--seed", "5"})
                  .code,
              kExitOk);
    ASSERT_EQ(run({"graph", "build", "--corpus", out.string(), "--out", (out / "graph.json").string()}).code, kExitOk);
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(out))
      if (entry.is_regular_file()) files[fs::relative(entry.path(), out).string()] = slurp(entry.path());
    outputs.push_back(std::move(files));
  }
  EXPECT_GT(outputs[0].size(), 5u);
  EXPECT_EQ(outputs[0], outputs[1]);
}
