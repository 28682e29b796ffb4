#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "gfusion/cli.hpp"
#include "gfusion/metrics.hpp"

namespace gfusion::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Invocation {
  int status;
  std::string out;
  std::string err;
};

Invocation invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = main_entry(args, out, err);
  return {status, out.str(), err.str()};
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gfusion_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void make_data() {
    const auto r = invoke({"synth", "--out", path("d.jsonl"), "--n-train", "120", "--n-val",
                           "40", "--n-test", "40", "--dim", "4", "--snr", "6"});
    ASSERT_EQ(r.status, 0) << r.err;
    std::ofstream(path("c.json"))
        << R"({"shared_dim":16,"proj_dim":8,"batch_size":16,"max_epochs":8,"patience":3,"learning_rate":0.01,"dropout":0.1})";
  }

  fs::path dir_;
};

TEST(Parse, TrainExample) {
  const Command c = parse({"train", "--manifest", "d.jsonl", "--modalities", "t,a", "--config",
                           "c.json", "--out", "run1"});
  EXPECT_EQ(c.verb, Verb::train);
  ASSERT_TRUE(c.modalities.has_value());
  EXPECT_EQ(*c.modalities, ModalitySet::parse("t,a"));
  EXPECT_EQ(c.manifest, "d.jsonl");
  EXPECT_EQ(c.config, "c.json");
  EXPECT_EQ(c.out, "run1");
  EXPECT_FALSE(c.seed.has_value());
}

TEST(Parse, UnknownModality) {
  try {
    parse({"train", "--modalities", "t,x"});
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown modality x"), std::string::npos) << e.what();
  }
}

TEST(Parse, UnknownFlagIsNamed) {
  try {
    parse({"train", "--manifest", "d", "--modalities", "t", "--out", "o", "--epochs", "3"});
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("--epochs"), std::string::npos) << e.what();
  }
}

TEST(Parse, NoArgsListsEveryVerb) {
  const auto r = invoke({});
  EXPECT_NE(r.status, 0);
  for (const char* verb : {"train", "eval", "gridsearch", "score", "synth", "report"}) {
    EXPECT_NE(r.err.find(verb), std::string::npos) << verb;
  }
}

TEST(Parse, OtherVerbs) {
  Command c = parse({"eval", "--manifest", "m", "--checkpoint", "k.gfm", "--out", "o",
                     "--split", "val"});
  EXPECT_EQ(c.verb, Verb::eval);
  EXPECT_EQ(c.split, Split::val);
  EXPECT_FALSE(c.modalities.has_value());
  c = parse({"gridsearch", "--manifest", "m", "--modalities", "v,a", "--out", "o", "--jobs",
             "4", "--checkpoints", "best", "--seed", "9"});
  EXPECT_EQ(c.verb, Verb::gridsearch);
  EXPECT_EQ(c.jobs, 4u);
  EXPECT_EQ(c.checkpoints, CheckpointPolicy::best);
  EXPECT_EQ(c.seed, 9u);
  c = parse({"report", "a", "b", "--format", "csv"});
  EXPECT_EQ(c.runs.size(), 2u);
  EXPECT_EQ(c.format, ReportFormat::csv);
  c = parse({"synth", "--out", "s.jsonl", "--seed", "11"});
  EXPECT_EQ(c.synth.seed, 11u);
  EXPECT_THROW(parse({"score", "--manifest", "m"}), UsageError);
  EXPECT_THROW(parse({"eval", "--manifest", "m", "--checkpoint", "k", "--out", "o", "--split",
                      "dev"}),
               UsageError);
  EXPECT_THROW(parse({"fly"}), UsageError);
}

TEST(Binary, ExitStatusForUsageErrors) {
  const std::string cli = GFUSION_CLI_PATH;
  int status = std::system((cli + " >/dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
  status = std::system((cli + " --help >/dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), 0);
  status = std::system((cli + " train --modalities t,x >/dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST_F(CliRun, SynthTrainEvalReport) {
  make_data();
  auto r = invoke({"train", "--manifest", path("d.jsonl"), "--modalities", "t,a", "--config",
                   path("c.json"), "--out", path("run1"), "--seed", "5"});
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* f : {"config.json", "history.json", "model.gfm", "metrics.json", "run.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run1" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir_ / "run1" / "INCOMPLETE"));

  const auto meta = nlohmann::json::parse(slurp(dir_ / "run1" / "run.json"));
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_EQ(meta["version"], kToolVersion);
  EXPECT_EQ(meta["inputs"]["manifest"]["sha256"].get<std::string>().size(), 64u);
  EXPECT_TRUE(meta["outputs"].contains("model.gfm"));

  r = invoke({"eval", "--manifest", path("d.jsonl"), "--checkpoint", path("run1/model.gfm"),
              "--out", path("ev"), "--modalities", "a,t"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto train_metrics = nlohmann::json::parse(slurp(dir_ / "run1" / "metrics.json"));
  const auto eval_metrics = nlohmann::json::parse(slurp(dir_ / "ev" / "metrics.json"));
  EXPECT_EQ(train_metrics["test"], eval_metrics["test"]);

  r = invoke({"score", "--manifest", path("d.jsonl"), "--predictions",
              path("ev/predictions.jsonl"), "--out", path("score.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("coverage 40/40"), std::string::npos) << r.out;

  r = invoke({"report", path("run1"), path("ev"), "--format", "csv", "--out", path("t.csv")});
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string csv = slurp(dir_ / "t.csv");
  EXPECT_EQ(csv.rfind("experiment,P,R,F1\nev,", 0), 0u) << csv;
  EXPECT_NE(csv.find("\nrun1,"), std::string::npos);
}

TEST_F(CliRun, TrainIsReproducible) {
  make_data();
  for (const char* out : {"a", "b"}) {
    const auto r = invoke({"train", "--manifest", path("d.jsonl"), "--modalities", "t,a",
                           "--config", path("c.json"), "--out", path(out), "--seed", "2"});
    ASSERT_EQ(r.status, 0) << r.err;
  }
  for (const char* f : {"model.gfm", "history.json", "metrics.json", "config.json"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
}

TEST_F(CliRun, EvalRejectsModalityMismatchBeforeInference) {
  make_data();
  ASSERT_EQ(invoke({"train", "--manifest", path("d.jsonl"), "--modalities", "t,a", "--config",
                    path("c.json"), "--out", path("run1")})
                .status,
            0);
  const auto r = invoke({"eval", "--manifest", path("d.jsonl"), "--checkpoint",
                         path("run1/model.gfm"), "--out", path("ev"), "--modalities", "t"});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("do not match"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "ev" / "predictions.jsonl"));
}

TEST_F(CliRun, MissingInputsFailBeforeWork) {
  const auto r = invoke({"train", "--manifest", path("nope.jsonl"), "--modalities", "t",
                         "--out", path("run1")});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("nope.jsonl"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "run1"));
}

TEST_F(CliRun, FailedTrainingLeavesSentinel) {
  make_data();
  std::ofstream(path("bad.json"))
      << R"({"shared_dim":8,"proj_dim":4,"max_epochs":3,"learning_rate":1e308})";
  const auto r = invoke({"train", "--manifest", path("d.jsonl"), "--modalities", "t,a",
                         "--config", path("bad.json"), "--out", path("run1")});
  EXPECT_EQ(r.status, 1);
  EXPECT_TRUE(fs::exists(dir_ / "run1" / "INCOMPLETE"));
  const auto rep = invoke({"report", path("run1")});
  EXPECT_NE(rep.status, 0);
}

TEST_F(CliRun, GridsearchWritesSummary) {
  make_data();
  std::ofstream(path("g.json"))
      << R"({"dropout":[0.0,0.2],"learning_rate":[0.01,0.0],"batch_size":16,"shared_dim":16,"proj_dim":8,"max_epochs":4,"patience":2})";
  auto r = invoke({"gridsearch", "--manifest", path("d.jsonl"), "--modalities", "t,a",
                   "--grid", path("g.json"), "--out", path("gs"), "--jobs", "2"});
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string csv = slurp(dir_ / "gs" / "summary.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  for (int i = 0; i < 4; ++i) {
    const fs::path run = dir_ / "gs" / "runs" / ("00" + std::to_string(i));
    EXPECT_TRUE(fs::exists(run / "model.gfm"));
    EXPECT_TRUE(fs::exists(run / "history.json"));
  }
  EXPECT_TRUE(fs::exists(dir_ / "gs" / "best_model.gfm"));

  r = invoke({"gridsearch", "--manifest", path("d.jsonl"), "--modalities", "t,a", "--grid",
              path("g.json"), "--out", path("gs1"), "--jobs", "1", "--checkpoints", "best"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "gs1" / "runs" / "000" / "model.gfm"));
  // job count does not change any result
  EXPECT_EQ(slurp(dir_ / "gs" / "summary.csv"), slurp(dir_ / "gs1" / "summary.csv"));
  EXPECT_EQ(slurp(dir_ / "gs" / "best_model.gfm"), slurp(dir_ / "gs1" / "best_model.gfm"));
}

}  // namespace
}  // namespace gfusion::cli
