#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "dpil/harness.hpp"

namespace dpil::harness {
namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("dpil_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

bool has_error(const ConfigResult& r, const std::string& prefix) {
  return std::any_of(r.errors.begin(), r.errors.end(), [&](const std::string& e) { return e.rfind(prefix, 0) == 0; });
}

/// A few-second end-to-end config covering every stage.
Json tiny_config(const fs::path& out) {
  Json j = Json::parse(R"({
    "seed": 3,
    "demos": {"deltas": [0.6, 0.25], "mixed": true, "optimal_pool": 200, "optimal_transitions": 30,
              "noisy_transitions": 60, "checkpoint_fractions": [0.5],
              "rl": {"iterations": 4, "episodes_per_iter": 2, "hidden": [8]}},
    "diffusion": {"steps": 20, "beta_start": 0.001, "beta_end": 0.3, "epochs": 10, "hidden": 16, "layers": 3},
    "purify": {"sweep_grid": [0.1, 0.5], "sweep_seeds": 1, "sweep_replicates": 1, "sweep_settings": ["delta_0.6"]},
    "learner": {"gail": true, "bc_config": {"epochs": 3, "hidden": [8]},
                "gail_config": {"iterations": 2, "rollout_transitions": 100, "hidden": [8]}},
    "eval": {"replicates": 2, "n_eval_episodes": 3, "mmd_samples": 40,
             "filters": [{"kind": "mean", "param": 5}, {"kind": "median", "param": 3}],
             "filter_settings": ["delta_0.6"], "decay_grid": [0.5, 1.0], "decay_permutations": 5,
             "decay_settings": ["delta_0.6"], "bounds": {"grid": [0.1, 0.5, 1.0]}}
  })");
  j["output_dir"] = out.string();
  return j;
}

RunConfig parsed(const Json& j) {
  auto r = parse_config(j);
  EXPECT_TRUE(r.errors.empty()) << r.errors.front();
  return *r.config;
}

TEST(Config, EmptyObjectFillsDefaults) {
  auto r = parse_config(Json::object());
  ASSERT_TRUE(r.config) << r.errors.front();
  EXPECT_EQ(config_to_json(*r.config), config_to_json(RunConfig{}));
  EXPECT_EQ(r.config->diffusion.steps, 1000);
  EXPECT_EQ(r.config->diffusion.beta_start, 1e-4);
  EXPECT_EQ(r.config->diffusion.beta_end, 0.02);
  EXPECT_EQ(r.config->diffusion.train.hidden, 1024);
  EXPECT_EQ(r.config->diffusion.train.dropout, 0.2);
  EXPECT_EQ(r.config->learner.bc_cfg.epochs, 1000);
  EXPECT_EQ(r.config->eval.gamma, 0.995);
}

TEST(Config, TStarOutOfRangeNamesField) {
  auto r = parse_config(Json{{"purify", {{"t_star", 1.5}}}});
  EXPECT_FALSE(r.config);
  EXPECT_TRUE(has_error(r, "purify.t_star:"));
}

TEST(Config, DiscountOfOneRejected) {
  auto r = parse_config(Json{{"eval", {{"gamma", 1.0}}}});
  EXPECT_FALSE(r.config);
  EXPECT_TRUE(has_error(r, "eval.gamma:"));
}

TEST(Config, ReportsEveryErrorNotJustTheFirst) {
  auto r = parse_config(Json{{"purify", {{"t_star", 1.5}}},
                             {"eval", {{"gamma", 1.0}, {"replicates", 0}}},
                             {"diffusion", {{"epochs", "many"}}},
                             {"learnr", {}}});
  EXPECT_FALSE(r.config);
  EXPECT_TRUE(has_error(r, "purify.t_star:"));
  EXPECT_TRUE(has_error(r, "eval.gamma:"));
  EXPECT_TRUE(has_error(r, "eval.replicates:"));
  EXPECT_TRUE(has_error(r, "diffusion.epochs: expected an integer"));
  EXPECT_TRUE(has_error(r, "learnr: unknown field"));
}

TEST(Config, FractionalIntegerRejected) {
  EXPECT_TRUE(has_error(parse_config(Json{{"eval", {{"replicates", 2.5}}}}), "eval.replicates: expected an integer"));
}

TEST(Config, MissingDemoFileIsValidationError) {
  auto r = parse_config(Json{{"demos", {{"optimal_path", "/nonexistent/dpil/optimal.jsonl"}}}});
  EXPECT_TRUE(has_error(r, "demos.optimal_path: file not found"));
}

TEST(Config, BadFilterKindAndTtestShape) {
  auto r = parse_config(Json{{"eval", {{"filters", {{{"kind", "box"}, {"param", 3}}}}, {"ttest", {"dp_bc"}}}}});
  EXPECT_TRUE(has_error(r, "eval.filters: unknown filter kind 'box'"));
  EXPECT_TRUE(has_error(r, "eval.ttest:"));
}

TEST(Config, RoundTripThroughJson) {
  TempDir tmp;
  const RunConfig c = parsed(tiny_config(tmp.path()));
  const Json j = config_to_json(c);
  const RunConfig back = parsed(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.eval.filters.size(), 2u);
  EXPECT_EQ(back.eval.ttest, c.eval.ttest);
}

TEST(Config, ValidateConfigFromFile) {
  TempDir tmp;
  write_file_atomic(tmp.path() / "good.json", R"({"seed": 7, "purify": {"t_star": 0.2}})");
  write_file_atomic(tmp.path() / "bad.json", R"({"seed": 7,)");
  auto good = validate_config(tmp.path() / "good.json");
  ASSERT_TRUE(good.config);
  EXPECT_EQ(good.config->seed, 7u);
  EXPECT_EQ(good.config->purify.t_star, 0.2);
  auto bad = validate_config(tmp.path() / "bad.json");
  EXPECT_FALSE(bad.config);
  ASSERT_EQ(bad.errors.size(), 1u);
  EXPECT_NE(bad.errors[0].find("parse error"), std::string::npos);
  EXPECT_THROW(load_config(tmp.path() / "bad.json"), ConfigError);
}

TEST(Config, SettingNames) {
  RunConfig c;
  c.demos.deltas = {0.6, 0.25};
  c.demos.mixed = true;
  c.demos.checkpoint_fractions = {0.3};
  EXPECT_EQ(setting_names(c), (std::vector<std::string>{"delta_0.6", "delta_0.25", "mixed", "ckpt_0.3"}));
}

std::vector<std::string> csv_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

TEST(EmitReport, EmptyReport) {
  TempDir tmp;
  emit_report(EvalReport{}, tmp.path());
  const Json j = Json::parse(read_file(tmp.path() / "report.json"));
  EXPECT_EQ(j.at("stages"), Json::object());
  EXPECT_TRUE(j.at("tables").empty());
  EXPECT_TRUE(csv_files(tmp.path()).empty());
}

TEST(EmitReport, OneSweepGivesOneSweepCsv) {
  TempDir tmp;
  EvalReport r;
  r.tables.push_back({"sweep_delta_0.6_r0", {"t_star", "mean_return", "stderr", "seed_count"}, {{"0.1", "-8", "0.2", "3"}}});
  emit_report(r, tmp.path());
  EXPECT_EQ(csv_files(tmp.path()), std::vector<std::string>{"sweep_delta_0.6_r0.csv"});
  EXPECT_EQ(read_file(tmp.path() / "sweep_delta_0.6_r0.csv"), "t_star,mean_return,stderr,seed_count\n0.1,-8,0.2,3\n");
}

TEST(EmitReport, ReemitOverwritesWithoutTempFiles) {
  TempDir tmp;
  EvalReport r;
  r.stages["a"] = 1;
  emit_report(r, tmp.path());
  r.stages["a"] = 2;
  emit_report(r, tmp.path());
  EXPECT_EQ(Json::parse(read_file(tmp.path() / "report.json")).at("stages").at("a"), 2);
  for (const auto& e : fs::directory_iterator(tmp.path())) EXPECT_NE(e.path().extension(), ".tmp") << e.path();
}

TEST(EmitReport, NumericContentExcludesTiming) {
  EvalReport a, b;
  a.timing_seconds["demos"] = 1.0;
  b.timing_seconds["demos"] = 2.0;
  EXPECT_EQ(report_numeric_json(a), report_numeric_json(b));
}

TEST(EmitReport, UnwritableDirectoryReportsPath) {
  TempDir tmp;
  write_file_atomic(tmp.path() / "file", "x");
  try {
    emit_report(EvalReport{}, tmp.path() / "file" / "sub");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("file/sub"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, ProducesEveryTable) {
  TempDir tmp;
  const auto rep = run_pipeline(parsed(tiny_config(tmp.path() / "out")));
  const auto files = csv_files(tmp.path() / "out");
  for (const char* f : {"returns.csv", "returns_summary.csv", "mmd.csv", "ttest.csv", "bounds.csv", "sweep_delta_0.6_r0.csv",
                        "decay_delta_0.6_r0.csv", "decay_delta_0.6_r1.csv", "gail_mixed_dp_gail_r1.csv"})
    EXPECT_NE(std::find(files.begin(), files.end(), f), files.end()) << f;
  // The sweep ran on replicate 0 only.
  EXPECT_EQ(std::count_if(files.begin(), files.end(), [](const std::string& f) { return f.rfind("sweep_", 0) == 0; }), 1);
  const auto& summary = rep.stages.at("eval").at("summary");
  for (const char* m : {"bc_all", "dp_bc", "filter_mean", "filter_median", "gail_all", "dp_gail"})
    EXPECT_EQ(summary.at("delta_0.6").at(m).at("n"), 2) << m;
  EXPECT_FALSE(summary.at("delta_0.25").contains("filter_mean"));
  EXPECT_EQ(summary.at("all").at("random").at("n"), 2);
  for (const char* s : {"demos", "diffusion", "purify", "learners", "eval"}) EXPECT_TRUE(rep.timing_seconds.count(s)) << s;
}

TEST(Pipeline, DeterministicAcrossRunsAndWorkers) {
  TempDir tmp;
  Json a = tiny_config(tmp.path() / "a"), b = tiny_config(tmp.path() / "b"), c = tiny_config(tmp.path() / "c");
  c["workers"] = 4;
  const auto ra = report_numeric_json(run_pipeline(parsed(a))).dump();
  const auto rb = report_numeric_json(run_pipeline(parsed(b))).dump();
  const auto rc = report_numeric_json(run_pipeline(parsed(c))).dump();
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(ra, rc);
  EXPECT_EQ(read_file(tmp.path() / "a" / "returns.csv"), read_file(tmp.path() / "c" / "returns.csv"));
}

TEST(Pipeline, ResumesAndRecomputesDeletedStages) {
  TempDir tmp;
  const auto cfg = parsed(tiny_config(tmp.path()));
  const auto first = report_numeric_json(run_pipeline(cfg)).dump();
  EXPECT_EQ(report_numeric_json(run_pipeline(cfg)).dump(), first);
  fs::remove_all(tmp.path() / "stages" / "learners");
  fs::remove_all(tmp.path() / "stages" / "eval");
  EXPECT_EQ(report_numeric_json(run_pipeline(cfg)).dump(), first);
  fs::remove_all(tmp.path() / "stages" / "purify" / "r1");
  EXPECT_EQ(report_numeric_json(run_pipeline(cfg)).dump(), first);
}

TEST(Pipeline, UpstreamChangeInvalidatesDownstreamOnly) {
  TempDir tmp;
  auto j = tiny_config(tmp.path());
  const auto before = run_pipeline(parsed(j));
  j["purify"]["t_star"] = 0.3;
  const auto after = run_pipeline(parsed(j));
  EXPECT_EQ(before.stages.at("demos"), after.stages.at("demos"));
  EXPECT_EQ(before.stages.at("diffusion"), after.stages.at("diffusion"));
  EXPECT_NE(before.stages.at("purify"), after.stages.at("purify"));
  // A fresh directory with the new config gives the same numbers as the resumed one.
  TempDir fresh;
  j["output_dir"] = fresh.path().string();
  EXPECT_EQ(report_numeric_json(run_pipeline(parsed(j))), report_numeric_json(after));
}

TEST(Pipeline, PurifyDisabledIsBcAllBaseline) {
  TempDir tmp;
  auto j = tiny_config(tmp.path());
  j["purify"] = {{"enabled", false}};
  j["learner"]["gail"] = false;
  j["eval"]["filters"] = Json::array();
  j["eval"]["decay_grid"] = Json::array();
  const auto rep = run_pipeline(parsed(j));
  EXPECT_FALSE(rep.stages.contains("diffusion"));
  EXPECT_FALSE(rep.stages.contains("purify"));
  for (const auto& [setting, methods] : rep.stages.at("eval").at("summary").items())
    for (const auto& [m, v] : methods.items()) EXPECT_TRUE(m == "bc_all" || m == "random") << setting << "/" << m;
  EXPECT_FALSE(fs::exists(tmp.path() / "mmd.csv"));
}

TEST(Pipeline, LoadsDemoFiles) {
  TempDir tmp;
  const auto env = make_env(EnvConfig{});
  const auto ctl = envs::optimal_policy(env);
  demos::save_demos(demos::collect_demos(ctl, env, 30, 1, "opt"), tmp.path() / "opt.jsonl");
  demos::save_demos(demos::collect_demos(demos::wrap_noisy(ctl, 0.5, env), env, 60, 2, "noisy"), tmp.path() / "noisy.jsonl");
  auto j = tiny_config(tmp.path() / "out");
  j["demos"] = {{"optimal_path", (tmp.path() / "opt.jsonl").string()},
                {"imperfect_path", (tmp.path() / "noisy.jsonl").string()},
                {"deltas", Json::array()}};
  j["purify"].erase("sweep_settings");
  j["eval"]["filter_settings"] = Json::array();
  j["eval"]["decay_settings"] = Json::array();
  const auto rep = run_pipeline(parsed(j));
  EXPECT_EQ(rep.stages.at("demos").at("r0").at("optimal").at("count"), 30);
  EXPECT_EQ(rep.stages.at("demos").at("r0").at("loaded").at("count"), 60);
  EXPECT_TRUE(rep.stages.at("eval").at("summary").contains("loaded"));
}

TEST(Pipeline, StageFailureKeepsPartialReport) {
  TempDir tmp;
  // Three-dimensional states do not fit the two-dimensional environment.
  const auto env3 = envs::point_reach_env(Eigen::Vector3d(0.1, 0.2, 0.3));
  demos::save_demos(demos::collect_demos(envs::optimal_policy(env3), env3, 30, 1, "opt"), tmp.path() / "opt3.jsonl");
  auto j = tiny_config(tmp.path() / "out");
  j["demos"]["optimal_path"] = (tmp.path() / "opt3.jsonl").string();
  try {
    run_pipeline(parsed(j));
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "demos");
    EXPECT_EQ(e.seed(), derive_seed(3, "demos"));
  }
  const Json rep = Json::parse(read_file(tmp.path() / "out" / "report.json"));
  EXPECT_EQ(rep.at("failure").at("stage"), "demos");
  EXPECT_NE(rep.at("failure").at("message").get<std::string>().find("dimensions"), std::string::npos);
}

}  // namespace
}  // namespace dpil::harness
