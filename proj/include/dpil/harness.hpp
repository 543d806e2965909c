#pragma once

// Run configuration, the staged end-to-end pipeline and report emission.
//
// Stages run in order: demos -> diffusion -> purify -> learners -> eval.
// Each (stage, replicate) writes its outputs plus a done.json fingerprint
// under <output_dir>/stages/<stage>/r<k>/; a rerun with the same fingerprint
// loads instead of recomputing.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpil/demos.hpp"
#include "dpil/diffusion.hpp"
#include "dpil/envs.hpp"
#include "dpil/error.hpp"
#include "dpil/eval.hpp"
#include "dpil/imitation.hpp"
#include "dpil/io.hpp"
#include "dpil/random.hpp"

namespace dpil::harness {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::VectorXd;

// ---- configuration -----------------------------------------------------------

struct EnvConfig {
  std::string name = "point_reach";
  std::vector<double> goal{0.5, -0.5};
  double dt = 0.1;
  double gain = 5.0;
  int horizon = 50;
};

struct DemoConfig {
  /// When set, D_o / D_n are read from these files instead of generated.
  std::string optimal_path;
  std::string imperfect_path;
  /// D_o is `optimal_transitions` drawn from a pool of `optimal_pool`
  /// transitions of the optimal controller.
  int optimal_pool = 1000;
  int optimal_transitions = 50;
  int noisy_transitions = 500;
  std::vector<double> deltas{0.6, 0.4, 0.25};
  bool mixed = false;
  /// Snapshot fractions of a REINFORCE run used as imperfect demonstrators.
  std::vector<double> checkpoint_fractions;
  imitation::RlConfig rl;
};

struct DiffusionConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  diffusion::DenoiserTrainConfig train{10000, 64, 1e-4, 1024, 5, 0.2, true, 32, true, 1.0};
};

struct PurifyBlock {
  bool enabled = true;
  double t_star = 0.1;
  bool inject_final_noise = false;
  std::vector<double> sweep_grid;
  int sweep_seeds = 3;
  /// Sweeps run on the first `sweep_replicates` replicates (0 = all).
  int sweep_replicates = 0;
  /// Settings the sweep runs on (empty = all).
  std::vector<std::string> sweep_settings;
};

struct FilterSpec {
  std::string kind = "mean";
  double param = 5.0;
};

struct LearnerConfig {
  bool bc = true;
  bool gail = false;
  /// Also train on raw D_o + D_n (BC-all / GAIL-all).
  bool raw_baselines = true;
  imitation::BcConfig bc_cfg{1000, 256, 1e-3, {100, 100}};
  imitation::GailConfig gail_cfg;
};

struct BoundsBlock {
  std::vector<double> grid;
  double varpi = 0.05;
  double L = 1.0;
  double C = 0.0;
  double C_sw = 1.0;
  double delta_norm = 0.0;
};

struct EvalConfig {
  int replicates = 5;
  int n_eval_episodes = 100;
  double gamma = 0.995;
  bool mmd = true;
  int mmd_samples = 500;
  bool random_baseline = true;
  std::vector<FilterSpec> filters;
  std::vector<std::string> filter_settings;
  std::vector<std::pair<std::string, std::string>> ttest{{"dp_bc", "bc_all"}};
  std::vector<double> decay_grid;
  int decay_permutations = 100;
  std::vector<std::string> decay_settings;
  BoundsBlock bounds;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "dpil_out";
  int workers = 1;
  EnvConfig env;
  DemoConfig demos;
  DiffusionConfig diffusion;
  PurifyBlock purify;
  LearnerConfig learner;
  EvalConfig eval;
};

/// A config that failed validation; `errors` holds every problem found.
class ConfigError : public InvalidInput {
 public:
  explicit ConfigError(std::vector<std::string> errors) : InvalidInput(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid config:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

struct ConfigResult {
  std::optional<RunConfig> config;
  std::vector<std::string> errors;
};

namespace detail_cfg {

/// Reads fields from one JSON object, recording type errors and unknown keys
/// with their dotted paths instead of stopping at the first.
class Reader {
 public:
  Reader(const Json* j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(&errors) {
    if (j_ && !j_->is_object()) {
      error("", "expected an object");
      j_ = nullptr;
    }
  }

  ~Reader() {
    if (!j_) return;
    for (const auto& [k, v] : j_->items())
      if (!seen_.count(k)) error(k, "unknown field");
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  Reader child(const std::string& key) {
    seen_.insert(key);
    const Json* c = (j_ && j_->contains(key)) ? &j_->at(key) : nullptr;
    return Reader(c, at(key), *errors_);
  }

  void get(const std::string& key, int& out) { read(key, out, [](const Json& v) { return v.is_number_integer(); }, "an integer"); }
  void get(const std::string& key, std::uint64_t& out) {
    read(key, out, [](const Json& v) { return v.is_number_unsigned(); }, "a non-negative integer");
  }
  void get(const std::string& key, double& out) { read(key, out, [](const Json& v) { return v.is_number(); }, "a number"); }
  void get(const std::string& key, bool& out) { read(key, out, [](const Json& v) { return v.is_boolean(); }, "a boolean"); }
  void get(const std::string& key, std::string& out) {
    read(key, out, [](const Json& v) { return v.is_string(); }, "a string");
  }
  void get(const std::string& key, std::vector<double>& out) {
    read(key, out, [](const Json& v) { return all_of(v, [](const Json& e) { return e.is_number(); }); }, "a list of numbers");
  }
  void get(const std::string& key, std::vector<int>& out) {
    read(key, out, [](const Json& v) { return all_of(v, [](const Json& e) { return e.is_number_integer(); }); },
         "a list of integers");
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    read(key, out, [](const Json& v) { return all_of(v, [](const Json& e) { return e.is_string(); }); },
         "a list of strings");
  }

  /// Raw access for list-of-object fields.
  const Json* raw(const std::string& key) {
    seen_.insert(key);
    return (j_ && j_->contains(key)) ? &j_->at(key) : nullptr;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void error(const std::string& key, const std::string& msg) {
    errors_->push_back((key.empty() ? (path_.empty() ? std::string("<root>") : path_) : at(key)) + ": " + msg);
  }

 private:
  template <typename Pred>
  static bool all_of(const Json& v, Pred p) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!p(e)) return false;
    return true;
  }

  template <typename T, typename Check>
  void read(const std::string& key, T& out, Check ok, const char* expected) {
    seen_.insert(key);
    if (!j_ || !j_->contains(key)) return;
    const Json& v = j_->at(key);
    if (!ok(v)) {
      error(key, std::string("expected ") + expected);
      return;
    }
    out = v.get<T>();
  }

  const Json* j_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

inline void check(bool ok, std::vector<std::string>& errors, const std::string& field, const std::string& msg) {
  if (!ok) errors.push_back(field + ": " + msg);
}

inline bool in_unit(double t) { return t > 0.0 && t <= 1.0; }

}  // namespace detail_cfg

/// Parses and validates a config object. Missing fields keep their defaults.
inline ConfigResult parse_config(const Json& j) {
  using detail_cfg::check;
  using detail_cfg::in_unit;
  std::vector<std::string> errs;
  RunConfig c;
  {
    detail_cfg::Reader r(&j, "", errs);
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);
    r.get("workers", c.workers);
    {
      auto e = r.child("env");
      e.get("name", c.env.name);
      e.get("goal", c.env.goal);
      e.get("dt", c.env.dt);
      e.get("gain", c.env.gain);
      e.get("horizon", c.env.horizon);
    }
    {
      auto d = r.child("demos");
      d.get("optimal_path", c.demos.optimal_path);
      d.get("imperfect_path", c.demos.imperfect_path);
      d.get("optimal_pool", c.demos.optimal_pool);
      d.get("optimal_transitions", c.demos.optimal_transitions);
      d.get("noisy_transitions", c.demos.noisy_transitions);
      d.get("deltas", c.demos.deltas);
      d.get("mixed", c.demos.mixed);
      d.get("checkpoint_fractions", c.demos.checkpoint_fractions);
      auto rl = d.child("rl");
      rl.get("iterations", c.demos.rl.iterations);
      rl.get("episodes_per_iter", c.demos.rl.episodes_per_iter);
      rl.get("learning_rate", c.demos.rl.learning_rate);
      rl.get("hidden", c.demos.rl.hidden);
    }
    {
      auto d = r.child("diffusion");
      d.get("steps", c.diffusion.steps);
      d.get("beta_start", c.diffusion.beta_start);
      d.get("beta_end", c.diffusion.beta_end);
      auto& t = c.diffusion.train;
      d.get("epochs", t.epochs);
      d.get("batch_size", t.batch_size);
      d.get("learning_rate", t.learning_rate);
      d.get("final_lr_fraction", t.final_lr_fraction);
      d.get("hidden", t.hidden);
      d.get("layers", t.linear_layers);
      d.get("dropout", t.dropout);
      d.get("batch_norm", t.batch_norm);
      d.get("embedding_dim", t.embedding_dim);
      d.get("normalize", t.normalize);
    }
    {
      auto p = r.child("purify");
      p.get("enabled", c.purify.enabled);
      p.get("t_star", c.purify.t_star);
      p.get("inject_final_noise", c.purify.inject_final_noise);
      p.get("sweep_grid", c.purify.sweep_grid);
      p.get("sweep_seeds", c.purify.sweep_seeds);
      p.get("sweep_replicates", c.purify.sweep_replicates);
      p.get("sweep_settings", c.purify.sweep_settings);
    }
    {
      auto l = r.child("learner");
      l.get("bc", c.learner.bc);
      l.get("gail", c.learner.gail);
      l.get("raw_baselines", c.learner.raw_baselines);
      auto b = l.child("bc_config");
      b.get("epochs", c.learner.bc_cfg.epochs);
      b.get("batch_size", c.learner.bc_cfg.batch_size);
      b.get("learning_rate", c.learner.bc_cfg.learning_rate);
      b.get("hidden", c.learner.bc_cfg.hidden);
      auto g = l.child("gail_config");
      auto& gc = c.learner.gail_cfg;
      g.get("iterations", gc.iterations);
      g.get("disc_updates_per_iter", gc.disc_updates_per_iter);
      g.get("policy_updates_per_iter", gc.policy_updates_per_iter);
      g.get("rollout_transitions", gc.rollout_transitions);
      g.get("disc_batch", gc.disc_batch);
      g.get("entropy_coef", gc.entropy_coef);
      g.get("disc_learning_rate", gc.disc_learning_rate);
      g.get("policy_learning_rate", gc.policy_learning_rate);
      g.get("hidden", gc.hidden);
    }
    {
      auto e = r.child("eval");
      e.get("replicates", c.eval.replicates);
      e.get("n_eval_episodes", c.eval.n_eval_episodes);
      e.get("gamma", c.eval.gamma);
      e.get("mmd", c.eval.mmd);
      e.get("mmd_samples", c.eval.mmd_samples);
      e.get("random_baseline", c.eval.random_baseline);
      if (const Json* f = e.raw("filters")) {
        c.eval.filters.clear();
        if (!f->is_array()) {
          e.error("filters", "expected a list of {kind, param}");
        } else {
          for (std::size_t k = 0; k < f->size(); ++k) {
            FilterSpec spec;
            detail_cfg::Reader fr(&(*f)[k], e.at("filters") + "[" + std::to_string(k) + "]", errs);
            fr.get("kind", spec.kind);
            fr.get("param", spec.param);
            c.eval.filters.push_back(spec);
          }
        }
      }
      e.get("filter_settings", c.eval.filter_settings);
      if (const Json* t = e.raw("ttest")) {
        c.eval.ttest.clear();
        bool ok = t->is_array();
        if (ok)
          for (const auto& p : *t) ok = ok && p.is_array() && p.size() == 2 && p[0].is_string() && p[1].is_string();
        if (!ok)
          e.error("ttest", "expected a list of [method_a, method_b] pairs");
        else
          for (const auto& p : *t) c.eval.ttest.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
      e.get("decay_grid", c.eval.decay_grid);
      e.get("decay_permutations", c.eval.decay_permutations);
      e.get("decay_settings", c.eval.decay_settings);
      auto b = e.child("bounds");
      b.get("grid", c.eval.bounds.grid);
      b.get("varpi", c.eval.bounds.varpi);
      b.get("L", c.eval.bounds.L);
      b.get("C", c.eval.bounds.C);
      b.get("C_sw", c.eval.bounds.C_sw);
      b.get("delta_norm", c.eval.bounds.delta_norm);
    }
  }

  check(c.workers >= 1, errs, "workers", "must be >= 1");
  check(!c.output_dir.empty(), errs, "output_dir", "must be non-empty");
  check(c.env.name == "point_reach", errs, "env.name", "unknown environment '" + c.env.name + "'");
  check(!c.env.goal.empty(), errs, "env.goal", "must be non-empty");
  for (double g : c.env.goal) check(std::abs(g) <= 1.0, errs, "env.goal", "entries must lie in [-1, 1]");
  check(c.env.dt > 0.0, errs, "env.dt", "must be positive");
  check(c.env.gain > 0.0, errs, "env.gain", "must be positive");
  check(c.env.horizon >= 1, errs, "env.horizon", "must be >= 1");

  check(c.demos.optimal_pool >= 1, errs, "demos.optimal_pool", "must be >= 1");
  check(c.demos.optimal_transitions >= 1 && c.demos.optimal_transitions <= c.demos.optimal_pool, errs,
        "demos.optimal_transitions", "must lie in [1, optimal_pool]");
  check(c.demos.noisy_transitions >= 1, errs, "demos.noisy_transitions", "must be >= 1");
  for (double d : c.demos.deltas) check(d >= 0.0, errs, "demos.deltas", "noise levels must be non-negative");
  for (double f : c.demos.checkpoint_fractions)
    check(in_unit(f), errs, "demos.checkpoint_fractions", "fractions must lie in (0,1]");
  check(!c.demos.mixed || c.demos.deltas.size() >= 2, errs, "demos.mixed", "needs at least two deltas to mix");
  check(c.demos.rl.iterations >= 1, errs, "demos.rl.iterations", "must be >= 1");
  check(c.demos.rl.episodes_per_iter >= 1, errs, "demos.rl.episodes_per_iter", "must be >= 1");
  check(c.demos.rl.learning_rate > 0.0, errs, "demos.rl.learning_rate", "must be positive");
  for (const auto* p : {&c.demos.optimal_path, &c.demos.imperfect_path})
    if (!p->empty() && !fs::exists(*p))
      errs.push_back(std::string(p == &c.demos.optimal_path ? "demos.optimal_path" : "demos.imperfect_path") +
                     ": file not found: " + *p);
  check(c.demos.imperfect_path.empty() || (c.demos.deltas.empty() && !c.demos.mixed && c.demos.checkpoint_fractions.empty()),
        errs, "demos.imperfect_path", "cannot be combined with generated deltas, mixed or checkpoint demos");
  check(!c.demos.imperfect_path.empty() || !c.demos.deltas.empty() || !c.demos.checkpoint_fractions.empty(), errs,
        "demos", "no imperfect demonstrations configured");

  check(c.diffusion.steps >= 1, errs, "diffusion.steps", "must be >= 1");
  check(c.diffusion.beta_start > 0.0 && c.diffusion.beta_start <= c.diffusion.beta_end && c.diffusion.beta_end < 1.0, errs,
        "diffusion.beta_start", "need 0 < beta_start <= beta_end < 1");
  const auto& t = c.diffusion.train;
  check(t.epochs >= 1, errs, "diffusion.epochs", "must be >= 1");
  check(t.batch_size >= 1, errs, "diffusion.batch_size", "must be >= 1");
  check(t.learning_rate > 0.0, errs, "diffusion.learning_rate", "must be positive");
  check(t.final_lr_fraction > 0.0 && t.final_lr_fraction <= 1.0, errs, "diffusion.final_lr_fraction",
        "must lie in (0,1]");
  check(t.hidden >= 1, errs, "diffusion.hidden", "must be >= 1");
  check(t.linear_layers >= 2, errs, "diffusion.layers", "must be >= 2");
  check(t.dropout >= 0.0 && t.dropout < 1.0, errs, "diffusion.dropout", "must lie in [0,1)");
  check(t.embedding_dim >= 2 && t.embedding_dim % 2 == 0, errs, "diffusion.embedding_dim", "must be even and >= 2");

  check(in_unit(c.purify.t_star), errs, "purify.t_star", "must lie in (0,1]");
  for (double g : c.purify.sweep_grid) check(in_unit(g), errs, "purify.sweep_grid", "entries must lie in (0,1]");
  check(c.purify.sweep_seeds >= 1, errs, "purify.sweep_seeds", "must be >= 1");
  check(c.purify.sweep_replicates >= 0, errs, "purify.sweep_replicates", "must be >= 0");
  check(c.purify.enabled || c.purify.sweep_grid.empty(), errs, "purify.sweep_grid", "needs purify.enabled");

  check(c.learner.bc || c.learner.gail, errs, "learner", "enable at least one of bc, gail");
  const auto& b = c.learner.bc_cfg;
  check(b.epochs >= 1, errs, "learner.bc_config.epochs", "must be >= 1");
  check(b.batch_size >= 1, errs, "learner.bc_config.batch_size", "must be >= 1");
  check(b.learning_rate > 0.0, errs, "learner.bc_config.learning_rate", "must be positive");
  const auto& g = c.learner.gail_cfg;
  check(g.iterations >= 1, errs, "learner.gail_config.iterations", "must be >= 1");
  check(g.disc_updates_per_iter >= 1, errs, "learner.gail_config.disc_updates_per_iter", "must be >= 1");
  check(g.policy_updates_per_iter >= 0, errs, "learner.gail_config.policy_updates_per_iter", "must be >= 0");
  check(g.rollout_transitions >= 1, errs, "learner.gail_config.rollout_transitions", "must be >= 1");
  check(g.disc_batch >= 1, errs, "learner.gail_config.disc_batch", "must be >= 1");
  check(g.disc_learning_rate > 0.0, errs, "learner.gail_config.disc_learning_rate", "must be positive");
  check(g.policy_learning_rate > 0.0, errs, "learner.gail_config.policy_learning_rate", "must be positive");

  check(c.eval.replicates >= 1, errs, "eval.replicates", "must be >= 1");
  check(c.eval.n_eval_episodes >= 1, errs, "eval.n_eval_episodes", "must be >= 1");
  check(c.eval.gamma >= 0.0 && c.eval.gamma < 1.0, errs, "eval.gamma", "discount must lie in [0,1)");
  check(c.eval.mmd_samples >= 2, errs, "eval.mmd_samples", "must be >= 2");
  for (const auto& f : c.eval.filters) {
    try {
      demos::filter_kind_from_string(f.kind);
    } catch (const InvalidInput&) {
      errs.push_back("eval.filters: unknown filter kind '" + f.kind + "'");
    }
    check(f.param > 0.0, errs, "eval.filters", "param must be positive");
  }
  for (double x : c.eval.decay_grid) check(in_unit(x), errs, "eval.decay_grid", "entries must lie in (0,1]");
  for (std::size_t k = 1; k < c.eval.decay_grid.size(); ++k)
    check(c.eval.decay_grid[k] > c.eval.decay_grid[k - 1], errs, "eval.decay_grid", "must be ascending");
  check(c.eval.decay_permutations >= 2, errs, "eval.decay_permutations", "must be >= 2");
  for (double x : c.eval.bounds.grid) check(in_unit(x), errs, "eval.bounds.grid", "entries must lie in (0,1]");
  check(c.eval.bounds.varpi > 0.0 && c.eval.bounds.varpi <= 1.0, errs, "eval.bounds.varpi", "must lie in (0,1]");
  check(c.eval.bounds.L >= 0.0 && c.eval.bounds.C >= 0.0 && c.eval.bounds.C_sw >= 0.0 && c.eval.bounds.delta_norm >= 0.0,
        errs, "eval.bounds", "L, C, C_sw, delta_norm must be non-negative");

  if (!errs.empty()) return {std::nullopt, std::move(errs)};
  return {std::move(c), {}};
}

inline ConfigResult validate_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    return {std::nullopt, {path.string() + ": parse error: " + e.what()}};
  } catch (const std::exception& e) {
    return {std::nullopt, {path.string() + ": " + e.what()}};
  }
  return parse_config(j);
}

/// Throws ConfigError listing every problem.
inline RunConfig load_config(const fs::path& path) {
  auto r = validate_config(path);
  if (!r.config) throw ConfigError(std::move(r.errors));
  return std::move(*r.config);
}

inline Json config_to_json(const RunConfig& c) {
  const auto& t = c.diffusion.train;
  const auto& g = c.learner.gail_cfg;
  Json filters = Json::array();
  for (const auto& f : c.eval.filters) filters.push_back({{"kind", f.kind}, {"param", f.param}});
  Json ttest = Json::array();
  for (const auto& [a, b] : c.eval.ttest) ttest.push_back({a, b});
  return Json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
      {"env", {{"name", c.env.name}, {"goal", c.env.goal}, {"dt", c.env.dt}, {"gain", c.env.gain}, {"horizon", c.env.horizon}}},
      {"demos",
       {{"optimal_path", c.demos.optimal_path},
        {"imperfect_path", c.demos.imperfect_path},
        {"optimal_pool", c.demos.optimal_pool},
        {"optimal_transitions", c.demos.optimal_transitions},
        {"noisy_transitions", c.demos.noisy_transitions},
        {"deltas", c.demos.deltas},
        {"mixed", c.demos.mixed},
        {"checkpoint_fractions", c.demos.checkpoint_fractions},
        {"rl",
         {{"iterations", c.demos.rl.iterations},
          {"episodes_per_iter", c.demos.rl.episodes_per_iter},
          {"learning_rate", c.demos.rl.learning_rate},
          {"hidden", c.demos.rl.hidden}}}}},
      {"diffusion",
       {{"steps", c.diffusion.steps},
        {"beta_start", c.diffusion.beta_start},
        {"beta_end", c.diffusion.beta_end},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"final_lr_fraction", t.final_lr_fraction},
        {"hidden", t.hidden},
        {"layers", t.linear_layers},
        {"dropout", t.dropout},
        {"batch_norm", t.batch_norm},
        {"embedding_dim", t.embedding_dim},
        {"normalize", t.normalize}}},
      {"purify",
       {{"enabled", c.purify.enabled},
        {"t_star", c.purify.t_star},
        {"inject_final_noise", c.purify.inject_final_noise},
        {"sweep_grid", c.purify.sweep_grid},
        {"sweep_seeds", c.purify.sweep_seeds},
        {"sweep_replicates", c.purify.sweep_replicates},
        {"sweep_settings", c.purify.sweep_settings}}},
      {"learner",
       {{"bc", c.learner.bc},
        {"gail", c.learner.gail},
        {"raw_baselines", c.learner.raw_baselines},
        {"bc_config",
         {{"epochs", c.learner.bc_cfg.epochs},
          {"batch_size", c.learner.bc_cfg.batch_size},
          {"learning_rate", c.learner.bc_cfg.learning_rate},
          {"hidden", c.learner.bc_cfg.hidden}}},
        {"gail_config",
         {{"iterations", g.iterations},
          {"disc_updates_per_iter", g.disc_updates_per_iter},
          {"policy_updates_per_iter", g.policy_updates_per_iter},
          {"rollout_transitions", g.rollout_transitions},
          {"disc_batch", g.disc_batch},
          {"entropy_coef", g.entropy_coef},
          {"disc_learning_rate", g.disc_learning_rate},
          {"policy_learning_rate", g.policy_learning_rate},
          {"hidden", g.hidden}}}}},
      {"eval",
       {{"replicates", c.eval.replicates},
        {"n_eval_episodes", c.eval.n_eval_episodes},
        {"gamma", c.eval.gamma},
        {"mmd", c.eval.mmd},
        {"mmd_samples", c.eval.mmd_samples},
        {"random_baseline", c.eval.random_baseline},
        {"filters", filters},
        {"filter_settings", c.eval.filter_settings},
        {"ttest", ttest},
        {"decay_grid", c.eval.decay_grid},
        {"decay_permutations", c.eval.decay_permutations},
        {"decay_settings", c.eval.decay_settings},
        {"bounds",
         {{"grid", c.eval.bounds.grid},
          {"varpi", c.eval.bounds.varpi},
          {"L", c.eval.bounds.L},
          {"C", c.eval.bounds.C},
          {"C_sw", c.eval.bounds.C_sw},
          {"delta_norm", c.eval.bounds.delta_norm}}}}}};
}

/// The discount shared by GAIL, sweeps and policy evaluation.
inline void sync_gamma(RunConfig& c) { c.learner.gail_cfg.gamma = c.eval.gamma; }

// ---- report --------------------------------------------------------------------

struct Table {
  std::string name;  // file stem
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct EvalReport {
  Json stages = Json::object();
  Json provenance = Json::object();
  std::map<std::string, double> timing_seconds;
  std::vector<Table> tables;
  std::optional<Json> failure;
};

inline std::string cell(double v) { return format_double(v); }

inline std::string table_to_csv(const Table& t) {
  std::string s;
  for (std::size_t k = 0; k < t.header.size(); ++k) s += (k ? "," : "") + t.header[k];
  s += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t k = 0; k < r.size(); ++k) s += (k ? "," : "") + r[k];
    s += '\n';
  }
  return s;
}

/// report.json without wall-clock fields; equal across reruns and worker counts.
inline Json report_numeric_json(const EvalReport& r) {
  Json tables = Json::object();
  for (const auto& t : r.tables) tables[t.name + ".csv"] = table_to_csv(t);
  Json j{{"stages", r.stages}, {"provenance", r.provenance}, {"tables", tables}};
  if (r.failure) j["failure"] = *r.failure;
  return j;
}

/// Writes <dir>/<table>.csv for every table, then <dir>/report.json, each via
/// temp file and rename.
inline void emit_report(const EvalReport& r, const fs::path& dir) {
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("emit_report: cannot create " + dir.string() + ": " + e.what());
  }
  Json files = Json::array();
  for (const auto& t : r.tables) {
    write_file_atomic(dir / (t.name + ".csv"), table_to_csv(t));
    files.push_back(t.name + ".csv");
  }
  Json timing = Json::object();
  for (const auto& [k, v] : r.timing_seconds) timing[k] = v;
  Json j{{"stages", r.stages}, {"provenance", r.provenance}, {"tables", files}, {"timing_seconds", timing}};
  if (r.failure) j["failure"] = *r.failure;
  write_file_atomic(dir / "report.json", j.dump(2) + "\n");
}

// ---- pipeline ------------------------------------------------------------------

/// A stage that failed; the partial report has already been written.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::uint64_t seed, const std::string& what)
      : std::runtime_error("stage '" + stage + "' (seed " + std::to_string(seed) + ") failed: " + what),
        stage_(std::move(stage)),
        seed_(seed) {}
  const std::string& stage() const { return stage_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::string stage_;
  std::uint64_t seed_;
};

inline envs::PointReach make_env(const EnvConfig& e) {
  return envs::point_reach_env(Eigen::Map<const VectorXd>(e.goal.data(), static_cast<Index>(e.goal.size())), e.dt, e.gain,
                               e.horizon);
}

inline diffusion::NoiseSchedule make_schedule(const DiffusionConfig& d) {
  return diffusion::make_schedule(d.steps, d.beta_start, d.beta_end);
}

inline std::string delta_setting(double d) { return "delta_" + cell(d); }
inline std::string checkpoint_setting(double f) { return "ckpt_" + cell(f); }

/// Imperfect-demonstration settings in pipeline order.
inline std::vector<std::string> setting_names(const RunConfig& c) {
  std::vector<std::string> out;
  if (!c.demos.imperfect_path.empty()) return {"loaded"};
  for (double d : c.demos.deltas) out.push_back(delta_setting(d));
  if (c.demos.mixed) out.push_back("mixed");
  for (double f : c.demos.checkpoint_fractions) out.push_back(checkpoint_setting(f));
  return out;
}

namespace detail_pipe {

inline bool selected(const std::vector<std::string>& list, const std::string& name) {
  return list.empty() || std::find(list.begin(), list.end(), name) != list.end();
}

/// Per-replicate stage directory with a fingerprint of everything it depends on.
class StageDir {
 public:
  StageDir(const fs::path& root, const std::string& stage, int replicate, std::string fingerprint)
      : dir_(root / "stages" / stage / ("r" + std::to_string(replicate))), fingerprint_(std::move(fingerprint)) {}

  bool complete() const {
    const auto p = dir_ / "done.json";
    if (!fs::exists(p)) return false;
    try {
      return Json::parse(read_file(p)).value("fingerprint", "") == fingerprint_;
    } catch (const std::exception&) {
      return false;
    }
  }
  void mark_done() const { write_file_atomic(dir_ / "done.json", Json{{"fingerprint", fingerprint_}}.dump() + "\n"); }
  void reset() const {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  fs::path operator/(const std::string& f) const { return dir_ / f; }
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  fs::path dir_;
  std::string fingerprint_;
};

inline std::string fingerprint(std::initializer_list<Json> parts) {
  Json a = Json::array();
  for (const auto& p : parts) a.push_back(p);
  return content_hash(a.dump());
}

struct ReplicateData {
  demos::DemoSet optimal;    // D_o
  demos::DemoSet reference;  // independent optimal sample for MMD
  std::vector<std::pair<std::string, demos::DemoSet>> imperfect;
  std::map<std::string, demos::DemoSet> purified;
  std::optional<diffusion::Denoiser> denoiser;
  std::vector<std::pair<std::string, imitation::GaussianPolicy>> policies;  // key "setting/method"
  std::map<std::string, std::vector<imitation::GailIteration>> gail_curves;
};

inline std::vector<imitation::GailIteration> curve_from_json(const Json& j) {
  std::vector<imitation::GailIteration> c;
  for (const auto& e : j) c.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()});
  return c;
}

inline Json curve_to_json(const std::vector<imitation::GailIteration>& c) {
  Json j = Json::array();
  for (const auto& e : c) j.push_back({e.iteration, e.env_return_mean, e.env_return_stderr, e.disc_objective});
  return j;
}

}  // namespace detail_pipe

/// Runs the full pipeline, resuming completed stages from <output_dir>/stages,
/// and writes the report to <output_dir>. On a stage failure the partial
/// report is written and StageError is thrown.
inline EvalReport run_pipeline(RunConfig cfg) {
  using namespace detail_pipe;
  sync_gamma(cfg);
  const fs::path out = cfg.output_dir;
  const auto env = make_env(cfg.env);
  const auto schedule = make_schedule(cfg.diffusion);
  const auto settings = setting_names(cfg);
  const int reps = cfg.eval.replicates;
  const int W = cfg.workers;
  EvalReport report;
  {
    Json cj = config_to_json(cfg);
    cj.erase("workers");
    cj.erase("output_dir");
    report.provenance["config"] = content_hash(cj.dump());
  }
  std::vector<ReplicateData> data(static_cast<std::size_t>(reps));

  auto stage_seed = [&](const std::string& stage, int r) {
    return derive_seed(derive_seed(cfg.seed, stage), static_cast<std::uint64_t>(r));
  };
  auto timed = [&](const std::string& stage, auto&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      report.failure = Json{{"stage", stage}, {"seed", derive_seed(cfg.seed, stage)}, {"message", e.what()}};
      report.timing_seconds[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      try {
        emit_report(report, out);
      } catch (const std::exception&) {
      }
      throw StageError(stage, derive_seed(cfg.seed, stage), e.what());
    }
    report.timing_seconds[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  // Fingerprints chain so a change upstream invalidates everything after it.
  const Json jc = config_to_json(cfg);
  std::vector<std::string> fp_demos(static_cast<std::size_t>(reps)), fp_diff(fp_demos), fp_pur(fp_demos), fp_learn(fp_demos);

  timed("demos", [&] {
    Json stage = Json::object();
    for (int r = 0; r < reps; ++r) {
      auto& D = data[static_cast<std::size_t>(r)];
      const auto s = stage_seed("demos", r);
      StageDir dir(out, "demos", r, fingerprint({jc["env"], jc["demos"], cfg.seed, r}));
      fp_demos[static_cast<std::size_t>(r)] = dir.fingerprint();
      if (dir.complete()) {
        D.optimal = demos::load_demos(dir / "optimal.jsonl");
        D.reference = demos::load_demos(dir / "reference.jsonl");
        for (const auto& name : settings) D.imperfect.emplace_back(name, demos::load_demos(dir / (name + ".jsonl")));
      } else {
        dir.reset();
        const auto ctl = envs::optimal_policy(env);
        if (!cfg.demos.optimal_path.empty()) {
          D.optimal = demos::load_demos(cfg.demos.optimal_path);
        } else {
          const auto pool = demos::collect_demos(ctl, env, static_cast<std::size_t>(cfg.demos.optimal_pool),
                                                 derive_seed(s, "optimal"), "optimal_pool");
          D.optimal = demos::subsample(pool, static_cast<std::size_t>(cfg.demos.optimal_transitions),
                                       derive_seed(s, "subsample"));
          D.optimal.source_label = "optimal";
        }
        D.reference = demos::collect_demos(ctl, env, static_cast<std::size_t>(cfg.eval.mmd_samples),
                                           derive_seed(s, "reference"), "reference");
        if (!cfg.demos.imperfect_path.empty()) {
          D.imperfect.emplace_back("loaded", demos::load_demos(cfg.demos.imperfect_path));
        } else {
          std::vector<demos::DemoSet> noisy;
          for (double d : cfg.demos.deltas) {
            auto set = demos::collect_demos(demos::wrap_noisy(ctl, d, env), env,
                                            static_cast<std::size_t>(cfg.demos.noisy_transitions),
                                            derive_seed(s, delta_setting(d)), delta_setting(d));
            set.generator_meta = Json{{"delta", d}};
            noisy.push_back(set);
            D.imperfect.emplace_back(delta_setting(d), std::move(set));
          }
          if (cfg.demos.mixed) D.imperfect.emplace_back("mixed", demos::mix_demosets(noisy));
          if (!cfg.demos.checkpoint_fractions.empty()) {
            auto rl = cfg.demos.rl;
            rl.gamma = cfg.eval.gamma;
            rl.snapshot_fractions = cfg.demos.checkpoint_fractions;
            const auto run = imitation::train_reinforce(env, rl, derive_seed(s, "rl"), W);
            for (double f : cfg.demos.checkpoint_fractions)
              D.imperfect.emplace_back(checkpoint_setting(f),
                                       demos::collect_checkpoint_demos(run.snapshots, f, env,
                                                                       static_cast<std::size_t>(cfg.demos.noisy_transitions),
                                                                       derive_seed(s, checkpoint_setting(f))));
          }
        }
        for (const auto& [name, set] : D.imperfect) demos::validate(set);
        if (D.optimal.state_dim != env.state_dim() || D.optimal.action_dim != env.action_dim())
          throw InvalidInput("optimal demos do not match the environment dimensions");
        for (const auto& [name, set] : D.imperfect)
          if (set.joint_dim() != D.optimal.joint_dim())
            throw InvalidInput("imperfect demos '" + name + "' do not match the optimal demos' dimensions");
        demos::save_demos(D.optimal, dir / "optimal.jsonl");
        demos::save_demos(D.reference, dir / "reference.jsonl");
        for (const auto& [name, set] : D.imperfect) demos::save_demos(set, dir / (name + ".jsonl"));
        dir.mark_done();
      }
      Json rj{{"optimal", {{"count", D.optimal.size()}, {"hash", demos::demo_hash(D.optimal)}}},
              {"reference", {{"count", D.reference.size()}, {"hash", demos::demo_hash(D.reference)}}}};
      for (const auto& [name, set] : D.imperfect) rj[name] = {{"count", set.size()}, {"hash", demos::demo_hash(set)}};
      stage["r" + std::to_string(r)] = rj;
      report.provenance["demos/r" + std::to_string(r)] = dir.fingerprint();
    }
    report.stages["demos"] = stage;
  });

  if (cfg.purify.enabled) {
    timed("diffusion", [&] {
      Json stage = Json::object();
      for (int r = 0; r < reps; ++r) {
        auto& D = data[static_cast<std::size_t>(r)];
        StageDir dir(out, "diffusion", r, fingerprint({fp_demos[static_cast<std::size_t>(r)], jc["diffusion"]}));
        fp_diff[static_cast<std::size_t>(r)] = dir.fingerprint();
        const auto seed = stage_seed("diffusion", r);
        if (dir.complete()) {
          D.denoiser = diffusion::load_denoiser(dir / "denoiser.json");
        } else {
          dir.reset();
          Rng rng(seed);
          D.denoiser = diffusion::train_denoiser(demos::to_matrix(D.optimal), schedule, cfg.diffusion.train, rng);
          diffusion::save_denoiser(*D.denoiser, dir / "denoiser.json", seed);
          dir.mark_done();
        }
        stage["r" + std::to_string(r)] = {{"hash", content_hash(diffusion::denoiser_to_json(*D.denoiser).dump())},
                                          {"training_transitions", D.optimal.size()}};
      }
      report.stages["diffusion"] = stage;
    });

    timed("purify", [&] {
      Json stage = Json::object();
      for (int r = 0; r < reps; ++r) {
        auto& D = data[static_cast<std::size_t>(r)];
        StageDir dir(out, "purify", r,
                     fingerprint({fp_diff[static_cast<std::size_t>(r)], cfg.purify.t_star, cfg.purify.inject_final_noise}));
        fp_pur[static_cast<std::size_t>(r)] = dir.fingerprint();
        const bool done = dir.complete();
        if (!done) dir.reset();
        diffusion::PurifyConfig pc;
        pc.t_star = cfg.purify.t_star;
        pc.inject_final_noise = cfg.purify.inject_final_noise;
        Json rj = Json::object();
        for (const auto& [name, set] : D.imperfect) {
          const auto file = dir / ("purified_" + name + ".jsonl");
          demos::DemoSet p;
          if (done) {
            p = demos::load_demos(file);
          } else {
            p = diffusion::purify_dataset(set, pc, *D.denoiser, schedule, derive_seed(stage_seed("purify", r), name), W);
            p.source_label = "purified_" + name;
            demos::save_demos(p, file);
          }
          rj[name] = {{"i_star", pc.i_star(schedule.steps())}, {"hash", demos::demo_hash(p)}};
          D.purified[name] = std::move(p);
        }
        if (!done) dir.mark_done();
        stage["r" + std::to_string(r)] = rj;
      }
      report.stages["purify"] = stage;
    });
  }

  // Training pools per (setting, method).
  auto methods_for = [&](const ReplicateData& D, const std::string& name) {
    std::vector<std::pair<std::string, demos::DemoSet>> pools;
    const demos::DemoSet* raw = nullptr;
    for (const auto& [n, s] : D.imperfect)
      if (n == name) raw = &s;
    const bool pur = cfg.purify.enabled;
    if (cfg.learner.bc) {
      if (cfg.learner.raw_baselines || !pur) pools.emplace_back("bc_all", demos::concat(D.optimal, *raw, "bc_all"));
      if (pur) pools.emplace_back("dp_bc", demos::concat(D.optimal, D.purified.at(name), "dp_bc"));
      if (selected(cfg.eval.filter_settings, name))
        for (const auto& f : cfg.eval.filters) {
          demos::FilterOptions fo;
          fo.kind = demos::filter_kind_from_string(f.kind);
          fo.param = f.param;
          pools.emplace_back("filter_" + f.kind, demos::concat(D.optimal, demos::filter_denoise(*raw, fo), "filter"));
        }
    }
    if (cfg.learner.gail) {
      if (cfg.learner.raw_baselines || !pur) pools.emplace_back("gail_all", demos::concat(D.optimal, *raw, "gail_all"));
      if (pur) pools.emplace_back("dp_gail", demos::concat(D.optimal, D.purified.at(name), "dp_gail"));
    }
    return pools;
  };

  timed("learners", [&] {
    Json stage = Json::object();
    for (int r = 0; r < reps; ++r) {
      auto& D = data[static_cast<std::size_t>(r)];
      const auto upstream = cfg.purify.enabled ? fp_pur[static_cast<std::size_t>(r)] : fp_demos[static_cast<std::size_t>(r)];
      StageDir dir(out, "learners", r,
                   fingerprint({upstream, jc["learner"], jc["eval"]["filters"], jc["eval"]["filter_settings"], cfg.eval.gamma}));
      fp_learn[static_cast<std::size_t>(r)] = dir.fingerprint();
      const bool done = dir.complete();
      if (!done) dir.reset();
      const auto seed = stage_seed("learners", r);
      Json rj = Json::object();
      for (const auto& name : settings) {
        for (const auto& [method, pool] : methods_for(D, name)) {
          const std::string key = name + "/" + method;
          const auto file = dir / (name + "__" + method + ".json");
          const auto s = derive_seed(seed, key);
          const bool is_gail = method.find("gail") != std::string::npos;
          if (done) {
            D.policies.emplace_back(key, imitation::load_policy(file));
            if (is_gail)
              D.gail_curves[key] = curve_from_json(Json::parse(read_file(dir / (name + "__" + method + ".curve.json"))));
          } else if (is_gail) {
            // The discriminator sees inputs in D_o's standardized frame, the frame the denoiser was trained in.
            auto res = imitation::gail_train(pool, env, cfg.learner.gail_cfg, s, W,
                                             diffusion::NormStats::from_data(demos::to_matrix(D.optimal)));
            imitation::save_policy(res.policy, file, s);
            write_file_atomic(dir / (name + "__" + method + ".curve.json"), curve_to_json(res.curve).dump());
            D.gail_curves[key] = res.curve;
            D.policies.emplace_back(key, std::move(res.policy));
          } else {
            Rng rng(s);
            auto res = imitation::bc_train(pool, cfg.learner.bc_cfg, env, rng);
            imitation::save_policy(res.policy, file, s);
            D.policies.emplace_back(key, std::move(res.policy));
          }
          rj[key] = {{"training_transitions", pool.size()},
                     {"policy_hash", content_hash(imitation::policy_to_json(D.policies.back().second).dump())}};
        }
      }
      if (!done) dir.mark_done();
      stage["r" + std::to_string(r)] = rj;
    }
    report.stages["learners"] = stage;
  });

  // Per-(setting, method) returns across replicates, for summaries and t-tests.
  std::map<std::string, std::map<std::string, std::vector<double>>> returns;
  Table returns_t{"returns", {"setting", "method", "replicate", "mean_return", "stderr", "mean_discounted"}, {}};
  Table mmd_t{"mmd", {"setting", "replicate", "mmd_imperfect", "mmd_purified"}, {}};
  std::vector<Table> sweep_tables, decay_tables, gail_tables;

  timed("eval", [&] {
    Json stage = Json::object();
    for (int r = 0; r < reps; ++r) {
      auto& D = data[static_cast<std::size_t>(r)];
      StageDir dir(out, "eval", r,
                   fingerprint({fp_learn[static_cast<std::size_t>(r)], jc["eval"], jc["purify"]["sweep_grid"],
                                jc["purify"]["sweep_seeds"], jc["purify"]["sweep_replicates"], jc["purify"]["sweep_settings"]}));
      const auto seed = stage_seed("eval", r);
      const std::string rs = "r" + std::to_string(r);
      Json rj;
      if (dir.complete()) {
        rj = Json::parse(read_file(dir / "results.json"));
      } else {
        dir.reset();
        rj = Json::object();
        // Every method of a replicate is scored on the same episode starts.
        const auto episodes = derive_seed(seed, "episodes");
        Json ret = Json::object();
        auto score = [&](const std::string& key, const auto& policy) {
          const auto v = envs::evaluate_policy(policy, env, cfg.eval.n_eval_episodes, cfg.eval.gamma, episodes, W);
          ret[key] = {{"mean_return", v.mean_undiscounted}, {"stderr", v.standard_error}, {"mean_discounted", v.mean_discounted}};
        };
        for (const auto& [key, p] : D.policies) score(key, p);
        if (cfg.eval.random_baseline) score("all/random", envs::UniformRandomPolicy(env.action_low(), env.action_high()));
        rj["returns"] = ret;
        for (const auto& [key, c] : D.gail_curves) rj["gail_curves"][key] = curve_to_json(c);

        if (cfg.eval.mmd && cfg.purify.enabled) {
          for (const auto& [name, set] : D.imperfect) {
            const auto n = static_cast<std::size_t>(cfg.eval.mmd_samples);
            auto take = [&](const demos::DemoSet& d, const char* tag) {
              return d.size() > n ? demos::subsample(d, n, derive_seed(derive_seed(seed, tag), name)) : d;
            };
            const auto ref = take(D.reference, "mmd-ref");
            rj["mmd"][name] = {{"imperfect", eval::mmd(ref, take(set, "mmd-imp"))},
                               {"purified", eval::mmd(ref, take(D.purified.at(name), "mmd-pur"))}};
          }
        }
        const bool sweep_here = !cfg.purify.sweep_grid.empty() &&
                                (cfg.purify.sweep_replicates == 0 || r < cfg.purify.sweep_replicates) && cfg.learner.bc;
        if (sweep_here) {
          for (const auto& [name, set] : D.imperfect) {
            if (!selected(cfg.purify.sweep_settings, name)) continue;
            eval::SweepInputs in{set, D.optimal, &*D.denoiser, cfg.learner.bc_cfg, cfg.eval.n_eval_episodes,
                                 cfg.eval.gamma, cfg.purify.inject_final_noise};
            const auto res = eval::t_star_sweep(in, env, cfg.purify.sweep_grid, cfg.purify.sweep_seeds,
                                                derive_seed(derive_seed(seed, "sweep"), name), W);
            Json rows = Json::array();
            for (const auto& row : res.rows)
              rows.push_back({{"t_star", row.t_star}, {"mean_return", row.mean_return}, {"stderr", row.stderr_},
                              {"seed_count", row.seed_count}, {"per_seed", row.per_seed}});
            rj["sweeps"][name] = {{"rows", rows},
                                  {"baseline", {{"mean_return", res.baseline.mean_return}, {"stderr", res.baseline.stderr_}}},
                                  {"argmax_t_star", res.argmax_t_star}};
          }
        }
        if (!cfg.eval.decay_grid.empty()) {
          eval::DecayConfig dc;
          dc.n_samples = static_cast<std::size_t>(cfg.eval.mmd_samples);
          dc.permutations = cfg.eval.decay_permutations;
          for (const auto& [name, set] : D.imperfect) {
            if (!selected(cfg.eval.decay_settings, name)) continue;
            const auto curve = eval::divergence_decay_curve(D.reference, set, schedule, cfg.eval.decay_grid, dc,
                                                            derive_seed(derive_seed(seed, "decay"), name), W);
            Json pts = Json::array();
            for (const auto& p : curve) pts.push_back({{"t", p.t}, {"step", p.step}, {"mmd", p.mmd}, {"null_std", p.null_std}});
            rj["decay"][name] = pts;
          }
        }
        write_file_atomic(dir / "results.json", rj.dump());
        dir.mark_done();
      }

      for (const auto& [key, v] : rj["returns"].items()) {
        const auto slash = key.find('/');
        const std::string setting = key.substr(0, slash), method = key.substr(slash + 1);
        returns[setting][method].push_back(v["mean_return"].get<double>());
        returns_t.rows.push_back({setting, method, std::to_string(r), cell(v["mean_return"].get<double>()),
                                  cell(v["stderr"].get<double>()), cell(v["mean_discounted"].get<double>())});
      }
      if (rj.contains("mmd"))
        for (const auto& [name, v] : rj["mmd"].items())
          mmd_t.rows.push_back({name, std::to_string(r), cell(v["imperfect"].get<double>()), cell(v["purified"].get<double>())});
      if (rj.contains("sweeps"))
        for (const auto& [name, v] : rj["sweeps"].items()) {
          Table t{"sweep_" + name + "_" + rs, {"t_star", "mean_return", "stderr", "seed_count"}, {}};
          for (const auto& row : v["rows"])
            t.rows.push_back({cell(row["t_star"].get<double>()), cell(row["mean_return"].get<double>()),
                              cell(row["stderr"].get<double>()), std::to_string(row["seed_count"].get<int>())});
          sweep_tables.push_back(std::move(t));
        }
      if (rj.contains("decay"))
        for (const auto& [name, v] : rj["decay"].items()) {
          Table t{"decay_" + name + "_" + rs, {"t", "step", "mmd", "null_std"}, {}};
          for (const auto& p : v)
            t.rows.push_back({cell(p["t"].get<double>()), std::to_string(p["step"].get<int>()), cell(p["mmd"].get<double>()),
                              cell(p["null_std"].get<double>())});
          decay_tables.push_back(std::move(t));
        }
      if (rj.contains("gail_curves"))
        for (const auto& [key, v] : rj["gail_curves"].items()) {
          std::string stem = key;
          std::replace(stem.begin(), stem.end(), '/', '_');
          Table t{"gail_" + stem + "_" + rs, {"iteration", "env_return_mean", "env_return_stderr", "disc_loss"}, {}};
          for (const auto& e : curve_from_json(v))
            t.rows.push_back({std::to_string(e.iteration), cell(e.env_return_mean), cell(e.env_return_stderr),
                              cell(-e.disc_objective)});
          gail_tables.push_back(std::move(t));
        }
      stage[rs] = rj;
    }

    Table summary{"returns_summary", {"setting", "method", "n", "mean_return", "stderr"}, {}};
    Json sj = Json::object();
    for (const auto& [setting, by_method] : returns)
      for (const auto& [method, vals] : by_method) {
        const auto [m, se] = envs::mean_and_stderr(vals);
        summary.rows.push_back({setting, method, std::to_string(vals.size()), cell(m), cell(se)});
        sj[setting][method] = {{"n", vals.size()}, {"mean_return", m}, {"stderr", se}, {"per_replicate", vals}};
      }
    stage["summary"] = sj;

    Table ttest{"ttest", {"setting", "method_a", "method_b", "mean_a", "mean_b", "p_value"}, {}};
    Json tj = Json::array();
    for (const auto& [a, b] : cfg.eval.ttest)
      for (const auto& [setting, by_method] : returns) {
        if (!by_method.count(a) || !by_method.count(b)) continue;
        const auto& va = by_method.at(a);
        const auto& vb = by_method.at(b);
        if (va.size() < 2 || vb.size() < 2) continue;
        const double p = eval::welch_t_test(va, vb);
        ttest.rows.push_back({setting, a, b, cell(envs::mean_and_stderr(va).first), cell(envs::mean_and_stderr(vb).first), cell(p)});
        tj.push_back({{"setting", setting}, {"method_a", a}, {"method_b", b}, {"p_value", p}});
      }
    stage["ttest"] = tj;

    if (!cfg.eval.bounds.grid.empty()) {
      Table bt{"bounds", {"t_star", "zeta", "c_varpi", "tv_rhs", "value_gap_rhs"}, {}};
      Json bj = Json::array();
      eval::BoundInputs bi;
      bi.betas.assign(schedule.betas().begin(), schedule.betas().end());
      bi.d = static_cast<int>(env.state_dim() + env.action_dim());
      bi.varpi = cfg.eval.bounds.varpi;
      bi.L = cfg.eval.bounds.L;
      bi.C = cfg.eval.bounds.C;
      bi.C_sw = cfg.eval.bounds.C_sw;
      bi.delta_norm = cfg.eval.bounds.delta_norm;
      bi.r_max = env.r_max();
      bi.gamma = cfg.eval.gamma;
      for (double t : cfg.eval.bounds.grid) {
        bi.t_star = t;
        const auto b = eval::tv_bound(bi);
        bt.rows.push_back({cell(t), cell(b.zeta), cell(b.c_varpi), cell(b.tv_rhs), cell(b.value_gap_rhs)});
        bj.push_back({{"t_star", t}, {"zeta", b.zeta}, {"c_varpi", b.c_varpi}, {"tv_rhs", b.tv_rhs}, {"value_gap_rhs", b.value_gap_rhs}});
      }
      stage["bounds"] = bj;
      report.tables.push_back(std::move(bt));
    }

    report.tables.push_back(std::move(returns_t));
    report.tables.push_back(std::move(summary));
    if (!mmd_t.rows.empty()) report.tables.push_back(std::move(mmd_t));
    if (!ttest.rows.empty()) report.tables.push_back(std::move(ttest));
    for (auto* group : {&sweep_tables, &decay_tables, &gail_tables})
      for (auto& t : *group) report.tables.push_back(std::move(t));
    report.stages["eval"] = stage;
  });

  try {
    emit_report(report, out);
  } catch (const std::exception& e) {
    throw StageError("report", derive_seed(cfg.seed, "report"), e.what());
  }
  return report;
}

}  // namespace dpil::harness
