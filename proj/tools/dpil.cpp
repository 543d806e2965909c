// dpil command line: one subcommand per pipeline step plus `run` for the
// whole pipeline. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpil/dpil.hpp"

namespace {

using namespace dpil;
using harness::RunConfig;
namespace fs = std::filesystem;

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run config (defaults fill missing fields)");
  app->add_option("--seed", c.seed, "root seed (overrides DPIL_SEED and the config)");
  app->add_option("--out", c.out, "output directory (overrides DPIL_OUT and the config)");
  app->add_option("--workers", c.workers, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
}

/// Config file, then DPIL_SEED / DPIL_OUT, then flags.
RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : harness::load_config(c.config);
  if (const char* s = std::getenv("DPIL_SEED")) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw InvalidInput(std::string("DPIL_SEED: not a non-negative integer: ") + s);
    }
  }
  if (const char* o = std::getenv("DPIL_OUT")) cfg.output_dir = o;
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.workers) cfg.workers = *c.workers;
  harness::sync_gamma(cfg);
  return cfg;
}

void write_json(const fs::path& p, const Json& j) {
  write_file_atomic(p, j.dump(2) + "\n");
  std::cout << "wrote " << p.string() << "\n";
}

demos::DemoSet load_all(const std::vector<std::string>& paths) {
  demos::DemoSet d = demos::load_demos(paths.at(0));
  for (std::size_t k = 1; k < paths.size(); ++k) d = demos::concat(d, demos::load_demos(paths[k]), "combined");
  return d;
}

void gen_demos(const RunConfig& cfg) {
  const auto env = harness::make_env(cfg.env);
  const auto ctl = envs::optimal_policy(env);
  const fs::path out = cfg.output_dir;
  const auto s = derive_seed(cfg.seed, "demos");
  const auto pool = demos::collect_demos(ctl, env, static_cast<std::size_t>(cfg.demos.optimal_pool), derive_seed(s, "optimal"),
                                         "optimal_pool");
  auto opt = demos::subsample(pool, static_cast<std::size_t>(cfg.demos.optimal_transitions), derive_seed(s, "subsample"));
  opt.source_label = "optimal";
  demos::save_demos(opt, out / "optimal.jsonl");
  std::cout << "wrote " << (out / "optimal.jsonl").string() << " (" << opt.size() << " transitions)\n";
  std::vector<demos::DemoSet> noisy;
  for (double d : cfg.demos.deltas) {
    const auto name = harness::delta_setting(d);
    auto set = demos::collect_demos(demos::wrap_noisy(ctl, d, env), env, static_cast<std::size_t>(cfg.demos.noisy_transitions),
                                    derive_seed(s, name), name);
    set.generator_meta = Json{{"delta", d}};
    demos::save_demos(set, out / (name + ".jsonl"));
    std::cout << "wrote " << (out / (name + ".jsonl")).string() << " (" << set.size() << " transitions)\n";
    noisy.push_back(std::move(set));
  }
  if (cfg.demos.mixed && !noisy.empty()) {
    demos::save_demos(demos::mix_demosets(noisy), out / "mixed.jsonl");
    std::cout << "wrote " << (out / "mixed.jsonl").string() << "\n";
  }
  if (!cfg.demos.checkpoint_fractions.empty()) {
    auto rl = cfg.demos.rl;
    rl.gamma = cfg.eval.gamma;
    rl.snapshot_fractions = cfg.demos.checkpoint_fractions;
    const auto run = imitation::train_reinforce(env, rl, derive_seed(s, "rl"), cfg.workers);
    for (double f : cfg.demos.checkpoint_fractions) {
      const auto name = harness::checkpoint_setting(f);
      demos::save_demos(demos::collect_checkpoint_demos(run.snapshots, f, env,
                                                        static_cast<std::size_t>(cfg.demos.noisy_transitions),
                                                        derive_seed(s, name)),
                        out / (name + ".jsonl"));
      std::cout << "wrote " << (out / (name + ".jsonl")).string() << "\n";
    }
  }
}

void train_diffusion(const RunConfig& cfg, const std::vector<std::string>& demo_paths) {
  const auto d = load_all(demo_paths);
  const auto seed = derive_seed(cfg.seed, "diffusion");
  Rng rng(seed);
  const auto den = diffusion::train_denoiser(demos::to_matrix(d), harness::make_schedule(cfg.diffusion), cfg.diffusion.train, rng);
  const fs::path p = fs::path(cfg.output_dir) / "denoiser.json";
  diffusion::save_denoiser(den, p, seed);
  std::cout << "wrote " << p.string() << " (trained on " << d.size() << " transitions)\n";
}

void purify(const RunConfig& cfg, const std::string& denoiser_path, const std::vector<std::string>& demo_paths) {
  const auto den = diffusion::load_denoiser(denoiser_path);
  const auto d = load_all(demo_paths);
  diffusion::PurifyConfig pc;
  pc.t_star = cfg.purify.t_star;
  pc.inject_final_noise = cfg.purify.inject_final_noise;
  const auto seed = derive_seed(cfg.seed, "purify");
  auto p = diffusion::purify_dataset(d, pc, den, den.schedule(), seed, cfg.workers);
  p.source_label = "purified";
  const fs::path out = cfg.output_dir;
  demos::save_demos(p, out / "purified.jsonl");
  std::cout << "wrote " << (out / "purified.jsonl").string() << "\n";
  write_json(out / "purify_manifest.json", diffusion::purification_manifest(d, p, pc, den.schedule(), seed));
}

void report_policy(const RunConfig& cfg, const imitation::GaussianPolicy& policy, const std::string& kind, std::size_t n_train) {
  const auto env = harness::make_env(cfg.env);
  const auto v = envs::evaluate_policy(policy, env, cfg.eval.n_eval_episodes, cfg.eval.gamma,
                                       derive_seed(cfg.seed, "episodes"), cfg.workers);
  const fs::path out = cfg.output_dir;
  imitation::save_policy(policy, out / "policy.json", cfg.seed);
  std::cout << "wrote " << (out / "policy.json").string() << "\n";
  write_json(out / (kind + "_summary.json"), Json{{"training_transitions", n_train},
                                                   {"n_eval_episodes", v.n_episodes},
                                                   {"mean_return", v.mean_undiscounted},
                                                   {"stderr", v.standard_error},
                                                   {"mean_discounted", v.mean_discounted}});
  std::cout << kind << " mean return " << v.mean_undiscounted << " +- " << v.standard_error << "\n";
}

void train_bc(const RunConfig& cfg, const std::vector<std::string>& demo_paths) {
  const auto d = load_all(demo_paths);
  Rng rng(derive_seed(cfg.seed, "learners"));
  const auto r = imitation::bc_train(d, cfg.learner.bc_cfg, harness::make_env(cfg.env), rng);
  report_policy(cfg, r.policy, "bc", d.size());
}

void train_gail(const RunConfig& cfg, const std::vector<std::string>& demo_paths) {
  const auto d = load_all(demo_paths);
  const auto r = imitation::gail_train(d, harness::make_env(cfg.env), cfg.learner.gail_cfg, derive_seed(cfg.seed, "learners"),
                                       cfg.workers);
  write_file_atomic(fs::path(cfg.output_dir) / "gail_curve.csv", imitation::curve_to_csv(r.curve));
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "gail_curve.csv").string() << "\n";
  report_policy(cfg, r.policy, "gail", d.size());
}

void eval_mmd(const RunConfig& cfg, const std::string& a, const std::string& b, std::optional<double> bandwidth, int samples) {
  auto da = demos::load_demos(a), db = demos::load_demos(b);
  const auto n = static_cast<std::size_t>(samples);
  if (samples > 0 && da.size() > n) da = demos::subsample(da, n, derive_seed(cfg.seed, "mmd-a"));
  if (samples > 0 && db.size() > n) db = demos::subsample(db, n, derive_seed(cfg.seed, "mmd-b"));
  eval::MmdConfig mc{bandwidth};
  const double sigma = eval::resolve_bandwidth(demos::to_matrix(da), demos::to_matrix(db), mc);
  const double m = eval::mmd(da, db, {sigma});
  std::cout << "mmd " << m << " (bandwidth " << sigma << ", " << da.size() << " vs " << db.size() << " samples)\n";
  if (!cfg.output_dir.empty())
    write_json(fs::path(cfg.output_dir) / "mmd.json",
               Json{{"a", a}, {"b", b}, {"mmd", m}, {"bandwidth", sigma}, {"n_a", da.size()}, {"n_b", db.size()}});
}

void sweep_t(const RunConfig& cfg, const std::string& denoiser_path, const std::string& optimal, const std::string& imperfect) {
  if (cfg.purify.sweep_grid.empty()) throw InvalidInput("sweep-t: purify.sweep_grid is empty");
  const auto den = diffusion::load_denoiser(denoiser_path);
  eval::SweepInputs in{demos::load_demos(imperfect), demos::load_demos(optimal), &den, cfg.learner.bc_cfg,
                       cfg.eval.n_eval_episodes, cfg.eval.gamma, cfg.purify.inject_final_noise};
  const auto r = eval::t_star_sweep(in, harness::make_env(cfg.env), cfg.purify.sweep_grid, cfg.purify.sweep_seeds,
                                    derive_seed(cfg.seed, "sweep"), cfg.workers);
  const fs::path p = fs::path(cfg.output_dir) / "sweep.csv";
  write_file_atomic(p, eval::sweep_to_csv(r));
  std::cout << "wrote " << p.string() << "\nbaseline " << r.baseline.mean_return << ", argmax t* " << r.argmax_t_star << "\n";
}

void filter_baseline(const RunConfig& cfg, const std::vector<std::string>& demo_paths, const std::string& kind, double param,
                     bool states) {
  demos::FilterOptions fo;
  fo.kind = demos::filter_kind_from_string(kind);
  fo.param = param;
  fo.smooth_states = states;
  const auto f = demos::filter_denoise(load_all(demo_paths), fo);
  const fs::path p = fs::path(cfg.output_dir) / ("filtered_" + kind + ".jsonl");
  demos::save_demos(f, p);
  std::cout << "wrote " << p.string() << "\n";
}

void ttest(const std::vector<double>& a, const std::vector<double>& b) {
  const double p = eval::welch_t_test(a, b);
  std::cout << "one-sided Welch p (mean a > mean b) = " << p << "\n";
}

void run(const RunConfig& cfg) {
  const auto rep = harness::run_pipeline(cfg);
  std::cout << "report written to " << cfg.output_dir << "\n";
  for (const auto& t : rep.tables)
    if (t.name == "returns_summary")
      for (const auto& r : t.rows) std::cout << "  " << r[0] << " " << r[1] << ": " << r[3] << " +- " << r[4] << "\n";
  for (const auto& [stage, s] : rep.timing_seconds) std::cout << "  " << stage << " " << s << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion purification of imperfect demonstrations, with BC / GAIL learners and evaluation"};
  app.require_subcommand(1);
  Common c;
  std::vector<std::string> demos_in;
  std::string denoiser, optimal, imperfect, a_path, b_path, kind = "mean";
  double param = 5.0;
  bool states = false;
  std::optional<double> bandwidth;
  int samples = 0;
  std::vector<double> ta, tb;

  auto* gen = app.add_subcommand("gen-demos", "generate optimal and imperfect demonstrations from the config");
  add_common(gen, c);
  auto* diff = app.add_subcommand("train-diffusion", "train the denoiser on optimal demonstrations");
  add_common(diff, c);
  diff->add_option("--demos", demos_in, "optimal demo files (JSONL)")->required()->check(CLI::ExistingFile);
  auto* pur = app.add_subcommand("purify", "forward-diffuse then reverse-denoise a demo set");
  add_common(pur, c);
  pur->add_option("--denoiser", denoiser, "denoiser checkpoint")->required()->check(CLI::ExistingFile);
  pur->add_option("--demos", demos_in, "demo files to purify")->required()->check(CLI::ExistingFile);
  auto* bc = app.add_subcommand("train-bc", "behavioral cloning on the union of the given demo files");
  add_common(bc, c);
  bc->add_option("--demos", demos_in, "demo files")->required()->check(CLI::ExistingFile);
  auto* gail = app.add_subcommand("train-gail", "adversarial imitation on the union of the given demo files");
  add_common(gail, c);
  gail->add_option("--demos", demos_in, "expert demo files")->required()->check(CLI::ExistingFile);
  auto* mmd = app.add_subcommand("eval-mmd", "MMD between two demo sets over joint (s, a)");
  add_common(mmd, c);
  mmd->add_option("--a", a_path, "first demo file")->required()->check(CLI::ExistingFile);
  mmd->add_option("--b", b_path, "second demo file")->required()->check(CLI::ExistingFile);
  mmd->add_option("--bandwidth", bandwidth, "RBF bandwidth (default: median heuristic)")->check(CLI::PositiveNumber);
  mmd->add_option("--samples", samples, "subsample each set to this many transitions (0 = all)")->check(CLI::NonNegativeNumber);
  auto* sweep = app.add_subcommand("sweep-t", "DP-BC return over purify.sweep_grid");
  add_common(sweep, c);
  sweep->add_option("--denoiser", denoiser, "denoiser checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--optimal", optimal, "optimal demo file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--imperfect", imperfect, "imperfect demo file")->required()->check(CLI::ExistingFile);
  auto* filt = app.add_subcommand("filter-baseline", "smooth actions along each episode with a classical filter");
  add_common(filt, c);
  filt->add_option("--demos", demos_in, "demo files")->required()->check(CLI::ExistingFile);
  filt->add_option("--kind", kind, "mean | median | gaussian")->check(CLI::IsMember({"mean", "median", "gaussian"}));
  filt->add_option("--param", param, "window length (mean, median) or sigma (gaussian)")->check(CLI::PositiveNumber);
  filt->add_flag("--smooth-states", states, "smooth states too");
  auto* tt = app.add_subcommand("ttest", "one-sided Welch t-test, H1: mean(a) > mean(b)");
  add_common(tt, c);
  tt->add_option("--a", ta, "sample a")->required()->expected(2, -1);
  tt->add_option("--b", tb, "sample b")->required()->expected(2, -1);
  auto* runc = app.add_subcommand("run", "full pipeline: demos, diffusion, purify, learners, eval, report");
  add_common(runc, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    const RunConfig cfg = resolve(c);
    if (*gen) gen_demos(cfg);
    if (*diff) train_diffusion(cfg, demos_in);
    if (*pur) purify(cfg, denoiser, demos_in);
    if (*bc) train_bc(cfg, demos_in);
    if (*gail) train_gail(cfg, demos_in);
    if (*mmd) eval_mmd(cfg, a_path, b_path, bandwidth, samples);
    if (*sweep) sweep_t(cfg, denoiser, optimal, imperfect);
    if (*filt) filter_baseline(cfg, demos_in, kind, param, states);
    if (*tt) ttest(ta, tb);
    if (*runc) run(cfg);
  } catch (const harness::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitInvalid;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const harness::StageError& e) {
    std::cerr << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
