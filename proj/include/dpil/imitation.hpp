#pragma once

// Gaussian MLP policies, behavioral cloning by maximum likelihood, the
// sigmoid discriminator, REINFORCE policy-gradient steps and the adversarial
// imitation loop built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpil/demos.hpp"
#include "dpil/diffusion.hpp"
#include "dpil/envs.hpp"
#include "dpil/error.hpp"
#include "dpil/io.hpp"
#include "dpil/nn.hpp"
#include "dpil/parallel.hpp"
#include "dpil/random.hpp"

namespace dpil::imitation {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// ---- policy ---------------------------------------------------------------

/// Diagonal Gaussian policy. The net maps a state to [mean; raw log-std].
struct GaussianPolicy {
  nn::Mlp net;
  VectorXd action_low;
  VectorXd action_high;

  Index state_dim() const { return net.input_dim(); }
  Index action_dim() const { return action_low.size(); }

  struct Dist {
    VectorXd mean;
    VectorXd log_std;
  };

  Dist dist(const VectorXd& s) const {
    if (s.size() != state_dim()) throw InvalidInput("policy: state dimension mismatch");
    VectorXd out = net.apply(s, nn::Mode::Eval);
    const Index a = action_dim();
    return {out.head(a), out.tail(a).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax)};
  }

  /// Unclipped draw from N(mean(s), std(s)^2).
  VectorXd sample(const VectorXd& s, Rng& rng) const {
    Dist d = dist(s);
    return d.mean + d.log_std.array().exp().matrix().cwiseProduct(standard_normal(rng, action_dim()));
  }

  VectorXd clip(const VectorXd& a) const { return a.cwiseMax(action_low).cwiseMin(action_high); }

  /// Sampled action clipped to the bounds.
  VectorXd act(const VectorXd& s, Rng& rng) const { return clip(sample(s, rng)); }
  VectorXd mean_action(const VectorXd& s) const { return clip(dist(s).mean); }
};

/// Emits raw (unclipped) samples so rollouts record the action whose density
/// the policy gradient needs; the environment clips on its own.
struct RawSampler {
  const GaussianPolicy* policy;
  VectorXd act(const VectorXd& s, Rng& rng) const { return policy->sample(s, rng); }
};

/// Deterministic mean-action controller.
struct MeanActionPolicy {
  GaussianPolicy policy;
  VectorXd act(const VectorXd& s, Rng&) const { return policy.mean_action(s); }
};

inline GaussianPolicy make_gaussian_policy(Index state_dim, VectorXd action_low, VectorXd action_high,
                                           const std::vector<int>& hidden, Rng& rng) {
  detail::require(action_low.size() == action_high.size() && action_low.size() >= 1,
                  "policy: action bounds must have equal positive dimension");
  detail::require((action_low.array() < action_high.array()).all(), "policy: action_low must be < action_high");
  std::vector<int> dims{static_cast<int>(state_dim)};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(static_cast<int>(2 * action_low.size()));
  return {nn::Mlp(nn::dense_config(dims, nn::Activation::Tanh), rng), std::move(action_low), std::move(action_high)};
}

/// Exact diagonal-Gaussian log density of `a` under the policy at `s`.
inline double policy_log_prob(const GaussianPolicy& policy, const VectorXd& s, const VectorXd& a) {
  if (a.size() != policy.action_dim()) throw InvalidInput("policy_log_prob: action dimension mismatch");
  auto d = policy.dist(s);
  const VectorXd z = (a - d.mean).cwiseQuotient(d.log_std.array().exp().matrix());
  return -0.5 * z.squaredNorm() - d.log_std.sum() - 0.5 * static_cast<double>(a.size()) * std::log(2.0 * std::numbers::pi);
}

/// Per-sample loss -w_j log pi(a_j|s_j) - c H(pi(.|s_j)) on raw net outputs
/// (columns), with the gradient of its batch mean. Log-std is clamped and
/// receives no gradient outside the clamp range.
inline nn::LossEval weighted_log_prob_loss(const MatrixXd& out, const MatrixXd& actions, const VectorXd& weights,
                                           double entropy_coef) {
  const Index a = actions.rows(), n = out.cols();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  nn::LossEval le{VectorXd(n), MatrixXd(2 * a, n)};
  for (Index j = 0; j < n; ++j) {
    double logp = 0.0, entropy = 0.0;
    for (Index k = 0; k < a; ++k) {
      const double raw = out(a + k, j);
      const double ls = std::clamp(raw, kLogStdMin, kLogStdMax);
      const double inside = (raw >= kLogStdMin && raw <= kLogStdMax) ? 1.0 : 0.0;
      const double z = (actions(k, j) - out(k, j)) * std::exp(-ls);
      logp += -0.5 * z * z - ls - half_log_2pi;
      entropy += ls + 0.5 + half_log_2pi;
      le.grad(k, j) = -weights[j] * z * std::exp(-ls) / static_cast<double>(n);
      le.grad(a + k, j) = inside * (-weights[j] * (z * z - 1.0) - entropy_coef) / static_cast<double>(n);
    }
    le.per_sample[j] = -weights[j] * logp - entropy_coef * entropy;
  }
  return le;
}

// ---- behavioral cloning ---------------------------------------------------

struct BcConfig {
  int epochs = 1000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::vector<int> hidden{100, 100};
};

struct BcResult {
  GaussianPolicy policy;
  std::vector<double> epoch_nll;  // mean negative log-likelihood per epoch
  double final_nll() const { return epoch_nll.back(); }
};

/// Maximum-likelihood fit of the Gaussian policy to the demo actions.
inline BcResult bc_train(const demos::DemoSet& demos, const BcConfig& cfg, const VectorXd& action_low,
                         const VectorXd& action_high, Rng& rng) {
  if (demos.empty()) throw InvalidInput("bc_train: empty demonstration set");
  detail::require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "bc_train: invalid config");
  detail::require(action_low.size() == demos.action_dim, "bc_train: action bounds do not match demos");
  const Index sd = demos.state_dim, ad = demos.action_dim;
  const auto n = static_cast<Index>(demos.size());
  MatrixXd states(sd, n), actions(ad, n);
  for (Index j = 0; j < n; ++j) {
    states.col(j) = demos.transitions[static_cast<std::size_t>(j)].state;
    actions.col(j) = demos.transitions[static_cast<std::size_t>(j)].action;
  }
  BcResult r{make_gaussian_policy(sd, action_low, action_high, cfg.hidden, rng), {}};
  nn::OptimizerState opt(nn::AdamConfig{cfg.learning_rate});
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index m = std::min<Index>(cfg.batch_size, n - start);
      MatrixXd xs(sd, m), as(ad, m);
      for (Index j = 0; j < m; ++j) {
        xs.col(j) = states.col(order[static_cast<std::size_t>(start + j)]);
        as.col(j) = actions.col(order[static_cast<std::size_t>(start + j)]);
      }
      const VectorXd ones = VectorXd::Ones(m);
      try {
        auto g = nn::mlp_gradient(
            r.policy.net, [&](const MatrixXd& out) { return weighted_log_prob_loss(out, as, ones, 0.0); }, xs);
        nn::optimizer_step(opt, r.policy.net.mutable_params(), g.grads);
        sum += g.loss * static_cast<double>(m);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("bc_train: ") + e.what(), epoch);
      }
    }
    r.epoch_nll.push_back(sum / static_cast<double>(n));
  }
  return r;
}

template <envs::Environment E>
BcResult bc_train(const demos::DemoSet& demos, const BcConfig& cfg, const E& env, Rng& rng) {
  return bc_train(demos, cfg, env.action_low(), env.action_high(), rng);
}

// ---- discriminator --------------------------------------------------------

/// D_w(s, a) = sigmoid(V_w(normalize(s, a))).
struct Discriminator {
  nn::Mlp net;
  diffusion::NormStats norm;

  MatrixXd prepare(const MatrixXd& joint) const { return norm.normalize(joint); }
  VectorXd logits(const MatrixXd& joint) const { return net.forward(prepare(joint), nn::Mode::Eval).row(0).transpose(); }
  double prob(const VectorXd& joint) const { return sigmoid(net.apply(norm.normalize(joint), nn::Mode::Eval)[0]); }
};

inline Discriminator make_discriminator(diffusion::NormStats norm, const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> dims{static_cast<int>(norm.mean.size())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return {nn::Mlp(nn::dense_config(dims, nn::Activation::Tanh), rng), std::move(norm)};
}

/// mean log D(expert) + mean log(1 - D(agent)); columns are joint (s, a).
inline double discriminator_objective(const Discriminator& disc, const MatrixXd& expert, const MatrixXd& agent) {
  detail::require(expert.cols() >= 1 && agent.cols() >= 1, "discriminator: batches must be non-empty");
  const VectorXd ve = disc.logits(expert), va = disc.logits(agent);
  double a = 0.0, b = 0.0;
  for (Index j = 0; j < ve.size(); ++j) a -= softplus(-ve[j]);
  for (Index j = 0; j < va.size(); ++j) b -= softplus(va[j]);
  return a / static_cast<double>(ve.size()) + b / static_cast<double>(va.size());
}

/// One ascent step on the objective (descent on its negation). Returns the
/// objective before the step.
inline double discriminator_update(Discriminator& disc, nn::OptimizerState& opt, const MatrixXd& expert,
                                   const MatrixXd& agent) {
  detail::require(expert.cols() >= 1 && agent.cols() >= 1, "discriminator_update: batches must be non-empty");
  const Index ne = expert.cols(), na = agent.cols(), n = ne + na;
  MatrixXd batch(expert.rows(), n);
  batch << disc.prepare(expert), disc.prepare(agent);
  // Per-sample weights make the batch mean equal the two separate means.
  auto loss = [&](const MatrixXd& out) {
    nn::LossEval le{VectorXd(n), MatrixXd(1, n)};
    const double we = static_cast<double>(n) / ne, wa = static_cast<double>(n) / na;
    for (Index j = 0; j < n; ++j) {
      const double v = out(0, j);
      if (j < ne) {
        le.per_sample[j] = we * softplus(-v);
        le.grad(0, j) = -we * sigmoid(-v) / static_cast<double>(n);
      } else {
        le.per_sample[j] = wa * softplus(v);
        le.grad(0, j) = wa * sigmoid(v) / static_cast<double>(n);
      }
    }
    return le;
  };
  auto g = nn::mlp_gradient(disc.net, loss, batch);
  nn::optimizer_step(opt, disc.net.mutable_params(), g.grads);
  return -g.loss;
}

/// -log(1 - D(s, a)) = softplus(V(s, a)).
inline std::vector<double> surrogate_rewards(const Discriminator& disc, const MatrixXd& joint) {
  VectorXd v = disc.logits(joint);
  std::vector<double> r(static_cast<std::size_t>(v.size()));
  for (Index j = 0; j < v.size(); ++j) r[static_cast<std::size_t>(j)] = softplus(v[j]);
  return r;
}

// ---- on-policy rollouts and REINFORCE ------------------------------------

/// Whole episodes from the current policy, flattened in episode order.
struct RolloutBatch {
  MatrixXd states;
  MatrixXd actions;           // raw policy samples (for log-densities)
  MatrixXd executed_actions;  // after the environment's clipping
  std::vector<double> env_rewards;
  std::vector<std::size_t> episode_start;  // plus a final sentinel = size
  std::vector<double> episode_returns;     // undiscounted env return

  std::size_t size() const { return env_rewards.size(); }
  /// (state, executed action) columns, comparable with recorded demos.
  MatrixXd joint() const {
    MatrixXd j(states.rows() + actions.rows(), states.cols());
    j << states, executed_actions;
    return j;
  }
};

/// Episode k uses an rng seeded from (seed, k); identical for any `workers`.
template <envs::Environment E>
RolloutBatch collect_rollouts(const GaussianPolicy& policy, const E& env, int n_episodes, std::uint64_t seed,
                              int workers = 1) {
  detail::require(n_episodes >= 1, "collect_rollouts: need at least one episode");
  std::vector<envs::Episode> eps(static_cast<std::size_t>(n_episodes));
  parallel_for(eps.size(), workers, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    eps[k] = envs::rollout_episode(RawSampler{&policy}, env, rng);
  });
  std::size_t total = 0;
  for (const auto& e : eps) total += e.rewards.size();
  RolloutBatch b;
  b.states.resize(env.state_dim(), static_cast<Index>(total));
  b.actions.resize(env.action_dim(), static_cast<Index>(total));
  b.executed_actions.resize(env.action_dim(), static_cast<Index>(total));
  std::size_t c = 0;
  for (const auto& e : eps) {
    b.episode_start.push_back(c);
    b.episode_returns.push_back(envs::discounted_sum(e.rewards, 1.0));
    for (std::size_t t = 0; t < e.rewards.size(); ++t, ++c) {
      b.states.col(static_cast<Index>(c)) = e.states[t];
      b.actions.col(static_cast<Index>(c)) = e.actions[t];
      b.executed_actions.col(static_cast<Index>(c)) = env.clip_action(e.actions[t]);
      b.env_rewards.push_back(e.rewards[t]);
    }
  }
  b.episode_start.push_back(c);
  return b;
}

/// G_t = sum_{k >= t} gamma^{k-t} r_k within each episode.
inline std::vector<double> reward_to_go(const std::vector<double>& rewards, const std::vector<std::size_t>& episode_start,
                                        double gamma) {
  std::vector<double> g(rewards.size());
  for (std::size_t e = 0; e + 1 < episode_start.size(); ++e) {
    double acc = 0.0;
    for (std::size_t t = episode_start[e + 1]; t-- > episode_start[e];) {
      acc = rewards[t] + gamma * acc;
      g[t] = acc;
    }
  }
  return g;
}

/// Advantage = reward-to-go minus its batch mean.
inline VectorXd advantages(const std::vector<double>& rewards, const std::vector<std::size_t>& episode_start,
                           double gamma) {
  auto g = reward_to_go(rewards, episode_start, gamma);
  VectorXd a = Eigen::Map<const VectorXd>(g.data(), static_cast<Index>(g.size()));
  return (a.array() - a.mean()).matrix();
}

/// -mean(A log pi(a|s)) - c mean(H): the surrogate whose gradient is the
/// REINFORCE estimator plus entropy bonus.
inline nn::GradientResult policy_gradient(const GaussianPolicy& policy, const MatrixXd& states, const MatrixXd& actions,
                                          const VectorXd& adv, double entropy_coef) {
  return nn::mlp_gradient(
      policy.net, [&](const MatrixXd& out) { return weighted_log_prob_loss(out, actions, adv, entropy_coef); }, states);
}

/// One REINFORCE-with-baseline step on `rewards` (one per transition of the
/// batch, e.g. surrogate rewards). Returns the surrogate loss before the step.
inline double policy_gradient_step(GaussianPolicy& policy, nn::OptimizerState& opt, const RolloutBatch& batch,
                                   const std::vector<double>& rewards, double gamma, double entropy_coef) {
  detail::require(rewards.size() == batch.size(), "policy_gradient_step: one reward per transition required");
  detail::require(gamma >= 0.0 && gamma < 1.0, "policy_gradient_step: gamma must be in [0,1)");
  const VectorXd adv = advantages(rewards, batch.episode_start, gamma);
  auto g = policy_gradient(policy, batch.states, batch.actions, adv, entropy_coef);
  if (!nn::all_finite(g.grads)) throw NumericalError("policy_gradient_step: non-finite gradient", 0);
  nn::optimizer_step(opt, policy.net.mutable_params(), g.grads);
  return g.loss;
}

// ---- RL on the true reward (checkpoint-style demonstrators) --------------

struct RlConfig {
  int iterations = 200;
  int episodes_per_iter = 10;
  double learning_rate = 1e-3;
  double gamma = 0.995;
  double entropy_coef = 0.0;
  std::vector<int> hidden{100, 100};
  std::vector<double> snapshot_fractions{0.3, 0.6, 1.0};
};

struct RlResult {
  GaussianPolicy policy;
  std::vector<demos::PolicySnapshot> snapshots;
  std::vector<double> iteration_returns;
};

/// REINFORCE on the environment reward; snapshots (stochastic policies) are
/// taken after round(fraction * iterations) iterations.
template <envs::Environment E>
RlResult train_reinforce(const E& env, const RlConfig& cfg, std::uint64_t seed, int workers = 1) {
  detail::require(cfg.iterations >= 1 && cfg.episodes_per_iter >= 1, "train_reinforce: invalid config");
  Rng init(derive_seed(seed, "init"));
  RlResult r{make_gaussian_policy(env.state_dim(), env.action_low(), env.action_high(), cfg.hidden, init), {}, {}};
  nn::OptimizerState opt(nn::AdamConfig{cfg.learning_rate});
  auto snapshot_due = [&](int done) {
    for (double f : cfg.snapshot_fractions)
      if (std::max(1L, std::lround(f * cfg.iterations)) == done) r.snapshots.push_back({f, r.policy});
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    auto batch = collect_rollouts(r.policy, env, cfg.episodes_per_iter, derive_seed(seed, static_cast<std::uint64_t>(it)),
                                  workers);
    r.iteration_returns.push_back(envs::mean_and_stderr(batch.episode_returns).first);
    try {
      policy_gradient_step(r.policy, opt, batch, batch.env_rewards, cfg.gamma, cfg.entropy_coef);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("train_reinforce: ") + e.what(), it);
    }
    snapshot_due(it + 1);
  }
  return r;
}

// ---- adversarial imitation -----------------------------------------------

struct GailConfig {
  int iterations = 100;
  int disc_updates_per_iter = 5;
  int policy_updates_per_iter = 1;
  int rollout_transitions = 5000;
  int disc_batch = 256;
  double gamma = 0.995;
  double entropy_coef = 0.0;
  double disc_learning_rate = 3e-4;
  double policy_learning_rate = 3e-4;
  std::vector<int> hidden{100, 100};
};

struct GailIteration {
  int iteration = 0;
  double env_return_mean = 0.0;
  double env_return_stderr = 0.0;
  double disc_objective = 0.0;  // mean over this iteration's updates
};

struct GailResult {
  GaussianPolicy policy;
  Discriminator discriminator;
  std::vector<GailIteration> curve;
};

inline void validate(const GailConfig& c) {
  detail::require(c.iterations >= 1, "gail: iterations must be >= 1");
  detail::require(c.disc_updates_per_iter >= 1, "gail: disc_updates_per_iter must be >= 1");
  detail::require(c.policy_updates_per_iter >= 0, "gail: policy_updates_per_iter must be >= 0");
  detail::require(c.rollout_transitions >= 1 && c.disc_batch >= 1, "gail: batch sizes must be positive");
  detail::require(c.gamma >= 0.0 && c.gamma < 1.0, "gail: gamma must be in [0,1)");
}

inline MatrixXd sample_columns(const MatrixXd& m, Index count, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, m.cols() - 1);
  MatrixXd out(m.rows(), count);
  for (Index j = 0; j < count; ++j) out.col(j) = m.col(pick(rng));
  return out;
}

/// Alternates discriminator updates on (expert demos, fresh on-policy
/// rollouts) with REINFORCE steps on the surrogate reward. `initial` seeds
/// the policy when given (otherwise a fresh one is built).
template <envs::Environment E>
GailResult gail_train(const demos::DemoSet& expert, const E& env, const GailConfig& cfg, std::uint64_t seed,
                      int workers = 1, std::optional<diffusion::NormStats> disc_norm = std::nullopt,
                      std::optional<GaussianPolicy> initial = std::nullopt) {
  validate(cfg);
  if (expert.empty()) throw InvalidInput("gail_train: empty demonstration set");
  if (expert.state_dim != env.state_dim() || expert.action_dim != env.action_dim())
    throw InvalidInput("gail_train: environment dimensions do not match demos");
  const MatrixXd expert_joint = demos::to_matrix(expert);
  Rng init(derive_seed(seed, "init"));
  GailResult r{initial ? *initial
                       : make_gaussian_policy(env.state_dim(), env.action_low(), env.action_high(), cfg.hidden, init),
               make_discriminator(disc_norm ? *disc_norm : diffusion::NormStats::from_data(expert_joint), cfg.hidden,
                                  init),
               {}};
  nn::OptimizerState popt(nn::AdamConfig{cfg.policy_learning_rate});
  nn::OptimizerState dopt(nn::AdamConfig{cfg.disc_learning_rate});
  const int episodes = std::max(1, (cfg.rollout_transitions + env.horizon() - 1) / env.horizon());
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::uint64_t it_seed = derive_seed(seed, static_cast<std::uint64_t>(it));
    auto batch = collect_rollouts(r.policy, env, episodes, it_seed, workers);
    const MatrixXd agent_joint = batch.joint();
    Rng rng(derive_seed(it_seed, "disc"));
    double obj = 0.0;
    try {
      for (int k = 0; k < cfg.disc_updates_per_iter; ++k) {
        const Index m = std::min<Index>(cfg.disc_batch, std::max(expert_joint.cols(), agent_joint.cols()));
        obj += discriminator_update(r.discriminator, dopt, sample_columns(expert_joint, m, rng),
                                    sample_columns(agent_joint, m, rng));
      }
      const auto rewards = surrogate_rewards(r.discriminator, agent_joint);
      for (int k = 0; k < cfg.policy_updates_per_iter; ++k)
        policy_gradient_step(r.policy, popt, batch, rewards, cfg.gamma, cfg.entropy_coef);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("gail_train: ") + e.what(), it);
    }
    auto [mean, se] = envs::mean_and_stderr(batch.episode_returns);
    if (!std::isfinite(mean)) throw NumericalError("gail_train: non-finite return", it);
    r.curve.push_back({it, mean, se, obj / cfg.disc_updates_per_iter});
  }
  return r;
}

/// iteration,env_return_mean,env_return_stderr,disc_loss (disc_loss is the
/// negated objective, 2 log 2 at the saddle).
inline std::string curve_to_csv(const std::vector<GailIteration>& curve) {
  std::ostringstream os;
  os << "iteration,env_return_mean,env_return_stderr,disc_loss\n";
  for (const auto& c : curve)
    os << c.iteration << ',' << format_double(c.env_return_mean) << ',' << format_double(c.env_return_stderr) << ','
       << format_double(-c.disc_objective) << '\n';
  return os.str();
}

// ---- checkpoints ------------------------------------------------------------

inline Json policy_to_json(const GaussianPolicy& p) {
  using nn::detail_json::vec_to_json;
  return Json{{"net", nn::mlp_to_json(p.net)},
              {"action_low", vec_to_json(p.action_low)},
              {"action_high", vec_to_json(p.action_high)}};
}

inline GaussianPolicy policy_from_json(const Json& j) {
  using nn::detail_json::vec_from_json;
  GaussianPolicy p{nn::mlp_from_json(j.at("net")), vec_from_json(j.at("action_low")), vec_from_json(j.at("action_high"))};
  if (p.net.output_dim() != 2 * p.action_dim()) throw std::runtime_error("policy checkpoint: output size mismatch");
  return p;
}

inline void save_policy(const GaussianPolicy& p, const std::filesystem::path& path, std::uint64_t seed) {
  write_file_atomic(path, make_checkpoint("gaussian_policy", policy_to_json(p), seed).dump());
}

inline GaussianPolicy load_policy(const std::filesystem::path& path) {
  return policy_from_json(checkpoint_body(Json::parse(read_file(path)), "gaussian_policy"));
}

}  // namespace dpil::imitation
