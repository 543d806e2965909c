#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpil/error.hpp"
#include "dpil/parallel.hpp"
#include "dpil/random.hpp"

namespace dpil::envs {

using Eigen::Index;
using Eigen::VectorXd;

struct StepResult {
  VectorXd next_state;
  double reward = 0.0;
};

template <typename E>
concept Environment = requires(const E& env, Rng& rng, const VectorXd& v) {
  { env.reset(rng) } -> std::convertible_to<VectorXd>;
  { env.step(v, v) } -> std::same_as<StepResult>;
  { env.clip_action(v) } -> std::convertible_to<VectorXd>;
  { env.horizon() } -> std::convertible_to<int>;
  { env.state_dim() } -> std::convertible_to<Index>;
  { env.action_dim() } -> std::convertible_to<Index>;
};

template <typename P>
concept ActionSource = requires(const P& policy, const VectorXd& s, Rng& rng) {
  { policy.act(s, rng) } -> std::convertible_to<VectorXd>;
};

/// Point mass in [-1,1]^d driven toward a goal. s' = clamp(s + clip(a) * dt)
/// to the box, reward r(s) = -||s - goal||, s_0 ~ Uniform([-1,1]^d).
/// The 1-D instance doubles as a linear track for unit tests.
class PointReach {
 public:
  PointReach(VectorXd goal, double dt, double gain, int horizon)
      : goal_(std::move(goal)), dt_(dt), gain_(gain), horizon_(horizon) {
    detail::require(goal_.size() >= 1, "point_reach: goal must be non-empty");
    detail::require(dt_ > 0.0, "point_reach: dt must be positive");
    detail::require(gain_ > 0.0, "point_reach: gain must be positive");
    detail::require(horizon_ >= 1, "point_reach: horizon must be >= 1");
    detail::require(goal_.cwiseAbs().maxCoeff() <= 1.0, "point_reach: goal must lie in [-1,1]^d");
  }

  Index state_dim() const { return goal_.size(); }
  Index action_dim() const { return goal_.size(); }
  int horizon() const { return horizon_; }
  double dt() const { return dt_; }
  double gain() const { return gain_; }
  const VectorXd& goal() const { return goal_; }
  VectorXd action_low() const { return VectorXd::Constant(action_dim(), -1.0); }
  VectorXd action_high() const { return VectorXd::Constant(action_dim(), 1.0); }

  /// Largest |r| over the state box: distance from the goal to the farthest corner.
  double r_max() const { return ((goal_.array().abs() + 1.0)).matrix().norm(); }

  VectorXd reset(Rng& rng) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VectorXd s(state_dim());
    for (Index k = 0; k < s.size(); ++k) s[k] = u(rng);
    return s;
  }

  VectorXd clip_action(const VectorXd& a) const { return a.cwiseMax(-1.0).cwiseMin(1.0); }

  double reward(const VectorXd& s) const { return -(s - goal_).norm(); }

  StepResult step(const VectorXd& s, const VectorXd& a) const {
    if (s.size() != state_dim() || a.size() != action_dim())
      throw InvalidInput("point_reach: state/action dimension mismatch");
    StepResult r;
    r.reward = reward(s);
    r.next_state = (s + clip_action(a) * dt_).cwiseMax(-1.0).cwiseMin(1.0);
    return r;
  }

  /// a*(s) = clip(k * (goal - s)).
  VectorXd optimal_action(const VectorXd& s) const { return clip_action(gain_ * (goal_ - s)); }

 private:
  VectorXd goal_;
  double dt_;
  double gain_;
  int horizon_;
};

inline PointReach point_reach_env(VectorXd goal, double dt = 0.1, double gain_bound = 5.0, int horizon = 50) {
  return PointReach(std::move(goal), dt, gain_bound, horizon);
}

/// Closed-form controller of an environment that exposes `optimal_action`.
template <typename E>
class OptimalController {
 public:
  explicit OptimalController(E env) : env_(std::move(env)) {}
  VectorXd act(const VectorXd& s, Rng&) const { return env_.optimal_action(s); }

 private:
  E env_;
};

template <typename E>
OptimalController<E> optimal_policy(const E& env) {
  static_assert(requires(const E& e, const VectorXd& s) { e.optimal_action(s); },
                "optimal_policy: environment has no analytic controller");
  return OptimalController<E>(env);
}

class UniformRandomPolicy {
 public:
  UniformRandomPolicy(VectorXd low, VectorXd high) : low_(std::move(low)), high_(std::move(high)) {}
  VectorXd act(const VectorXd&, Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    VectorXd a(low_.size());
    for (Index k = 0; k < a.size(); ++k) a[k] = low_[k] + (high_[k] - low_[k]) * u(rng);
    return a;
  }

 private:
  VectorXd low_, high_;
};

/// Type-erased action source for runtime collections of policies.
class AnyPolicy {
 public:
  AnyPolicy() = default;
  template <ActionSource P>
    requires(!std::same_as<std::remove_cvref_t<P>, AnyPolicy>)
  AnyPolicy(P policy)  // NOLINT(google-explicit-constructor)
      : fn_([p = std::make_shared<const P>(std::move(policy))](const VectorXd& s, Rng& rng) {
          return VectorXd(p->act(s, rng));
        }) {}

  VectorXd act(const VectorXd& s, Rng& rng) const { return fn_(s, rng); }
  explicit operator bool() const { return static_cast<bool>(fn_); }

 private:
  std::function<VectorXd(const VectorXd&, Rng&)> fn_;
};

struct Episode {
  std::vector<VectorXd> states;
  std::vector<VectorXd> actions;  // as emitted by the policy, before env clipping
  std::vector<double> rewards;
};

template <Environment E, ActionSource P>
Episode rollout_episode(const P& policy, const E& env, Rng& rng) {
  Episode ep;
  VectorXd s = env.reset(rng);
  const int h = env.horizon();
  ep.states.reserve(h);
  ep.actions.reserve(h);
  ep.rewards.reserve(h);
  for (int t = 0; t < h; ++t) {
    VectorXd a = policy.act(s, rng);
    StepResult r = env.step(s, a);
    if (!std::isfinite(r.reward)) throw NumericalError("rollout: non-finite reward", t);
    ep.states.push_back(s);
    ep.actions.push_back(std::move(a));
    ep.rewards.push_back(r.reward);
    s = std::move(r.next_state);
  }
  return ep;
}

struct PolicyValueEstimate {
  double mean_discounted = 0.0;
  double mean_undiscounted = 0.0;
  double standard_error = 0.0;             // of the undiscounted return
  double standard_error_discounted = 0.0;
  int n_episodes = 0;
  double gamma = 0.0;
};

inline double discounted_sum(const std::vector<double>& rewards, double gamma) {
  double g = 0.0, w = 1.0;
  for (double r : rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

/// Mean and standard error (sample std / sqrt(n); 0 when n == 1).
inline std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

/// Monte-Carlo policy value. Episode k uses an rng seeded from (seed, k), so
/// the estimate does not depend on `workers`.
template <Environment E, ActionSource P>
PolicyValueEstimate evaluate_policy(const P& policy, const E& env, int n_episodes, double gamma, std::uint64_t seed,
                                    int workers = 1) {
  detail::require(n_episodes >= 1, "evaluate_policy: n_episodes must be >= 1");
  detail::require(gamma >= 0.0 && gamma < 1.0, "evaluate_policy: gamma must be in [0,1)");
  std::vector<double> disc(static_cast<std::size_t>(n_episodes)), undisc(static_cast<std::size_t>(n_episodes));
  parallel_for(static_cast<std::size_t>(n_episodes), workers, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    Episode ep = rollout_episode(policy, env, rng);
    disc[k] = discounted_sum(ep.rewards, gamma);
    undisc[k] = discounted_sum(ep.rewards, 1.0);
  });
  PolicyValueEstimate est;
  est.n_episodes = n_episodes;
  est.gamma = gamma;
  std::tie(est.mean_discounted, est.standard_error_discounted) = mean_and_stderr(disc);
  std::tie(est.mean_undiscounted, est.standard_error) = mean_and_stderr(undisc);
  return est;
}

}  // namespace dpil::envs
