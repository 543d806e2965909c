#include <gtest/gtest.h>

#include "dpil/demos.hpp"
#include "dpil/envs.hpp"

namespace dpil::envs {
namespace {

/// r = 1 every step, state never changes.
struct ConstantRewardEnv {
  int h = 3;
  VectorXd reset(Rng&) const { return VectorXd::Zero(1); }
  StepResult step(const VectorXd& s, const VectorXd&) const { return {s, 1.0}; }
  VectorXd clip_action(const VectorXd& a) const { return a; }
  int horizon() const { return h; }
  Index state_dim() const { return 1; }
  Index action_dim() const { return 1; }
};

struct ZeroPolicy {
  VectorXd act(const VectorXd& s, Rng&) const { return VectorXd::Zero(s.size()); }
};

TEST(PointReach, AtGoalActionAndRewardAreZero) {
  auto env = point_reach_env(Eigen::Vector2d(0.3, -0.2));
  EXPECT_EQ(env.optimal_action(env.goal()), VectorXd::Zero(2));
  EXPECT_EQ(env.reward(env.goal()), 0.0);
}

TEST(PointReach, OptimalActionSaturates) {
  auto env = point_reach_env(Eigen::Vector2d(1, 0), 0.1, 100.0);
  EXPECT_EQ(env.optimal_action(Eigen::Vector2d(0, 0)), Eigen::Vector2d(1, 0));
}

TEST(PointReach, OneStepDynamics) {
  auto env = point_reach_env(Eigen::Vector2d(1, 0), 0.1);
  auto r = env.step(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0));
  EXPECT_NEAR(r.next_state[0], 0.1, 1e-15);
  EXPECT_EQ(r.next_state[1], 0.0);
  EXPECT_DOUBLE_EQ(r.reward, -1.0);
}

TEST(PointReach, RejectsInvalidParameters) {
  EXPECT_THROW(point_reach_env(Eigen::Vector2d(0, 0), 0.0), InvalidInput);
  EXPECT_THROW(point_reach_env(Eigen::Vector2d(0, 0), 0.1, 5.0, 0), InvalidInput);
  EXPECT_THROW(point_reach_env(Eigen::Vector2d(2, 0)), InvalidInput);
}

TEST(PointReach, RewardBoundHoldsAlongNoisyRollouts) {
  auto env = point_reach_env(Eigen::Vector2d(0.5, -0.5));
  auto noisy = demos::wrap_noisy(optimal_policy(env), 2.0);  // unclipped, large actions
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto ep = rollout_episode(noisy, env, rng);
    for (std::size_t t = 0; t < ep.states.size(); ++t) {
      EXPECT_LE(std::abs(ep.rewards[t]), env.r_max() + 1e-12);
      EXPECT_LE(ep.states[t].cwiseAbs().maxCoeff(), 1.0);
    }
  }
}

TEST(PointReach, FixedSeedGivesIdenticalTrajectories) {
  auto env = point_reach_env(Eigen::Vector2d(0, 0));
  auto noisy = demos::wrap_noisy(optimal_policy(env), 0.4, env);
  Rng a(42), b(42);
  auto ea = rollout_episode(noisy, env, a);
  auto eb = rollout_episode(noisy, env, b);
  EXPECT_EQ(ea.rewards, eb.rewards);
}

TEST(EvaluatePolicy, DiscountedGeometricSum) {
  auto est = evaluate_policy(ZeroPolicy{}, ConstantRewardEnv{3}, 4, 0.5, 1);
  EXPECT_DOUBLE_EQ(est.mean_discounted, 1.75);
  EXPECT_DOUBLE_EQ(est.mean_undiscounted, 3.0);
  EXPECT_EQ(est.standard_error, 0.0);
}

TEST(EvaluatePolicy, SingleStepHorizonDiscountIsIrrelevant) {
  auto env = point_reach_env(Eigen::Vector2d(0, 0), 0.1, 5.0, 1);
  auto est = evaluate_policy(ZeroPolicy{}, env, 5, 0.9, 3);
  EXPECT_DOUBLE_EQ(est.mean_discounted, est.mean_undiscounted);
}

TEST(EvaluatePolicy, RejectsBadArguments) {
  EXPECT_THROW(evaluate_policy(ZeroPolicy{}, ConstantRewardEnv{}, 0, 0.5, 1), InvalidInput);
  EXPECT_THROW(evaluate_policy(ZeroPolicy{}, ConstantRewardEnv{}, 1, 1.0, 1), InvalidInput);
}

TEST(EvaluatePolicy, IndependentOfWorkerCount) {
  auto env = point_reach_env(Eigen::Vector2d(0, 0));
  auto noisy = demos::wrap_noisy(optimal_policy(env), 0.6, env);
  auto a = evaluate_policy(noisy, env, 20, 0.995, 9, 1);
  auto b = evaluate_policy(noisy, env, 20, 0.995, 9, 4);
  EXPECT_EQ(a.mean_discounted, b.mean_discounted);
  EXPECT_EQ(a.standard_error, b.standard_error);
}

TEST(OptimalPolicy, DeterministicController) {
  auto env = point_reach_env(Eigen::Vector2d(0.2, 0.1));
  auto pi = optimal_policy(env);
  Rng rng(1);
  VectorXd s = Eigen::Vector2d(-0.4, 0.7);
  EXPECT_EQ(pi.act(s, rng), pi.act(s, rng));
  EXPECT_EQ(pi.act(env.goal(), rng), VectorXd::Zero(2));
}

TEST(OptimalPolicy, BeatsEveryNoisyVersion) {
  auto env = point_reach_env(Eigen::Vector2d(0, 0));
  auto pi = optimal_policy(env);
  const double opt = evaluate_policy(pi, env, 100, 0.995, 5).mean_undiscounted;
  for (double delta : {0.25, 0.4, 0.6}) {
    const double noisy = evaluate_policy(demos::wrap_noisy(pi, delta, env), env, 100, 0.995, 5).mean_undiscounted;
    EXPECT_GT(opt, noisy) << "delta " << delta;
  }
}

TEST(OptimalPolicy, DemoQualityIsMonotoneInNoise) {
  auto env = point_reach_env(Eigen::Vector2d(0, 0));
  auto pi = optimal_policy(env);
  std::vector<double> returns;
  for (double delta : {0.6, 0.4, 0.25, 0.0})
    returns.push_back(evaluate_policy(demos::wrap_noisy(pi, delta, env), env, 100, 0.995, 11).mean_undiscounted);
  for (std::size_t k = 1; k < returns.size(); ++k) EXPECT_LT(returns[k - 1], returns[k]);
}

TEST(OptimalPolicy, CollectedReturnMatchesClosedFormRollout) {
  // Closed-form oracle: with |k dt| < 1 and per-axis saturation, each axis
  // moves at unit speed until within gain^-1 of the goal, then contracts
  // geometrically by (1 - k dt). Recompute that recursion directly.
  auto env = point_reach_env(Eigen::Vector2d(0, 0));
  auto d = demos::collect_demos(optimal_policy(env), env, 50 * 40, 17);
  double collected = 0.0;
  for (const auto& t : d.transitions) collected += *t.reward;
  collected /= 40.0;

  double oracle = 0.0;
  for (int ep = 0; ep < 40; ++ep) {
    Rng rng(derive_seed(17, static_cast<std::uint64_t>(ep)));
    VectorXd e = -env.reset(rng);  // goal - s
    for (int t = 0; t < 50; ++t) {
      oracle -= e.norm();
      for (Index j = 0; j < e.size(); ++j) {
        const double mag = std::abs(e[j]);
        const double move = std::min(1.0, 5.0 * mag) * 0.1;
        e[j] = std::copysign(mag - move, e[j]);
      }
    }
  }
  oracle /= 40.0;
  EXPECT_NEAR(collected, oracle, 0.02 * std::abs(oracle));
}

}  // namespace
}  // namespace dpil::envs
