#include <gtest/gtest.h>

#include <cmath>

#include "dpil/diffusion.hpp"
#include "diffusion_oracle.hpp"

namespace dpil::diffusion {
namespace {

TEST(MakeSchedule, DefaultEndpoints) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
}

TEST(MakeSchedule, SingleStep) {
  auto s = make_schedule(1, 0.01, 0.01);
  EXPECT_EQ(s.betas().size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.99);
}

TEST(MakeSchedule, TwoStepCumulativeProduct) {
  auto s = make_schedule(2, 0.1, 0.2);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
}

TEST(MakeSchedule, RejectsInvalidRanges) {
  EXPECT_THROW(make_schedule(0, 1e-4, 0.02), InvalidInput);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), InvalidInput);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), InvalidInput);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), InvalidInput);
  EXPECT_THROW(make_schedule(10, 1e-4, 0.02).beta(11), InvalidInput);
  EXPECT_THROW(make_schedule(10, 1e-4, 0.02).beta(0), InvalidInput);
}

TEST(NoiseScheduleProperty, Identities) {
  for (auto [steps, b1, bT] : {std::tuple{1000, 1e-4, 0.02}, std::tuple{100, 1e-3, 0.2}, std::tuple{7, 0.05, 0.5},
                               std::tuple{50, 1e-12, 1e-12}}) {
    auto s = make_schedule(steps, b1, bT);
    for (int i = 1; i <= steps; ++i) {
      EXPECT_EQ(s.alpha(i) + s.beta(i), 1.0);
      EXPECT_EQ(s.alpha(i), 1.0 - s.beta(i));
      if (i > 1) {
        EXPECT_EQ(s.alpha_bar(i), s.alpha_bar(i - 1) * s.alpha(i));
        EXPECT_NEAR(s.alpha_bar(i) / s.alpha_bar(i - 1), s.alpha(i), 2e-16);
        EXPECT_GE(s.beta(i), s.beta(i - 1));
        if (b1 > 1e-10) {
          EXPECT_LT(s.alpha_bar(i), s.alpha_bar(i - 1));
        }
      }
    }
    EXPECT_GT(s.alpha_bar(steps), 0.0);
    EXPECT_LT(s.alpha_bar(1), 1.0);
  }
}

TEST(ForwardDiffuse, NoNoiseLimit) {
  auto s = make_schedule(10, 1e-12, 1e-12);
  Rng rng(1);
  VectorXd x0 = Eigen::Vector3d(0.5, -2, 7);
  EXPECT_LE((forward_diffuse(x0, 10, s, rng) - x0).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ForwardDiffuse, HandEvaluatedTwoStep) {
  auto s = make_schedule(2, 0.1, 0.2);
  VectorXd x = forward_diffuse(Eigen::Vector2d(1, 0), 2, s, zero_draw());
  EXPECT_NEAR(x[0], std::sqrt(0.72), 1e-15);
  EXPECT_NEAR(x[0], 0.84853, 1e-5);
  EXPECT_EQ(x[1], 0.0);
}

TEST(ForwardDiffuse, ZeroSignalReturnsScaledNoise) {
  auto s = make_schedule(100, 1e-3, 0.2);
  VectorXd e = Eigen::Vector2d(0, 1);
  for (int i : {1, 37, 100}) {
    VectorXd x = forward_diffuse(VectorXd::Zero(2), i, s, sequence_draw({e}));
    EXPECT_NEAR(x[1], std::sqrt(1.0 - s.alpha_bar(i)), 1e-15);
    EXPECT_EQ(x[0], 0.0);
  }
}

TEST(ForwardDiffuse, RejectsOutOfRangeStep) {
  auto s = make_schedule(10, 1e-3, 0.2);
  Rng rng(0);
  EXPECT_THROW(forward_diffuse(VectorXd::Zero(1), 0, s, rng), InvalidInput);
  EXPECT_THROW(forward_diffuse(VectorXd::Zero(1), 11, s, rng), InvalidInput);
}

TEST(ForwardDiffuse, MarginalMomentsWithinThreeStandardErrors) {
  auto s = make_schedule(100, 1e-3, 0.2);
  const VectorXd x0 = Eigen::Vector2d(1.5, -0.5);
  for (int i : {5, 30, 90}) {
    auto r = testing::forward_marginal_check(x0, i, s, 10000, 300 + static_cast<std::uint64_t>(i));
    for (Index j = 0; j < 2; ++j) {
      EXPECT_LE(std::abs(r.mean_z[static_cast<std::size_t>(j)]), 3.0) << "step " << i;
      EXPECT_LE(std::abs(r.var_z[static_cast<std::size_t>(j)]), 3.0) << "step " << i;
    }
  }
}

TEST(GaussianScoreDenoiser, ZeroAtDiffusedMean) {
  auto s = make_schedule(100, 1e-3, 0.2);
  VectorXd mu = Eigen::Vector2d(1, -2);
  auto d = gaussian_score_denoiser(mu, 0.7, s);
  for (int i : {1, 50, 100}) EXPECT_LE(d.predict_noise(std::sqrt(s.alpha_bar(i)) * mu, i).norm(), 1e-15);
}

TEST(GaussianScoreDenoiser, StandardNormalSimplification) {
  auto s = make_schedule(100, 1e-3, 0.2);
  auto d = gaussian_score_denoiser(VectorXd::Zero(1), 1.0, s);
  for (int i : {1, 20, 100}) {
    VectorXd x = VectorXd::Constant(1, 0.83);
    EXPECT_NEAR(d.predict_noise(x, i)[0], std::sqrt(1.0 - s.alpha_bar(i)) * 0.83, 1e-15);
  }
}

TEST(GaussianScoreDenoiser, LinearInInput) {
  auto s = make_schedule(100, 1e-3, 0.2);
  const double sigma = 0.4;
  auto d = gaussian_score_denoiser(VectorXd::Constant(1, 2.0), sigma, s);
  for (int i : {3, 60}) {
    const double ab = s.alpha_bar(i);
    const double c = 0.25;
    const double diff = d.predict_noise(VectorXd::Constant(1, 1.0 + c), i)[0] - d.predict_noise(VectorXd::Constant(1, 1.0), i)[0];
    EXPECT_NEAR(diff, std::sqrt(1.0 - ab) * c / (ab * sigma * sigma + 1.0 - ab), 1e-14);
  }
  EXPECT_THROW(gaussian_score_denoiser(VectorXd::Zero(1), 0.0, s), InvalidInput);
}

TEST(ReverseDenoise, OneStepWithZeroDenoiser) {
  auto s = make_schedule(10, 1e-3, 0.2);
  auto d = zero_denoiser(2, s);
  VectorXd v = Eigen::Vector2d(0.3, -1.2);
  VectorXd out = reverse_denoise(v, 1, d, s, zero_draw());
  EXPECT_LE((out - v / std::sqrt(s.alpha(1))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ReverseDenoise, FinalNoiseFlagInjectsAtLastStep) {
  auto s = make_schedule(10, 1e-3, 0.2);
  auto d = zero_denoiser(1, s);
  VectorXd z = VectorXd::Constant(1, 1.0);
  VectorXd off = reverse_denoise(VectorXd::Zero(1), 1, d, s, sequence_draw({z}));
  VectorXd on = reverse_denoise(VectorXd::Zero(1), 1, d, s, sequence_draw({z}), ReverseOptions{true});
  EXPECT_EQ(off[0], 0.0);
  EXPECT_NEAR(on[0], std::sqrt(s.beta(1)), 1e-15);
}

TEST(ReverseDenoise, AnalyticScorePullsTowardMean) {
  auto s = make_schedule(100, 1e-3, 0.2);
  const double mu = 1.0, sigma = 0.5;
  auto d = gaussian_score_denoiser(VectorXd::Constant(1, mu), sigma, s);
  const int i_star = 10;
  double before = 0.0, after = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    VectorXd start = VectorXd::Constant(1, mu + 3 * sigma);
    VectorXd xi = forward_diffuse(start, i_star, s, rng);
    VectorXd out = reverse_denoise(xi, i_star, d, s, rng);
    before += std::abs(start[0] - mu);
    after += std::abs(out[0] - mu);
  }
  EXPECT_LT(after, before);
}

TEST(ReverseDenoise, DeterministicUnderSeed) {
  auto s = make_schedule(100, 1e-3, 0.2);
  auto d = gaussian_score_denoiser(VectorXd::Zero(3), 1.0, s);
  Rng a(5), b(5);
  VectorXd x = Eigen::Vector3d(0.1, 2, -1);
  EXPECT_EQ(reverse_denoise(x, 40, d, s, a), reverse_denoise(x, 40, d, s, b));
}

TEST(ReverseDenoise, RejectsForeignSchedule) {
  auto s = make_schedule(100, 1e-3, 0.2);
  auto other = make_schedule(100, 1e-4, 0.02);
  auto d = zero_denoiser(1, other);
  Rng rng(0);
  EXPECT_THROW(reverse_denoise(VectorXd::Zero(1), 3, d, s, rng), InvalidInput);
}

TEST(ReverseDenoise, NonFiniteStateReportsStep) {
  auto s = make_schedule(10, 1e-3, 0.2);
  auto d = gaussian_score_denoiser(VectorXd::Zero(1), 1.0, s);
  try {
    reverse_denoise(VectorXd::Constant(1, std::nan("")), 4, d, s, zero_draw());
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.index(), 4);
  }
}

TEST(Purify, IStarFromTStar) {
  PurifyConfig c;
  c.t_star = 0.1;
  EXPECT_EQ(c.i_star(100), 10);
  c.t_star = 0.004;
  EXPECT_EQ(c.i_star(100), 1);
  c.t_star = 1.0;
  EXPECT_EQ(c.i_star(100), 100);
  c.t_star = 1.5;
  EXPECT_THROW(c.i_star(100), InvalidInput);
  c.t_star = 0.0;
  EXPECT_THROW(c.i_star(100), InvalidInput);
}

TEST(Purify, CompositionOfHandEvaluatedSteps) {
  auto s = make_schedule(100, 1e-3, 0.2);
  NormStats norm{Eigen::Vector2d(1, -1), Eigen::Vector2d(2, 0.5)};
  auto d = zero_denoiser(2, s, norm);
  PurifyConfig cfg;
  cfg.t_star = 0.01;  // i* = 1
  cfg.fixed_eps = VectorXd::Zero(2);
  cfg.fixed_z = std::vector<VectorXd>{};
  Rng rng(0);
  VectorXd x0 = Eigen::Vector2d(3, 0.25);
  VectorXd expect = norm.denormalize(std::sqrt(s.alpha_bar(1)) * norm.normalize(x0) / std::sqrt(s.alpha(1)));
  EXPECT_LE((purify(x0, cfg, d, s, rng) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Purify, IdempotentInNoNoiseLimit) {
  auto s = make_schedule(100, 1e-12, 1e-12);
  auto d = zero_denoiser(3, s, NormStats{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(0.5, 1, 2)});
  PurifyConfig cfg;
  cfg.t_star = 0.5;
  cfg.fixed_eps = VectorXd::Zero(3);
  cfg.fixed_z = std::vector<VectorXd>{};
  Rng rng(0);
  VectorXd x0 = Eigen::Vector3d(-0.3, 4, 1);
  EXPECT_LE((purify(x0, cfg, d, s, rng) - x0).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Purify, AnalyticOracleMovesPerturbedSamplesTowardMean) {
  auto s = make_schedule(100, 1e-3, 0.2);
  const double mu = 0.0, sigma = 0.3, delta = 0.6;
  auto d = gaussian_score_denoiser(VectorXd::Constant(1, mu), sigma, s);
  PurifyConfig cfg;
  cfg.t_star = 0.2;
  double before = 0.0, after = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    VectorXd x0 = VectorXd::Constant(1, mu + delta);
    before += std::abs(x0[0] - mu);
    after += std::abs(purify(x0, cfg, d, s, rng)[0] - mu);
  }
  EXPECT_LT(after / 1000, before / 1000);
}

TEST(Purify, OracleConsistencyPreservesDataMoments) {
  auto s = make_schedule(100, 1e-3, 0.2);
  const double mu = 1.5, sigma = 0.8;
  auto d = gaussian_score_denoiser(VectorXd::Constant(1, mu), sigma, s);
  for (int i_star : {1, 5, 10}) {
    Rng rng(static_cast<std::uint64_t>(i_star));
    std::normal_distribution<double> data(mu, sigma);
    double m = 0, ss = 0;
    const int n = 20000;
    for (int k = 0; k < n; ++k) {
      VectorXd x0 = VectorXd::Constant(1, data(rng));
      VectorXd xi = forward_diffuse(x0, i_star, s, rng);
      const double out = reverse_denoise(xi, i_star, d, s, rng)[0];
      m += out;
      ss += out * out;
    }
    m /= n;
    const double var = ss / n - m * m;
    EXPECT_NEAR(m, mu, 0.05 * mu) << "i* " << i_star;
    EXPECT_NEAR(var, sigma * sigma, 0.05 * sigma * sigma) << "i* " << i_star;
  }
}

demos::DemoSet gaussian_demos(std::size_t n, std::uint64_t seed) {
  demos::DemoSet d;
  d.state_dim = 1;
  d.action_dim = 1;
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k)
    d.transitions.push_back({VectorXd::Constant(1, g(rng)), VectorXd::Constant(1, 2 * g(rng)), std::nullopt,
                             static_cast<int>(k / 10), static_cast<int>(k % 10)});
  return d;
}

TEST(PurifyDataset, EmptyInEmptyOut) {
  auto s = make_schedule(100, 1e-3, 0.2);
  demos::DemoSet empty;
  empty.state_dim = 1;
  empty.action_dim = 1;
  PurifyConfig cfg;
  EXPECT_TRUE(purify_dataset(empty, cfg, zero_denoiser(2, s), s, 0).empty());
}

TEST(PurifyDataset, PerTransitionDerivedSeeds) {
  auto s = make_schedule(100, 1e-3, 0.2);
  auto d = gaussian_score_denoiser(Eigen::Vector2d(0, 0), 1.0, s);
  auto in = gaussian_demos(40, 3);
  PurifyConfig cfg;
  cfg.t_star = 0.1;
  auto out = purify_dataset(in, cfg, d, s, 77);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t k = 0; k < in.size(); ++k) {
    Rng rng(derive_seed(77, k));
    VectorXd x = purify(in.transitions[k].joint(), cfg, d, s, rng);
    EXPECT_EQ(out.transitions[k].joint(), x);
    EXPECT_EQ(out.transitions[k].episode_id, in.transitions[k].episode_id);
    EXPECT_EQ(out.transitions[k].step_index, in.transitions[k].step_index);
  }
  EXPECT_EQ(out.source_label, in.source_label);
}

TEST(PurifyDataset, WorkerCountDoesNotChangeResults) {
  auto s = make_schedule(100, 1e-3, 0.2);
  Rng rng(1);
  DenoiserTrainConfig tc;
  tc.epochs = 3;
  tc.hidden = 16;
  auto in = gaussian_demos(64, 9);
  auto den = train_denoiser(demos::to_matrix(in), s, tc, rng);
  PurifyConfig cfg;
  cfg.t_star = 0.2;
  EXPECT_EQ(demos::serialize_demos(purify_dataset(in, cfg, den, s, 5, 1)),
            demos::serialize_demos(purify_dataset(in, cfg, den, s, 5, 4)));
}

TEST(PurifyDataset, DimensionMismatchRejected) {
  auto s = make_schedule(100, 1e-3, 0.2);
  PurifyConfig cfg;
  EXPECT_THROW(purify_dataset(gaussian_demos(5, 1), cfg, zero_denoiser(3, s), s, 0), InvalidInput);
}

TEST(PurifyDataset, ManifestRecordsProvenance) {
  auto s = make_schedule(100, 1e-3, 0.2);
  auto in = gaussian_demos(10, 1);
  PurifyConfig cfg;
  cfg.t_star = 0.05;
  auto out = purify_dataset(in, cfg, gaussian_score_denoiser(Eigen::Vector2d(0, 0), 1.0, s), s, 3);
  Json m = purification_manifest(in, out, cfg, s, 3);
  EXPECT_EQ(m.at("i_star").get<int>(), 5);
  EXPECT_EQ(m.at("schedule_hash").get<std::string>(), s.id());
  EXPECT_NE(m.at("dataset_hash_in"), m.at("dataset_hash_out"));
}

TEST(TrainDenoiser, PerfectPredictionHasZeroLoss) {
  auto s = make_schedule(10, 1e-3, 0.2);
  MatrixXd x0 = MatrixXd::Random(2, 5), eps = MatrixXd::Random(2, 5);
  std::vector<int> steps{1, 3, 5, 7, 10};
  auto b = make_noised_batch(x0, steps, eps, s, 8);
  EXPECT_EQ(nn::squared_error(eps, b.target).value(), 0.0);
  EXPECT_NEAR(b.input(0, 2), std::sqrt(s.alpha_bar(5)) * x0(0, 2) + std::sqrt(1 - s.alpha_bar(5)) * eps(0, 2), 1e-15);
}

TEST(TrainDenoiser, RejectsEmptyData) {
  auto s = make_schedule(10, 1e-3, 0.2);
  Rng rng(0);
  EXPECT_THROW(train_denoiser(MatrixXd(2, 0), s, {}, rng), InvalidInput);
}

TEST(TrainDenoiser, BitIdenticalUnderSeed) {
  auto s = make_schedule(50, 1e-3, 0.2);
  auto data = demos::to_matrix(gaussian_demos(100, 2));
  DenoiserTrainConfig tc;
  tc.epochs = 5;
  tc.hidden = 32;
  Rng a(11), b(11);
  auto da = train_denoiser(data, s, tc, a);
  auto db = train_denoiser(data, s, tc, b);
  EXPECT_EQ(denoiser_to_json(da).dump(), denoiser_to_json(db).dump());
  EXPECT_TRUE(std::isfinite(da.final_train_loss));
}

TEST(TrainDenoiser, ConvergesToAnalyticPosteriorOracle) {
  auto r = testing::train_gaussian_denoiser_against_oracle(2024);
  EXPECT_LE(r.max_abs_error, 0.1) << "worst at step " << r.worst_step << " x " << r.worst_x;
}

TEST(DenoiserCheckpoint, RoundTripPreservesPredictions) {
  auto s = make_schedule(50, 1e-3, 0.2);
  DenoiserTrainConfig tc;
  tc.epochs = 2;
  tc.hidden = 16;
  Rng rng(3);
  auto den = train_denoiser(demos::to_matrix(gaussian_demos(30, 2)), s, tc, rng);
  auto back = denoiser_from_json(Json::parse(denoiser_to_json(den).dump()));
  VectorXd x = Eigen::Vector2d(0.4, -0.1);
  EXPECT_EQ(back.predict_noise(x, 17), den.predict_noise(x, 17));
  EXPECT_EQ(back.final_train_loss, den.final_train_loss);
  auto g = denoiser_from_json(denoiser_to_json(gaussian_score_denoiser(Eigen::Vector2d(1, 2), 0.5, s)));
  EXPECT_EQ(g.predict_noise(x, 3), gaussian_score_denoiser(Eigen::Vector2d(1, 2), 0.5, s).predict_noise(x, 3));
}

}  // namespace
}  // namespace dpil::diffusion
