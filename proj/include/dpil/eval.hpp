#pragma once

// Sample-based evaluation: RBF-kernel MMD with a permutation null, the
// diffused-divergence decay curve, the TV / value-gap bound calculators, the
// t* sweep over purify + BC + rollout, and a one-sided Welch t-test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "dpil/demos.hpp"
#include "dpil/diffusion.hpp"
#include "dpil/envs.hpp"
#include "dpil/error.hpp"
#include "dpil/imitation.hpp"
#include "dpil/parallel.hpp"
#include "dpil/random.hpp"

namespace dpil::eval {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---- MMD ----------------------------------------------------------------------

struct MmdConfig {
  /// RBF bandwidth sigma; unset means the median pooled pairwise distance.
  std::optional<double> bandwidth;
};

/// Median of all pairwise Euclidean distances in the pooled columns of X and Y.
inline double median_heuristic(const MatrixXd& x, const MatrixXd& y) {
  MatrixXd pooled(x.rows(), x.cols() + y.cols());
  pooled << x, y;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.cols() * (pooled.cols() - 1) / 2));
  for (Index i = 0; i < pooled.cols(); ++i)
    for (Index j = i + 1; j < pooled.cols(); ++j) d.push_back((pooled.col(i) - pooled.col(j)).norm());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m > 0.0 ? m : 1.0;
}

inline double resolve_bandwidth(const MatrixXd& x, const MatrixXd& y, const MmdConfig& cfg) {
  if (cfg.bandwidth) {
    detail::require(*cfg.bandwidth > 0.0, "mmd: bandwidth must be positive");
    return *cfg.bandwidth;
  }
  return median_heuristic(x, y);
}

namespace detail_mmd {

inline double within_sum(const MatrixXd& x, double inv2s2) {
  double s = 0.0;
  for (Index i = 0; i < x.cols(); ++i)
    for (Index j = i + 1; j < x.cols(); ++j) s += std::exp(-(x.col(i) - x.col(j)).squaredNorm() * inv2s2);
  return 2.0 * s;
}

/// Cross-kernel sum, accumulated in sorted order so swapping X and Y gives
/// the identical floating-point result.
inline double cross_sum(const MatrixXd& x, const MatrixXd& y, double inv2s2) {
  std::vector<double> k;
  k.reserve(static_cast<std::size_t>(x.cols() * y.cols()));
  for (Index i = 0; i < x.cols(); ++i)
    for (Index j = 0; j < y.cols(); ++j) k.push_back(std::exp(-(x.col(i) - y.col(j)).squaredNorm() * inv2s2));
  std::sort(k.begin(), k.end());
  double s = 0.0;
  for (double v : k) s += v;
  return s;
}

}  // namespace detail_mmd

/// Unbiased U-statistic MMD^2 with k(u, v) = exp(-||u - v||^2 / (2 sigma^2)).
inline double mmd_squared(const MatrixXd& x, const MatrixXd& y, double sigma) {
  detail::require(x.cols() >= 2 && y.cols() >= 2, "mmd: each sample set needs at least 2 points");
  detail::require(x.rows() == y.rows(), "mmd: sample dimensions differ");
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double m = static_cast<double>(x.cols()), n = static_cast<double>(y.cols());
  const double kxx = detail_mmd::within_sum(x, inv2s2) / (m * (m - 1.0));
  const double kyy = detail_mmd::within_sum(y, inv2s2) / (n * (n - 1.0));
  return (kxx + kyy) - 2.0 * detail_mmd::cross_sum(x, y, inv2s2) / (m * n);
}

/// sqrt(max(0, unbiased MMD^2)); columns are samples.
inline double mmd(const MatrixXd& x, const MatrixXd& y, const MmdConfig& cfg = {}) {
  detail::require(x.cols() >= 2 && y.cols() >= 2, "mmd: each sample set needs at least 2 points");
  detail::require(x.rows() == y.rows(), "mmd: sample dimensions differ");
  return std::sqrt(std::max(0.0, mmd_squared(x, y, resolve_bandwidth(x, y, cfg))));
}

inline double mmd(const demos::DemoSet& x, const demos::DemoSet& y, const MmdConfig& cfg = {}) {
  return mmd(demos::to_matrix(x), demos::to_matrix(y), cfg);
}

/// Standard deviation of MMD over random relabelings of the pooled sample
/// (the estimator's spread when both sets share one distribution).
inline double mmd_permutation_null_std(const MatrixXd& x, const MatrixXd& y, double sigma, int permutations,
                                       std::uint64_t seed) {
  detail::require(permutations >= 2, "mmd_permutation_null_std: need at least 2 permutations");
  MatrixXd pooled(x.rows(), x.cols() + y.cols());
  pooled << x, y;
  std::vector<double> vals;
  Rng rng(seed);
  std::vector<Index> idx(static_cast<std::size_t>(pooled.cols()));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    MatrixXd a(x.rows(), x.cols()), b(y.rows(), y.cols());
    for (Index j = 0; j < x.cols(); ++j) a.col(j) = pooled.col(idx[static_cast<std::size_t>(j)]);
    for (Index j = 0; j < y.cols(); ++j) b.col(j) = pooled.col(idx[static_cast<std::size_t>(x.cols() + j)]);
    vals.push_back(std::sqrt(std::max(0.0, mmd_squared(a, b, sigma))));
  }
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(vals.size() - 1));
}

// ---- divergence decay ------------------------------------------------------

struct DecayPoint {
  double t = 0.0;
  int step = 0;
  double mmd = 0.0;
  double null_std = 0.0;
};

struct DecayConfig {
  std::size_t n_samples = 500;
  int permutations = 20;
  MmdConfig mmd;
};

/// At each t, forward-diffuses both sets (in the optimal set's standardized
/// coordinates) to step max(1, round(t T)) and measures MMD between the
/// diffused sets. Each sample keeps one noise vector across the whole grid,
/// so neighbouring points differ by the schedule rather than by fresh noise;
/// every point is still a draw from the exact marginal at its step.
inline std::vector<DecayPoint> divergence_decay_curve(const demos::DemoSet& optimal, const demos::DemoSet& imperfect,
                                                      const diffusion::NoiseSchedule& schedule,
                                                      const std::vector<double>& t_grid, const DecayConfig& cfg,
                                                      std::uint64_t seed, int workers = 1) {
  detail::require(!t_grid.empty(), "divergence_decay_curve: empty t grid");
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    detail::require(t_grid[k] > 0.0 && t_grid[k] <= 1.0, "divergence_decay_curve: t must lie in (0,1]");
    if (k > 0) detail::require(t_grid[k] > t_grid[k - 1], "divergence_decay_curve: t grid must be ascending");
  }
  detail::require(optimal.joint_dim() == imperfect.joint_dim(), "divergence_decay_curve: dimension mismatch");
  auto take = [&](const demos::DemoSet& d, const char* tag) {
    const std::size_t n = std::min(cfg.n_samples, d.size());
    return demos::to_matrix(demos::subsample(d, n, derive_seed(seed, tag)));
  };
  const auto norm = diffusion::NormStats::from_data(demos::to_matrix(optimal));
  const MatrixXd xo = norm.normalize(take(optimal, "sample-optimal"));
  const MatrixXd xn = norm.normalize(take(imperfect, "sample-imperfect"));
  Rng noise_rng(derive_seed(seed, "noise"));
  const MatrixXd eo = standard_normal(noise_rng, xo.rows(), xo.cols());
  const MatrixXd en = standard_normal(noise_rng, xn.rows(), xn.cols());
  auto diffuse = [&](const MatrixXd& x, const MatrixXd& eps, int step) {
    MatrixXd out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j)
      out.col(j) = diffusion::forward_diffuse(x.col(j), step, schedule, [&](Index) { return VectorXd(eps.col(j)); });
    return out;
  };
  std::vector<DecayPoint> out(t_grid.size());
  parallel_for(t_grid.size(), workers, [&](std::size_t k) {
    diffusion::PurifyConfig pc;
    pc.t_star = t_grid[k];
    const int step = pc.i_star(schedule.steps());
    const MatrixXd a = diffuse(xo, eo, step), b = diffuse(xn, en, step);
    const double sigma = resolve_bandwidth(a, b, cfg.mmd);
    out[k] = {t_grid[k], step, std::sqrt(std::max(0.0, mmd_squared(a, b, sigma))),
              mmd_permutation_null_std(a, b, sigma, cfg.permutations, derive_seed(seed, "null") + k)};
  });
  return out;
}

// ---- bound diagnostics -----------------------------------------------------

/// sum_{i <= i*} beta_i / 2 * (1/T), i* = max(1, round(t* T)).
inline double zeta(double t_star, std::span<const double> betas) {
  detail::require(t_star > 0.0 && t_star <= 1.0, "zeta: t_star must lie in (0,1]");
  detail::require(!betas.empty(), "zeta: empty beta table");
  const auto steps = static_cast<int>(betas.size());
  const int i_star = std::max(1, static_cast<int>(std::lround(t_star * steps)));
  double s = 0.0;
  for (int i = 0; i < i_star; ++i) s += betas[static_cast<std::size_t>(i)] / 2.0;
  return s / steps;
}

inline double zeta(double t_star, const diffusion::NoiseSchedule& schedule) { return zeta(t_star, schedule.betas()); }

/// sqrt(2d + 4 sqrt(d log(1/varpi)) + 4 log(1/varpi)), varpi in (0, 1].
inline double c_varpi(int d, double varpi) {
  detail::require(d >= 1, "c_varpi: dimension must be >= 1");
  detail::require(varpi > 0.0 && varpi <= 1.0, "c_varpi: varpi must lie in (0,1]");
  const double l = std::log(1.0 / varpi);
  return std::sqrt(2.0 * d + 4.0 * std::sqrt(d * l) + 4.0 * l);
}

struct BoundInputs {
  double t_star = 0.1;
  std::vector<double> betas;
  int d = 4;
  double varpi = 0.05;
  double L = 1.0;
  double C = 0.0;
  double C_sw = 1.0;
  double delta_norm = 0.0;
  double r_max = 1.0;
  double gamma = 0.995;
};

struct BoundResult {
  double zeta = 0.0;
  double c_varpi = 0.0;
  double tv_rhs = 0.0;
  double value_gap_rhs = 0.0;
};

/// tv_rhs = L(|delta| + sqrt(e^{2 zeta} - 1) C_varpi + zeta C_sw) + C and
/// value_gap_rhs = R_max / (1 - gamma)^2 * tv_rhs.
inline BoundResult tv_bound(const BoundInputs& in) {
  detail::require(in.gamma >= 0.0 && in.gamma < 1.0, "tv_bound: gamma must lie in [0,1)");
  detail::require(in.L >= 0.0 && in.C >= 0.0 && in.C_sw >= 0.0 && in.delta_norm >= 0.0,
                  "tv_bound: L, C, C_sw, |delta| must be non-negative");
  BoundResult r;
  r.zeta = zeta(in.t_star, in.betas);
  r.c_varpi = c_varpi(in.d, in.varpi);
  r.tv_rhs = in.L * (in.delta_norm + std::sqrt(std::expm1(2.0 * r.zeta)) * r.c_varpi + r.zeta * in.C_sw) + in.C;
  r.value_gap_rhs = in.r_max / ((1.0 - in.gamma) * (1.0 - in.gamma)) * r.tv_rhs;
  return r;
}

// ---- Welch t-test ----------------------------------------------------------

/// One-sided Welch test of H1: mean(a) > mean(b). When both variances are
/// zero the result is 0.5 for equal means, else 0 or 1 by the sign.
inline double welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  detail::require(a.size() >= 2 && b.size() >= 2, "welch_t_test: each sample needs at least 2 values");
  auto moments = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = va / na, qb = vb / nb;
  if (qa + qb == 0.0) return ma == mb ? 0.5 : (ma > mb ? 0.0 : 1.0);
  const double t = (ma - mb) / std::sqrt(qa + qb);
  const double df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  boost::math::students_t dist(df);
  return boost::math::cdf(boost::math::complement(dist, t));
}

// ---- t* sweep ------------------------------------------------------------------

/// Inputs shared by every grid point: the imperfect set to purify, the
/// optimal set always added to the training pool, and the frozen denoiser.
struct SweepInputs {
  demos::DemoSet imperfect;
  demos::DemoSet optimal;
  const diffusion::Denoiser* denoiser = nullptr;
  imitation::BcConfig bc;
  int n_eval_episodes = 10;
  double gamma = 0.995;
  bool inject_final_noise = false;
};

struct SweepRow {
  double t_star = 0.0;  // 0 marks the no-purification baseline
  double mean_return = 0.0;
  double stderr_ = 0.0;
  int seed_count = 0;
  std::vector<double> per_seed;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepRow baseline;
  double argmax_t_star = 0.0;
};

/// Mean undiscounted return of a BC policy trained on `pool`. Evaluation
/// episodes depend only on `eval_seed`, so every method sees the same starts.
template <envs::Environment E>
double bc_return(const demos::DemoSet& pool, const imitation::BcConfig& cfg, const E& env, int n_eval, double gamma,
                 std::uint64_t train_seed, std::uint64_t eval_seed, int workers = 1) {
  Rng rng(train_seed);
  auto r = imitation::bc_train(pool, cfg, env, rng);
  return envs::evaluate_policy(r.policy, env, n_eval, gamma, eval_seed, workers).mean_undiscounted;
}

inline SweepRow summarize_row(double t, std::vector<double> per_seed) {
  auto [m, se] = envs::mean_and_stderr(per_seed);
  return {t, m, se, static_cast<int>(per_seed.size()), std::move(per_seed)};
}

/// For each t*: purify, train BC on optimal + purified, evaluate; repeated
/// over n_seeds. The baseline row trains on optimal + raw imperfect.
template <envs::Environment E>
SweepResult t_star_sweep(const SweepInputs& in, const E& env, const std::vector<double>& t_grid, int n_seeds,
                         std::uint64_t seed, int workers = 1) {
  detail::require(!t_grid.empty(), "t_star_sweep: empty t grid");
  detail::require(n_seeds >= 1, "t_star_sweep: n_seeds must be >= 1");
  detail::require(in.denoiser != nullptr, "t_star_sweep: missing denoiser");
  const auto& schedule = in.denoiser->schedule();
  SweepResult res;
  auto seeds = [&](std::uint64_t k) {
    return std::pair{derive_seed(derive_seed(seed, "bc"), k), derive_seed(derive_seed(seed, "eval"), k)};
  };
  std::vector<double> base;
  for (int k = 0; k < n_seeds; ++k) {
    auto [ts, es] = seeds(static_cast<std::uint64_t>(k));
    base.push_back(bc_return(demos::concat(in.optimal, in.imperfect, "all"), in.bc, env, in.n_eval_episodes, in.gamma,
                             ts, es, workers));
  }
  res.baseline = summarize_row(0.0, base);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    diffusion::PurifyConfig pc;
    pc.t_star = t_grid[g];
    pc.inject_final_noise = in.inject_final_noise;
    std::vector<double> vals;
    for (int k = 0; k < n_seeds; ++k) {
      auto [ts, es] = seeds(static_cast<std::uint64_t>(k));
      const auto purified = diffusion::purify_dataset(
          in.imperfect, pc, *in.denoiser, schedule,
          derive_seed(derive_seed(seed, "purify"), g * 1000003ULL + static_cast<std::uint64_t>(k)), workers);
      vals.push_back(bc_return(demos::concat(in.optimal, purified, "dp"), in.bc, env, in.n_eval_episodes, in.gamma, ts,
                               es, workers));
    }
    res.rows.push_back(summarize_row(t_grid[g], std::move(vals)));
  }
  auto best = std::max_element(res.rows.begin(), res.rows.end(),
                               [](const SweepRow& a, const SweepRow& b) { return a.mean_return < b.mean_return; });
  res.argmax_t_star = best->t_star;
  return res;
}

// ---- CSV -------------------------------------------------------------------------

inline std::string sweep_to_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "t_star,mean_return,stderr,seed_count\n";
  for (const auto& row : r.rows)
    os << format_double(row.t_star) << ',' << format_double(row.mean_return) << ',' << format_double(row.stderr_) << ','
       << row.seed_count << '\n';
  return os.str();
}

inline std::string decay_to_csv(const std::vector<DecayPoint>& c) {
  std::ostringstream os;
  os << "t,step,mmd,null_std\n";
  for (const auto& p : c)
    os << format_double(p.t) << ',' << p.step << ',' << format_double(p.mmd) << ',' << format_double(p.null_std) << '\n';
  return os.str();
}

}  // namespace dpil::eval
