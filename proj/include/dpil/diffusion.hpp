#pragma once

// DDPM noise schedule, noise-predictor training, forward diffusion, reverse
// denoising and the forward-then-reverse purification of demonstrations.
//
// Steps are 1-based: step i uses beta_i, alpha_i = 1 - beta_i and
// alpha_bar_i = prod_{s <= i} alpha_s. Training draws i0 ~ Uniform{0..T-1}
// and uses step i = i0 + 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dpil/demos.hpp"
#include "dpil/error.hpp"
#include "dpil/io.hpp"
#include "dpil/nn.hpp"
#include "dpil/parallel.hpp"
#include "dpil/random.hpp"

namespace dpil::diffusion {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Any non-decreasing beta table with entries in (0, 1).
  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    detail::require(!beta_.empty(), "schedule: need at least one step");
    for (std::size_t k = 0; k < beta_.size(); ++k) {
      detail::require(beta_[k] > 0.0 && beta_[k] < 1.0, "schedule: beta must lie in (0,1)");
      if (k > 0) detail::require(beta_[k] >= beta_[k - 1], "schedule: beta must be non-decreasing");
    }
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t k = 0; k < beta_.size(); ++k) {
      alpha_[k] = 1.0 - beta_[k];
      prod *= alpha_[k];
      alpha_bar_[k] = prod;
    }
    Fnv1a h;
    h.update(std::span<const double>(beta_));
    id_ = hex64(h.digest());
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int i) const { return beta_[index(i)]; }
  double alpha(int i) const { return alpha_[index(i)]; }
  double alpha_bar(int i) const { return alpha_bar_[index(i)]; }
  std::span<const double> betas() const { return beta_; }

  /// Content hash of the beta table.
  const std::string& id() const { return id_; }

 private:
  std::size_t index(int i) const {
    if (i < 1 || i > steps())
      throw InvalidInput("schedule: step " + std::to_string(i) + " outside 1.." + std::to_string(steps()));
    return static_cast<std::size_t>(i - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::string id_;
};

/// beta_i = beta_1 + (i-1)/(T-1) * (beta_T - beta_1).
inline NoiseSchedule make_schedule(int steps, double beta_1, double beta_T) {
  detail::require(steps >= 1, "make_schedule: T must be >= 1");
  detail::require(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0, "make_schedule: need 0 < beta_1 <= beta_T < 1");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i)
    b[static_cast<std::size_t>(i - 1)] =
        steps == 1 ? beta_1 : beta_1 + static_cast<double>(i - 1) / static_cast<double>(steps - 1) * (beta_T - beta_1);
  return NoiseSchedule(std::move(b));
}

// ---- noise sources -------------------------------------------------------

/// Supplies the standard-normal vectors consumed by diffusion steps.
using NoiseDraw = std::function<VectorXd(Index dim)>;

inline NoiseDraw rng_draw(Rng& rng) {
  return [&rng](Index dim) { return standard_normal(rng, dim); };
}

inline NoiseDraw zero_draw() {
  return [](Index dim) { return VectorXd(VectorXd::Zero(dim)); };
}

/// Returns the given vectors in order, then zeros once exhausted.
inline NoiseDraw sequence_draw(std::vector<VectorXd> seq) {
  auto state = std::make_shared<std::pair<std::vector<VectorXd>, std::size_t>>(std::move(seq), 0);
  return [state](Index dim) {
    if (state->second < state->first.size()) {
      VectorXd v = state->first[state->second++];
      if (v.size() != dim) throw InvalidInput("sequence_draw: noise vector has wrong dimension");
      return v;
    }
    return VectorXd(VectorXd::Zero(dim));
  };
}

// ---- normalization and time embedding -----------------------------------

struct NormStats {
  VectorXd mean;
  VectorXd std;

  static NormStats identity(Index dim) { return {VectorXd::Zero(dim), VectorXd::Ones(dim)}; }

  /// Per-dimension mean and population std of the columns, std floored at 1e-6.
  static NormStats from_data(const MatrixXd& x) {
    detail::require(x.cols() >= 1, "norm stats: empty data");
    VectorXd m = x.rowwise().mean();
    VectorXd s = ((x.colwise() - m).array().square().rowwise().mean()).sqrt();
    return {m, s.cwiseMax(1e-6)};
  }

  VectorXd normalize(const VectorXd& x) const { return (x - mean).cwiseQuotient(std); }
  VectorXd denormalize(const VectorXd& z) const { return z.cwiseProduct(std) + mean; }
  MatrixXd normalize(const MatrixXd& x) const {
    return ((x.colwise() - mean).array().colwise() / std.array()).matrix();
  }
};

/// Sinusoidal features of the step index: sin(i w_k) then cos(i w_k) with
/// w_k = 10000^(-k / (dim/2)).
inline VectorXd time_embedding(int step, int dim) {
  detail::require(dim >= 2 && dim % 2 == 0, "time_embedding: dimension must be even and >= 2");
  const int half = dim / 2;
  VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    e[k] = std::sin(step * w);
    e[half + k] = std::cos(step * w);
  }
  return e;
}

// ---- denoiser -------------------------------------------------------------

struct LearnedPredictor {
  nn::Mlp net;
  int embedding_dim = 32;
};

/// Closed-form E[eps | x_i] for data ~ N(mu, sigma^2 I).
struct GaussianScorePredictor {
  VectorXd mu;
  double sigma = 1.0;
};

struct ZeroPredictor {};

/// Noise predictor phi(x, i) acting in normalized coordinates, plus the
/// normalization it expects and the schedule it belongs to.
class Denoiser {
 public:
  using Model = std::variant<LearnedPredictor, GaussianScorePredictor, ZeroPredictor>;

  Denoiser(Model model, NormStats norm, NoiseSchedule schedule, Index dim)
      : model_(std::move(model)), norm_(std::move(norm)), schedule_(std::move(schedule)), dim_(dim) {
    detail::require(norm_.mean.size() == dim_ && norm_.std.size() == dim_, "denoiser: norm stats dimension mismatch");
    detail::require(norm_.std.minCoeff() >= 1e-6, "denoiser: norm std entries must be >= 1e-6");
  }

  /// phi(x, i) for a normalized input x at step i.
  VectorXd predict_noise(const VectorXd& x, int step) const {
    if (x.size() != dim_) throw InvalidInput("denoiser: input dimension mismatch");
    return std::visit(
        [&](const auto& m) -> VectorXd {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, LearnedPredictor>) {
            VectorXd in(dim_ + m.embedding_dim);
            in << x, time_embedding(step, m.embedding_dim);
            return m.net.apply(in, nn::Mode::Eval);
          } else if constexpr (std::is_same_v<M, GaussianScorePredictor>) {
            const double ab = schedule_.alpha_bar(step);
            return std::sqrt(1.0 - ab) * (x - std::sqrt(ab) * m.mu) / (ab * m.sigma * m.sigma + 1.0 - ab);
          } else {
            return VectorXd::Zero(dim_);
          }
        },
        model_);
  }

  Index dim() const { return dim_; }
  const NormStats& norm_stats() const { return norm_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::string& schedule_id() const { return schedule_.id(); }
  const Model& model() const { return model_; }

  /// Mean training loss over the final epoch (NaN for analytic models).
  double final_train_loss = std::nan("");

 private:
  Model model_;
  NormStats norm_;
  NoiseSchedule schedule_;
  Index dim_;
};

inline Denoiser gaussian_score_denoiser(const VectorXd& mu, double sigma, const NoiseSchedule& schedule) {
  detail::require(sigma > 0.0, "gaussian_score_denoiser: sigma must be positive");
  return Denoiser(GaussianScorePredictor{mu, sigma}, NormStats::identity(mu.size()), schedule, mu.size());
}

inline Denoiser zero_denoiser(Index dim, const NoiseSchedule& schedule, NormStats norm) {
  return Denoiser(ZeroPredictor{}, std::move(norm), schedule, dim);
}

inline Denoiser zero_denoiser(Index dim, const NoiseSchedule& schedule) {
  return zero_denoiser(dim, schedule, NormStats::identity(dim));
}

struct DenoiserTrainConfig {
  int epochs = 2000;
  int batch_size = 64;
  double learning_rate = 1e-4;
  int hidden = 128;
  int linear_layers = 5;
  double dropout = 0.2;
  bool batch_norm = true;
  int embedding_dim = 32;
  bool normalize = true;
  /// Learning rate reached at the last epoch as a fraction of the initial one
  /// (linear in epochs). 1 keeps it constant.
  double final_lr_fraction = 1.0;
};

/// Builds the input batch [x_i ; emb(i)] and target eps for x0 columns.
struct NoisedBatch {
  MatrixXd input;
  MatrixXd target;
};

inline NoisedBatch make_noised_batch(const MatrixXd& x0, std::span<const int> steps, const MatrixXd& eps,
                                     const NoiseSchedule& schedule, int embedding_dim) {
  const Index d = x0.rows();
  NoisedBatch b{MatrixXd(d + embedding_dim, x0.cols()), eps};
  for (Index j = 0; j < x0.cols(); ++j) {
    const int i = steps[static_cast<std::size_t>(j)];
    const double ab = schedule.alpha_bar(i);
    b.input.col(j).head(d) = std::sqrt(ab) * x0.col(j) + std::sqrt(1.0 - ab) * eps.col(j);
    b.input.col(j).tail(embedding_dim) = time_embedding(i, embedding_dim);
  }
  return b;
}

/// Minimizes E ||eps - phi(sqrt(ab_i) x0 + sqrt(1 - ab_i) eps, i)||^2 over the
/// columns of `data` (raw units) with Adam.
inline Denoiser train_denoiser(const MatrixXd& data, const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                               Rng& rng) {
  if (data.cols() == 0) throw InvalidInput("train_denoiser: empty demonstration set");
  detail::require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0,
                  "train_denoiser: invalid training config");
  detail::require(cfg.linear_layers >= 1 && cfg.hidden >= 1, "train_denoiser: invalid architecture");
  detail::require(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0,
                  "train_denoiser: final_lr_fraction must lie in (0,1]");
  const Index d = data.rows();
  NormStats norm = cfg.normalize ? NormStats::from_data(data) : NormStats::identity(d);
  const MatrixXd x = norm.normalize(data);

  std::vector<int> dims{static_cast<int>(d) + cfg.embedding_dim};
  for (int l = 0; l + 1 < cfg.linear_layers; ++l) dims.push_back(cfg.hidden);
  dims.push_back(static_cast<int>(d));
  nn::Mlp net(nn::dense_config(dims, nn::Activation::ReLU, cfg.dropout, cfg.batch_norm), rng);
  nn::OptimizerState opt(nn::AdamConfig{cfg.learning_rate});

  std::vector<Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::uniform_int_distribution<int> step_dist(0, schedule.steps() - 1);
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 1.0;
    opt.cfg.learning_rate = cfg.learning_rate * (1.0 - progress * (1.0 - cfg.final_lr_fraction));
    double loss_sum = 0.0;
    Index seen = 0;
    for (Index start = 0; start < x.cols(); start += cfg.batch_size) {
      const Index n = std::min<Index>(cfg.batch_size, x.cols() - start);
      MatrixXd x0(d, n);
      std::vector<int> steps(static_cast<std::size_t>(n));
      MatrixXd eps(d, n);
      for (Index j = 0; j < n; ++j) {
        x0.col(j) = x.col(order[static_cast<std::size_t>(start + j)]);
        steps[static_cast<std::size_t>(j)] = step_dist(rng) + 1;
        eps.col(j) = standard_normal(rng, d);
      }
      NoisedBatch b = make_noised_batch(x0, steps, eps, schedule, cfg.embedding_dim);
      nn::Tape tape;
      nn::GradientResult g;
      try {
        g = nn::mlp_gradient(
            net, [&](const MatrixXd& out) { return nn::squared_error(out, b.target); }, b.input, nn::Mode::Train,
            &rng, &tape);
        net.commit_batch_stats(tape);
        nn::optimizer_step(opt, net.mutable_params(), g.grads);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("train_denoiser: ") + e.what(), epoch);
      }
      loss_sum += g.loss * static_cast<double>(n);
      seen += n;
    }
    epoch_loss = loss_sum / static_cast<double>(seen);
  }
  Denoiser out(LearnedPredictor{std::move(net), cfg.embedding_dim}, std::move(norm), schedule, d);
  out.final_train_loss = epoch_loss;
  return out;
}

// ---- forward / reverse ---------------------------------------------------

/// x_{i*} = sqrt(ab_{i*}) x0 + sqrt(1 - ab_{i*}) eps.
inline VectorXd forward_diffuse(const VectorXd& x0, int i_star, const NoiseSchedule& schedule, const NoiseDraw& noise) {
  if (i_star < 1 || i_star > schedule.steps())
    throw InvalidInput("forward_diffuse: i_star " + std::to_string(i_star) + " outside 1.." +
                       std::to_string(schedule.steps()));
  detail::require(x0.allFinite(), "forward_diffuse: x0 must be finite");
  const double ab = schedule.alpha_bar(i_star);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise(x0.size());
}

inline VectorXd forward_diffuse(const VectorXd& x0, int i_star, const NoiseSchedule& schedule, Rng& rng) {
  return forward_diffuse(x0, i_star, schedule, rng_draw(rng));
}

struct ReverseOptions {
  /// Inject sqrt(beta_1) z at the last step too (off: x_0 is the posterior mean step).
  bool inject_final_noise = false;
};

/// Iterates i = i*, ..., 1:
///   x_{i-1} = (x_i - (1 - alpha_i) / sqrt(1 - ab_i) * phi(x_i, i)) / sqrt(alpha_i) + sqrt(beta_i) z.
inline VectorXd reverse_denoise(const VectorXd& x_start, int i_star, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, const NoiseDraw& noise, ReverseOptions opt = {}) {
  if (denoiser.schedule_id() != schedule.id()) throw InvalidInput("reverse_denoise: denoiser trained with another schedule");
  if (i_star < 1 || i_star > schedule.steps()) throw InvalidInput("reverse_denoise: i_star out of range");
  if (x_start.size() != denoiser.dim()) throw InvalidInput("reverse_denoise: dimension mismatch");
  VectorXd x = x_start;
  for (int i = i_star; i >= 1; --i) {
    const double a = schedule.alpha(i);
    const double ab = schedule.alpha_bar(i);
    VectorXd eps = denoiser.predict_noise(x, i);
    x = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps) / std::sqrt(a);
    if (i > 1 || opt.inject_final_noise) x += std::sqrt(schedule.beta(i)) * noise(x.size());
    if (!x.allFinite()) throw NumericalError("reverse_denoise: non-finite state", i);
  }
  return x;
}

inline VectorXd reverse_denoise(const VectorXd& x_start, int i_star, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, Rng& rng, ReverseOptions opt = {}) {
  return reverse_denoise(x_start, i_star, denoiser, schedule, rng_draw(rng), opt);
}

// ---- purification --------------------------------------------------------

struct PurifyConfig {
  double t_star = 0.1;
  bool inject_final_noise = false;
  std::optional<VectorXd> fixed_eps;
  std::optional<std::vector<VectorXd>> fixed_z;  // consumed from step i* downward

  /// i* = max(1, round(t* T)).
  int i_star(int steps) const {
    detail::require(t_star > 0.0 && t_star <= 1.0, "purify: t_star must lie in (0,1]");
    return std::max(1, static_cast<int>(std::lround(t_star * steps)));
  }
};

/// Normalizes x0 with the denoiser's statistics, diffuses it to i*, denoises
/// back to step 0 and maps the result back to raw units.
inline VectorXd purify(const VectorXd& x0, const PurifyConfig& cfg, const Denoiser& denoiser,
                       const NoiseSchedule& schedule, Rng& rng) {
  if (x0.size() != denoiser.dim()) throw InvalidInput("purify: dimension mismatch between sample and denoiser");
  const int i_star = cfg.i_star(schedule.steps());
  NoiseDraw eps = cfg.fixed_eps ? sequence_draw({*cfg.fixed_eps}) : rng_draw(rng);
  NoiseDraw z = cfg.fixed_z ? sequence_draw(*cfg.fixed_z) : rng_draw(rng);
  const auto& norm = denoiser.norm_stats();
  VectorXd xi = forward_diffuse(norm.normalize(x0), i_star, schedule, eps);
  VectorXd x_hat = reverse_denoise(xi, i_star, denoiser, schedule, z, ReverseOptions{cfg.inject_final_noise});
  return norm.denormalize(x_hat);
}

/// Purifies every transition independently; transition k uses an rng seeded
/// from (seed, k), so results are identical for any worker count.
inline demos::DemoSet purify_dataset(const demos::DemoSet& in, const PurifyConfig& cfg, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, std::uint64_t seed, int workers = 1) {
  if (in.empty()) return in;
  if (in.joint_dim() != denoiser.dim())
    throw InvalidInput("purify_dataset: demo dimension " + std::to_string(in.joint_dim()) + " != denoiser dimension " +
                       std::to_string(denoiser.dim()));
  demos::DemoSet out = in;
  parallel_for(in.size(), workers, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    VectorXd x = purify(in.transitions[k].joint(), cfg, denoiser, schedule, rng);
    out.transitions[k].state = x.head(in.state_dim);
    out.transitions[k].action = x.tail(in.action_dim);
  });
  return out;
}

inline Json purification_manifest(const demos::DemoSet& in, const demos::DemoSet& out, const PurifyConfig& cfg,
                                  const NoiseSchedule& schedule, std::uint64_t seed) {
  return Json{{"seed", seed},
              {"t_star", cfg.t_star},
              {"i_star", cfg.i_star(schedule.steps())},
              {"schedule_hash", schedule.id()},
              {"inject_final_noise", cfg.inject_final_noise},
              {"dataset_hash_in", demos::demo_hash(in)},
              {"dataset_hash_out", demos::demo_hash(out)}};
}

// ---- checkpoint ----------------------------------------------------------

inline Json denoiser_to_json(const Denoiser& d) {
  using nn::detail_json::vec_to_json;
  Json model;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LearnedPredictor>) {
          model = Json{{"type", "learned"}, {"embedding_dim", m.embedding_dim}, {"net", nn::mlp_to_json(m.net)}};
        } else if constexpr (std::is_same_v<M, GaussianScorePredictor>) {
          model = Json{{"type", "gaussian"}, {"mu", vec_to_json(m.mu)}, {"sigma", m.sigma}};
        } else {
          model = Json{{"type", "zero"}};
        }
      },
      d.model());
  auto betas = d.schedule().betas();
  return Json{{"dim", d.dim()},
              {"model", model},
              {"norm_mean", vec_to_json(d.norm_stats().mean)},
              {"norm_std", vec_to_json(d.norm_stats().std)},
              {"schedule", {{"betas", std::vector<double>(betas.begin(), betas.end())}, {"id", d.schedule_id()}}},
              {"final_train_loss", std::isfinite(d.final_train_loss) ? Json(d.final_train_loss) : Json(nullptr)}};
}

inline Denoiser denoiser_from_json(const Json& j) {
  using nn::detail_json::vec_from_json;
  NoiseSchedule schedule(j.at("schedule").at("betas").get<std::vector<double>>());
  if (schedule.id() != j.at("schedule").at("id").get<std::string>())
    throw std::runtime_error("denoiser checkpoint: schedule hash mismatch");
  const auto& m = j.at("model");
  const std::string type = m.at("type").get<std::string>();
  Denoiser::Model model;
  if (type == "learned") {
    model = LearnedPredictor{nn::mlp_from_json(m.at("net")), m.at("embedding_dim").get<int>()};
  } else if (type == "gaussian") {
    model = GaussianScorePredictor{vec_from_json(m.at("mu")), m.at("sigma").get<double>()};
  } else if (type == "zero") {
    model = ZeroPredictor{};
  } else {
    throw std::runtime_error("denoiser checkpoint: unknown model type " + type);
  }
  Denoiser d(std::move(model), NormStats{vec_from_json(j.at("norm_mean")), vec_from_json(j.at("norm_std"))},
             std::move(schedule), j.at("dim").get<Index>());
  if (!j.at("final_train_loss").is_null()) d.final_train_loss = j.at("final_train_loss").get<double>();
  return d;
}

inline void save_denoiser(const Denoiser& d, const std::filesystem::path& path, std::uint64_t seed) {
  write_file_atomic(path, make_checkpoint("denoiser", denoiser_to_json(d), seed).dump());
}

inline Denoiser load_denoiser(const std::filesystem::path& path) {
  return denoiser_from_json(checkpoint_body(Json::parse(read_file(path)), "denoiser"));
}

}  // namespace dpil::diffusion
