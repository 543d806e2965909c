#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpil/envs.hpp"
#include "dpil/error.hpp"
#include "dpil/io.hpp"
#include "dpil/random.hpp"

namespace dpil::demos {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Transition {
  VectorXd state;
  VectorXd action;
  std::optional<double> reward;
  int episode_id = 0;
  int step_index = 0;

  /// x = (s, a)
  VectorXd joint() const {
    VectorXd x(state.size() + action.size());
    x << state, action;
    return x;
  }
};

struct DemoSet {
  std::vector<Transition> transitions;
  Index state_dim = 0;
  Index action_dim = 0;
  std::string source_label;
  Json generator_meta = Json::object();

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  Index joint_dim() const { return state_dim + action_dim; }
};

class DimensionMismatch : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Checks dimension consistency and episode well-formedness: episodes are
/// contiguous and step indices are non-negative and strictly increasing
/// inside each episode.
inline void validate(const DemoSet& d) {
  detail::require(d.state_dim >= 1 && d.action_dim >= 1, "demos: state_dim and action_dim must be positive");
  std::vector<int> closed;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const auto& t = d.transitions[k];
    if (t.state.size() != d.state_dim || t.action.size() != d.action_dim)
      throw InvalidInput("demos: transition " + std::to_string(k) + " has inconsistent dimensions");
    if (t.step_index < 0) throw InvalidInput("demos: negative step_index at transition " + std::to_string(k));
    if (k > 0) {
      const auto& prev = d.transitions[k - 1];
      if (prev.episode_id == t.episode_id) {
        if (t.step_index <= prev.step_index)
          throw InvalidInput("demos: step_index not increasing in episode " + std::to_string(t.episode_id));
      } else {
        closed.push_back(prev.episode_id);
        if (std::find(closed.begin(), closed.end(), t.episode_id) != closed.end())
          throw InvalidInput("demos: episode " + std::to_string(t.episode_id) + " is not contiguous");
      }
    }
  }
}

/// Columns are x = (s, a) for each transition.
inline MatrixXd to_matrix(const DemoSet& d) {
  MatrixXd x(d.joint_dim(), static_cast<Index>(d.size()));
  for (std::size_t k = 0; k < d.size(); ++k) x.col(static_cast<Index>(k)) = d.transitions[k].joint();
  return x;
}

/// Half-open [begin, end) index ranges of consecutive transitions per episode.
inline std::vector<std::pair<std::size_t, std::size_t>> episode_ranges(const DemoSet& d) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t k = 1; k <= d.size(); ++k) {
    if (k == d.size() || d.transitions[k].episode_id != d.transitions[begin].episode_id) {
      out.emplace_back(begin, k);
      begin = k;
    }
  }
  if (d.empty()) out.clear();
  return out;
}

// ---- generation ----------------------------------------------------------

/// a = clip(a* + delta * eta), eta ~ N(0, I). With delta == 0 the base action
/// is returned untouched and no noise is drawn.
template <envs::ActionSource P>
class NoisyPolicyWrapper {
 public:
  NoisyPolicyWrapper(P base, double delta, std::optional<std::pair<VectorXd, VectorXd>> bounds = std::nullopt)
      : base_(std::move(base)), delta_(delta), bounds_(std::move(bounds)) {
    detail::require(delta_ >= 0.0 && std::isfinite(delta_), "wrap_noisy: delta must be a non-negative finite real");
  }

  VectorXd act(const VectorXd& s, Rng& rng) const {
    VectorXd a = base_.act(s, rng);
    if (delta_ == 0.0) return a;
    a += delta_ * standard_normal(rng, a.size());
    if (bounds_) a = a.cwiseMax(bounds_->first).cwiseMin(bounds_->second);
    return a;
  }

  double delta() const { return delta_; }
  const P& base() const { return base_; }

 private:
  P base_;
  double delta_;
  std::optional<std::pair<VectorXd, VectorXd>> bounds_;
};

template <envs::ActionSource P>
NoisyPolicyWrapper<P> wrap_noisy(P policy, double delta) {
  return NoisyPolicyWrapper<P>(std::move(policy), delta);
}

template <envs::ActionSource P, envs::Environment E>
NoisyPolicyWrapper<P> wrap_noisy(P policy, double delta, const E& env) {
  return NoisyPolicyWrapper<P>(std::move(policy), delta, std::make_pair(env.action_low(), env.action_high()));
}

/// Rolls out whole episodes (episode k seeded from (seed, k)) until at least
/// `n_transitions` are gathered, then truncates to exactly that many.
template <envs::ActionSource P, envs::Environment E>
DemoSet collect_demos(const P& policy, const E& env, std::size_t n_transitions, std::uint64_t seed,
                      std::string label = "demos") {
  detail::require(n_transitions >= 1, "collect_demos: n_transitions must be >= 1");
  DemoSet d;
  d.state_dim = env.state_dim();
  d.action_dim = env.action_dim();
  d.source_label = std::move(label);
  d.transitions.reserve(n_transitions);
  for (int ep = 0; d.size() < n_transitions; ++ep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ep)));
    envs::Episode e;
    try {
      e = envs::rollout_episode(policy, env, rng);
    } catch (const std::exception& ex) {
      throw std::runtime_error("collect_demos: episode " + std::to_string(ep) + ": " + ex.what());
    }
    for (std::size_t t = 0; t < e.states.size() && d.size() < n_transitions; ++t) {
      d.transitions.push_back(Transition{std::move(e.states[t]), std::move(e.actions[t]), e.rewards[t], ep,
                                         static_cast<int>(t)});
    }
  }
  return d;
}

/// A saved policy from partway through a training run. `fraction` is the
/// share of total training completed when the snapshot was taken.
struct PolicySnapshot {
  double fraction = 1.0;
  envs::AnyPolicy policy;
};

template <envs::Environment E>
DemoSet collect_checkpoint_demos(const std::vector<PolicySnapshot>& history, double fraction, const E& env,
                                 std::size_t n_transitions, std::uint64_t seed) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "collect_checkpoint_demos: fraction must be in (0,1]");
  auto it = std::find_if(history.begin(), history.end(),
                         [&](const PolicySnapshot& s) { return std::abs(s.fraction - fraction) < 1e-9; });
  if (it == history.end())
    throw InvalidInput("collect_checkpoint_demos: no snapshot at fraction " + std::to_string(fraction));
  std::ostringstream label;
  label << "checkpoint@" << fraction;
  DemoSet d = collect_demos(it->policy, env, n_transitions, seed, label.str());
  d.generator_meta = Json{{"checkpoint_fraction", fraction}};
  return d;
}

/// Concatenates sets, renumbering episodes so they stay distinct.
inline DemoSet mix_demosets(const std::vector<DemoSet>& sets) {
  detail::require(!sets.empty(), "mix_demosets: need at least one set");
  DemoSet out;
  out.state_dim = sets.front().state_dim;
  out.action_dim = sets.front().action_dim;
  out.source_label = "mixed";
  Json sources = Json::array();
  int next_episode = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto& s = sets[k];
    if (s.state_dim != out.state_dim || s.action_dim != out.action_dim)
      throw InvalidInput("mix_demosets: set " + std::to_string(k) + " has incompatible dimensions");
    sources.push_back(Json{{"source_label", s.source_label}, {"count", s.size()}, {"generator_meta", s.generator_meta}});
    for (const auto& range : episode_ranges(s)) {
      for (std::size_t j = range.first; j < range.second; ++j) {
        Transition t = s.transitions[j];
        t.episode_id = next_episode;
        out.transitions.push_back(std::move(t));
      }
      ++next_episode;
    }
  }
  out.generator_meta = Json{{"sources", sources}};
  return out;
}

// ---- filter baselines ----------------------------------------------------

enum class FilterKind { Mean, Median, Gaussian };

inline FilterKind filter_kind_from_string(const std::string& s) {
  if (s == "mean") return FilterKind::Mean;
  if (s == "median") return FilterKind::Median;
  if (s == "gaussian") return FilterKind::Gaussian;
  throw InvalidInput("unknown filter kind: " + s);
}

struct FilterOptions {
  FilterKind kind = FilterKind::Mean;
  /// Window length for mean/median (odd, >= 1); sigma for gaussian.
  double param = 3.0;
  bool smooth_states = false;
};

namespace detail_filter {

/// Edge-repeating reflection (d c b a | a b c d | d c b a).
inline std::size_t reflect(std::ptrdiff_t idx, std::ptrdiff_t n) {
  if (idx < 0) idx = -idx - 1;
  if (idx >= n) idx = 2 * n - idx - 1;
  return static_cast<std::size_t>(idx);
}

inline std::vector<double> smooth(const std::vector<double>& x, const FilterOptions& opt, std::ptrdiff_t radius,
                                  const std::vector<double>& gauss_w) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size()), window;
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    window.clear();
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) window.push_back(x[reflect(t + k, n)]);
    double v = 0.0;
    switch (opt.kind) {
      case FilterKind::Mean:
        for (double w : window) v += w;
        v /= static_cast<double>(window.size());
        break;
      case FilterKind::Median: {
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        v = *mid;
        break;
      }
      case FilterKind::Gaussian:
        for (std::size_t k = 0; k < window.size(); ++k) v += gauss_w[k] * window[k];
        break;
    }
    out[static_cast<std::size_t>(t)] = v;
  }
  return out;
}

}  // namespace detail_filter

/// Temporal smoothing along each episode, per dimension. Actions only by
/// default. The gaussian kernel is truncated at radius ceil(4 sigma).
inline DemoSet filter_denoise(const DemoSet& demos, const FilterOptions& opt) {
  std::ptrdiff_t radius = 0;
  std::vector<double> gauss_w;
  if (opt.kind == FilterKind::Gaussian) {
    detail::require(opt.param > 0.0, "filter_denoise: gaussian sigma must be positive");
    radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * opt.param));
    double total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
      gauss_w.push_back(std::exp(-0.5 * static_cast<double>(k * k) / (opt.param * opt.param)));
      total += gauss_w.back();
    }
    for (double& w : gauss_w) w /= total;
  } else {
    const double w = opt.param;
    detail::require(w >= 1.0 && std::floor(w) == w && static_cast<long>(w) % 2 == 1,
                    "filter_denoise: window must be an odd integer >= 1");
    radius = static_cast<std::ptrdiff_t>(w - 1) / 2;
  }
  const std::size_t window = static_cast<std::size_t>(2 * radius + 1);

  DemoSet out = demos;
  for (const auto& [begin, end] : episode_ranges(demos)) {
    if (end - begin < window)
      throw InvalidInput("filter_denoise: window " + std::to_string(window) + " exceeds length of episode " +
                         std::to_string(demos.transitions[begin].episode_id));
    auto run = [&](auto member, Index dim) {
      for (Index j = 0; j < dim; ++j) {
        std::vector<double> series;
        for (std::size_t k = begin; k < end; ++k) series.push_back((demos.transitions[k].*member)[j]);
        auto smoothed = detail_filter::smooth(series, opt, radius, gauss_w);
        for (std::size_t k = begin; k < end; ++k) (out.transitions[k].*member)[j] = smoothed[k - begin];
      }
    };
    run(&Transition::action, demos.action_dim);
    if (opt.smooth_states) run(&Transition::state, demos.state_dim);
  }
  return out;
}

// ---- serialization -------------------------------------------------------

inline constexpr int kDemoFormatVersion = 1;

inline std::string serialize_demos(const DemoSet& d) {
  std::string out;
  Json header{{"version", kDemoFormatVersion},
              {"state_dim", d.state_dim},
              {"action_dim", d.action_dim},
              {"source_label", d.source_label},
              {"generator_meta", d.generator_meta},
              {"n_transitions", d.size()}};
  out += header.dump();
  out += '\n';
  for (const auto& t : d.transitions) {
    Json rec{{"episode_id", t.episode_id},
             {"step_index", t.step_index},
             {"state", std::vector<double>(t.state.data(), t.state.data() + t.state.size())},
             {"action", std::vector<double>(t.action.data(), t.action.data() + t.action.size())},
             {"reward", t.reward ? Json(*t.reward) : Json(nullptr)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

inline DemoSet parse_demos(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto parse_line = [&](std::size_t idx) {
    try {
      return Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(std::string("demos: malformed json: ") + e.what(), idx);
    }
  };
  if (!std::getline(in, line)) throw ParseError("demos: missing header", 0);
  Json header = parse_line(0);
  DemoSet d;
  std::size_t expected = 0;
  try {
    if (header.at("version").get<int>() != kDemoFormatVersion) throw ParseError("demos: unsupported version", 0);
    d.state_dim = header.at("state_dim").get<Index>();
    d.action_dim = header.at("action_dim").get<Index>();
    d.source_label = header.at("source_label").get<std::string>();
    d.generator_meta = header.at("generator_meta");
    expected = header.at("n_transitions").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("demos: bad header: ") + e.what(), 0);
  }
  if (d.state_dim < 1 || d.action_dim < 1) throw ParseError("demos: non-positive dimensions in header", 0);
  auto to_vec = [](const Json& j) {
    auto xs = j.get<std::vector<double>>();
    return VectorXd(Eigen::Map<VectorXd>(xs.data(), static_cast<Index>(xs.size())));
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json rec = parse_line(lineno);
    Transition t;
    try {
      t.episode_id = rec.at("episode_id").get<int>();
      t.step_index = rec.at("step_index").get<int>();
      t.state = to_vec(rec.at("state"));
      t.action = to_vec(rec.at("action"));
      if (!rec.at("reward").is_null()) t.reward = rec.at("reward").get<double>();
    } catch (const Json::exception& e) {
      throw ParseError(std::string("demos: bad record: ") + e.what(), lineno);
    }
    if (t.state.size() != d.state_dim || t.action.size() != d.action_dim)
      throw DimensionMismatch("demos: dimension mismatch between header and record", lineno);
    d.transitions.push_back(std::move(t));
  }
  if (d.size() != expected)
    throw ParseError("demos: expected " + std::to_string(expected) + " records, found " + std::to_string(d.size()),
                     lineno);
  try {
    validate(d);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what(), lineno);
  }
  return d;
}

inline void save_demos(const DemoSet& d, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_demos(d));
}

inline DemoSet load_demos(const std::filesystem::path& path) { return parse_demos(read_file(path)); }

/// Flat CSV for plotting: episode_id,step_index,s0..,a0..,reward.
inline std::string demos_to_csv(const DemoSet& d) {
  std::ostringstream out;
  out << "episode_id,step_index";
  for (Index j = 0; j < d.state_dim; ++j) out << ",s" << j;
  for (Index j = 0; j < d.action_dim; ++j) out << ",a" << j;
  out << ",reward\n";
  for (const auto& t : d.transitions) {
    out << t.episode_id << ',' << t.step_index;
    for (Index j = 0; j < t.state.size(); ++j) out << ',' << format_double(t.state[j]);
    for (Index j = 0; j < t.action.size(); ++j) out << ',' << format_double(t.action[j]);
    out << ',';
    if (t.reward) out << format_double(*t.reward);
    out << '\n';
  }
  return out.str();
}

inline std::string demo_hash(const DemoSet& d) { return content_hash(serialize_demos(d)); }

/// Union of two sets as one training pool (used for "optimal + imperfect").
inline DemoSet concat(const DemoSet& a, const DemoSet& b, std::string label) {
  DemoSet out = mix_demosets({a, b});
  out.source_label = std::move(label);
  return out;
}

/// n transitions drawn uniformly without replacement, kept in their original
/// order (a sample from the occupancy measure of the generating policy).
inline DemoSet subsample(const DemoSet& d, std::size_t n, std::uint64_t seed) {
  detail::require(n >= 1 && n <= d.size(), "subsample: n must lie in 1..size");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  DemoSet out = d;
  out.transitions.clear();
  for (std::size_t i : idx) out.transitions.push_back(d.transitions[i]);
  return out;
}

}  // namespace dpil::demos
