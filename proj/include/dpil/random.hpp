#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string_view>

#include <Eigen/Dense>

namespace dpil {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a. Used for stable content hashes in manifests and for
/// deriving named stage seeds; std::hash is not stable across builds.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(double v) { update(&v, sizeof v); }
  void update(std::int64_t v) { update(&v, sizeof v); }
  void update(std::span<const double> v) { update(v.data(), v.size_bytes()); }

  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  Fnv1a h;
  h.update(name);
  return derive_seed(root, h.digest());
}

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index dim) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index k = 0; k < dim; ++k) v[k] = n01(rng);
  return v;
}

/// Filled column by column.
inline Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) m.col(j) = standard_normal(rng, rows);
  return m;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k, v >>= 4) out[static_cast<std::size_t>(k)] = digits[v & 0xf];
  return out;
}

}  // namespace dpil
