#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace volcast {

// Error taxonomy used to map failures to CLI exit codes
// (2 = config/usage, 3 = data, 4 = numerical).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3i = std::array<std::int64_t, 3>;
using Vec4i = std::array<std::int64_t, 4>;
using Vec4d = std::array<double, 4>;

inline std::int64_t prod(const Vec3i& v) { return v[0] * v[1] * v[2]; }
inline std::int64_t prod(const Vec4i& v) { return v[0] * v[1] * v[2] * v[3]; }

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::string to_string(const Vec3i& v);
std::string to_string(const Vec4i& v);

// Shortest round-trip decimal form, locale-independent, so emitted CSVs and
// checkpoint metadata are byte-stable across runs.
std::string fmt_double(double v);

// Half-open 4D box [lo, hi) in (x, y, z, t) voxel coordinates. May extend
// outside a volume's dims only when a padded read is requested.
struct Box4 {
  Vec4i lo{0, 0, 0, 0};
  Vec4i hi{0, 0, 0, 0};

  Vec4i extent() const {
    return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], hi[3] - lo[3]};
  }
  std::int64_t volume() const { return prod(extent()); }
  bool valid() const {
    for (int a = 0; a < 4; ++a)
      if (lo[a] >= hi[a]) return false;
    return true;
  }
  bool contains(const Box4& inner) const {
    for (int a = 0; a < 4; ++a)
      if (inner.lo[a] < lo[a] || inner.hi[a] > hi[a]) return false;
    return true;
  }
  static Box4 full(const Vec4i& dims) { return {{0, 0, 0, 0}, dims}; }
};

bool operator==(const Box4& a, const Box4& b);

// Deterministic splitmix64-based generator. Identical sequences on every
// platform and compiler, unlike std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Unbiased uniform integer in [0, n).
  std::uint64_t uniform_u64(std::uint64_t n);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_exclusive);

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (pairs cached).
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Standard normal truncated to [-2, 2] by rejection.
  double truncated_normal();

  // Uniform permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::int64_t> permutation(std::int64_t n);

  // Derive an independent deterministic stream for a named purpose.
  Rng fork(const std::string& tag) const;

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Fixed-width work partitioning helpers. Parallel regions only ever write
// disjoint outputs or reduce over fixed-size chunks combined sequentially,
// so results are byte-identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance();
  static void set_threads(int n);  // overrides VOLCAST_THREADS

  int threads() const { return threads_; }

  // Runs fn(begin, end) over [0, n) split into contiguous ranges.
  void parallel_for(std::int64_t n, std::int64_t grain,
                    const std::function<void(std::int64_t, std::int64_t)>& fn);

 private:
  ThreadPool();
  int threads_ = 1;
};

std::uint64_t fnv1a(const std::string& s);

}  // namespace volcast
