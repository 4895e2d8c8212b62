#include "volcast/common.hpp"

#include <charconv>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace volcast {

std::string to_string(const Vec3i& v) {
  std::ostringstream os;
  os << "(" << v[0] << ", " << v[1] << ", " << v[2] << ")";
  return os.str();
}

std::string to_string(const Vec4i& v) {
  std::ostringstream os;
  os << "(" << v[0] << ", " << v[1] << ", " << v[2] << ", " << v[3] << ")";
  return os.str();
}

bool operator==(const Box4& a, const Box4& b) { return a.lo == b.lo && a.hi == b.hi; }

std::uint64_t Rng::uniform_u64(std::uint64_t n) {
  // Lemire's multiply-shift rejection method.
  if (n == 0) throw ConfigError("uniform_u64: n must be positive");
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
  std::uint64_t l = static_cast<std::uint64_t>(m);
  if (l < n) {
    std::uint64_t t = -n % n;
    while (l < t) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
      l = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi_exclusive) {
  if (lo >= hi_exclusive) throw ConfigError("uniform_int: empty range");
  return lo + static_cast<std::int64_t>(
                  uniform_u64(static_cast<std::uint64_t>(hi_exclusive - lo)));
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 is kept away from 0 so log() is finite.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

double Rng::truncated_normal() {
  for (;;) {
    double v = normal();
    if (v >= -2.0 && v <= 2.0) return v;
  }
}

std::vector<std::int64_t> Rng::permutation(std::int64_t n) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::int64_t j = static_cast<std::int64_t>(uniform_u64(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::fork(const std::string& tag) const {
  // Mixing the tag hash into the current state gives a stream that is
  // stable regardless of how much the parent has been consumed before.
  return Rng(state_ ^ fnv1a(tag) ^ 0x5851f42d4c957f2dULL);
}

ThreadPool::ThreadPool() {
  const char* env = std::getenv("VOLCAST_THREADS");
  if (env != nullptr) {
    int n = std::atoi(env);
    threads_ = n > 0 ? n : 1;
  } else {
    unsigned hw = std::thread::hardware_concurrency();
    threads_ = hw > 0 ? static_cast<int>(hw) : 1;
  }
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::set_threads(int n) { instance().threads_ = n > 0 ? n : 1; }

void ThreadPool::parallel_for(std::int64_t n, std::int64_t grain,
                              const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  if (grain <= 0) grain = 1;
  std::int64_t chunks = ceil_div(n, grain);
  if (threads_ <= 1 || chunks <= 1) {
    fn(0, n);
    return;
  }
  int workers = static_cast<int>(std::min<std::int64_t>(threads_, chunks));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  // Chunk boundaries depend only on n and grain, never on the thread
  // count, so any per-chunk partial results are reproducible.
  std::atomic<std::int64_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        std::int64_t c = next.fetch_add(1);
        if (c >= chunks) return;
        std::int64_t b = c * grain;
        std::int64_t e = std::min(n, b + grain);
        fn(b, e);
      }
    });
  }
  for (auto& t : pool) t.join();
}


std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace volcast
