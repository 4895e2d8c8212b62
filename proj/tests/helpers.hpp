#pragma once
// Shared fixtures: scratch directories, deterministic random fills, and the
// central-difference probe used by every gradient check.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/tensor.hpp"

namespace vtest {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("volcast_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

template <typename T>
void fill_uniform(std::vector<T>& v, volcast::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * rng.uniform());
}

template <typename T>
void fill_normal(std::vector<T>& v, volcast::Rng& rng, double scale = 1.0) {
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
}

template <typename T>
volcast::Tensor4<T> random_tensor(const volcast::Vec4i& shape, std::uint64_t seed,
                                  double scale = 1.0) {
  volcast::Tensor4<T> t(shape);
  volcast::Rng rng(seed);
  fill_normal(t.data, rng, scale);
  return t;
}

// Central difference d f / d x_i around the current value of *x.
inline double central_diff(double* x, const std::function<double()>& f, double eps = 1e-5) {
  const double x0 = *x;
  *x = x0 + eps;
  const double fp = f();
  *x = x0 - eps;
  const double fm = f();
  *x = x0;
  return (fp - fm) / (2.0 * eps);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Sorted (relative path, byte content) listing for directory equality checks.
inline std::vector<std::pair<std::string, std::string>> dir_contents(
    const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.emplace_back(std::filesystem::relative(e.path(), root).string(), slurp(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace vtest
