#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "volcast/layers.hpp"
#include "volcast/model.hpp"

using namespace volcast;

namespace {

using T4 = Tensor4<double>;

// Scalar objective L = sum_i w_i * y_i with fixed pseudo-random weights.
// Its dL/dy is just w, which makes every analytic gradient testable
// against a central difference of L.
struct Probe {
  std::vector<double> w;
  void init(std::size_t n, Rng& rng) {
    w.resize(n);
    for (auto& v : w) v = rng.normal();
  }
  double loss(const std::vector<double>& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  }
  T4 dL(const Vec4i& shape) const {
    T4 d(shape);
    std::copy(w.begin(), w.end(), d.data.begin());
    return d;
  }
};

constexpr double kTol = 1e-5;

// Absolute fallback guards gradients that are tiny relative to the loss
// scale, where the central difference is dominated by f64 roundoff.
void check_grad(double* slot, double analytic, const std::function<double()>& f) {
  const double fd = vtest::central_diff(slot, f);
  CHECK((std::abs(analytic - fd) < 1e-9 || vtest::rel_err(analytic, fd) < kTol));
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv3d identity kernel reproduces the input") {
  const std::int64_t cin = 3;
  Tensor4<float> x({4, 3, 2, cin});
  Rng rng(1);
  vtest::fill_normal(x.data, rng);
  // kernel: center tap is the identity matrix across channels
  std::vector<float> k(27 * cin * cin, 0.0f);
  const std::int64_t center = ((1 * 3 + 1) * 3 + 1) * cin;
  for (std::int64_t c = 0; c < cin; ++c)
    k[static_cast<std::size_t>((center + c) * cin + c)] = 1.0f;
  std::vector<float> b(cin, 0.0f);
  Tensor4<float> y;
  conv3d(x, k, b, cin, y);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("conv3d all-ones kernel sums the 3x3x3 neighborhood") {
  Tensor4<float> x({5, 5, 5, 1});
  x.fill(1.0f);
  std::vector<float> k(27, 1.0f);
  std::vector<float> b(1, 0.0f);
  Tensor4<float> y;
  conv3d(x, k, b, 1, y);
  CHECK(y.at(2, 2, 2, 0) == 27.0f);  // interior
  CHECK(y.at(0, 0, 0, 0) == 8.0f);   // corner sees a 2x2x2 slab
  CHECK(y.at(2, 2, 0, 0) == 18.0f);  // face
}

TEST_CASE("conv3d bias reaches every output voxel") {
  Tensor4<float> x({2, 2, 2, 2});
  x.zero();
  std::vector<float> k(27 * 2 * 3, 0.0f);
  std::vector<float> b{1.0f, -2.0f, 0.5f};
  Tensor4<float> y;
  conv3d(x, k, b, 3, y);
  for (std::int64_t p = 0; p < 8; ++p) {
    CHECK(y.data[static_cast<std::size_t>(p * 3 + 0)] == 1.0f);
    CHECK(y.data[static_cast<std::size_t>(p * 3 + 1)] == -2.0f);
    CHECK(y.data[static_cast<std::size_t>(p * 3 + 2)] == 0.5f);
  }
}

TEST_CASE("conv3d gradients match central differences") {
  for (std::uint64_t cs = 0; cs < 5; ++cs) {
    Rng rng(10 + cs);
    const std::int64_t cin = 2, cout = 3;
    T4 x({3, 2, 2, cin});
    vtest::fill_normal(x.data, rng);
    std::vector<double> k(27 * cin * cout);
    std::vector<double> b(static_cast<std::size_t>(cout));
    for (auto& v : k) v = rng.normal() * 0.3;
    for (auto& v : b) v = rng.normal() * 0.3;

    Probe pr;
    pr.init(static_cast<std::size_t>(3 * 2 * 2 * cout), rng);
    auto f = [&]() {
      T4 y;
      conv3d(x, k, b, cout, y);
      return pr.loss(y.data);
    };

    T4 y;
    conv3d(x, k, b, cout, y);
    T4 dx(x.shape);
    dx.zero();
    std::vector<double> dk(k.size(), 0.0), db(b.size(), 0.0);
    const T4 dy = pr.dL(y.shape);
    conv3d_backward(x, k, dy, dx, dk, db);

    for (int probe = 0; probe < 6; ++probe) {
      const std::size_t ix = rng.uniform_u64(x.data.size());
      check_grad(&x.data[ix], dx.data[ix], f);
      const std::size_t ik = rng.uniform_u64(k.size());
      check_grad(&k[ik], dk[ik], f);
    }
    check_grad(&b[0], db[0], f);
  }
}

TEST_CASE("group_norm output statistics") {
  Rng rng(20);
  const std::int64_t C = 8, groups = 2;
  Tensor4<float> x({4, 4, 2, C});
  for (auto& v : x.data) v = static_cast<float>(rng.normal() * 3.0 + 1.0);
  std::vector<float> scale(C, 1.0f), offset(C, 0.0f);
  Tensor4<float> y;
  group_norm(x, scale, offset, groups, 1e-6, false, y, nullptr);

  const std::int64_t cg = C / groups;
  const std::int64_t space = 4 * 4 * 2;
  for (std::int64_t g = 0; g < groups; ++g) {
    double s = 0.0, s2 = 0.0;
    for (std::int64_t p = 0; p < space; ++p)
      for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c) {
        const double v = y.data[static_cast<std::size_t>(p * C + c)];
        s += v;
        s2 += v * v;
      }
    const double n = static_cast<double>(space * cg);
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("group_norm constant input maps to the offset") {
  const std::int64_t C = 4;
  Tensor4<float> x({2, 2, 2, C});
  x.fill(5.0f);
  std::vector<float> scale(C, 2.0f);
  std::vector<float> offset{0.5f, -1.0f, 0.0f, 3.0f};
  Tensor4<float> y;
  group_norm(x, scale, offset, 2, 1e-5, false, y, nullptr);
  // zero variance: normalized value is 0, so output is exactly the offset
  for (std::int64_t p = 0; p < 8; ++p)
    for (std::int64_t c = 0; c < C; ++c)
      CHECK(std::abs(y.data[static_cast<std::size_t>(p * C + c)] -
                     offset[static_cast<std::size_t>(c)]) < 1e-4f);
}

TEST_CASE("group_norm frozen mode is the plain affine") {
  Rng rng(21);
  const std::int64_t C = 6;
  Tensor4<float> x({3, 2, 2, C});
  vtest::fill_normal(x.data, rng);
  std::vector<float> scale(C), offset(C);
  vtest::fill_normal(scale, rng);
  vtest::fill_normal(offset, rng);
  Tensor4<float> y;
  group_norm(x, scale, offset, 3, 1e-5, true, y, nullptr);
  for (std::int64_t p = 0; p < 12; ++p)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::size_t i = static_cast<std::size_t>(p * C + c);
      CHECK(y.data[i] == x.data[i] * scale[static_cast<std::size_t>(c)] +
                             offset[static_cast<std::size_t>(c)]);
    }
}

TEST_CASE("group_norm gradients match central differences (live and frozen)") {
  for (int frozen = 0; frozen < 2; ++frozen) {
    for (std::uint64_t cs = 0; cs < 3; ++cs) {
      Rng rng(30 + cs + static_cast<std::uint64_t>(frozen) * 100);
      const std::int64_t C = 6, groups = 3;
      T4 x({2, 3, 2, C});
      vtest::fill_normal(x.data, rng);
      std::vector<double> scale(C), offset(C);
      for (auto& v : scale) v = 1.0 + rng.normal() * 0.2;
      for (auto& v : offset) v = rng.normal() * 0.2;
      const double eps = 1e-4;

      Probe pr;
      pr.init(x.data.size(), rng);
      auto f = [&]() {
        T4 y;
        group_norm(x, scale, offset, groups, eps, frozen != 0, y, nullptr);
        return pr.loss(y.data);
      };

      T4 y;
      GroupNormCache<double> cache;
      group_norm(x, scale, offset, groups, eps, frozen != 0, y, &cache);
      T4 dx(x.shape);
      dx.zero();
      std::vector<double> ds(scale.size(), 0.0), doff(offset.size(), 0.0);
      const T4 dy = pr.dL(y.shape);
      group_norm_backward(x, scale, groups, frozen != 0, cache, dy, dx, ds, doff);

      for (int probe = 0; probe < 5; ++probe) {
        const std::size_t ix = rng.uniform_u64(x.data.size());
        check_grad(&x.data[ix], dx.data[ix], f);
      }
      for (std::int64_t c = 0; c < C; ++c) {
        check_grad(&scale[static_cast<std::size_t>(c)], ds[static_cast<std::size_t>(c)], f);
        check_grad(&offset[static_cast<std::size_t>(c)], doff[static_cast<std::size_t>(c)], f);
      }
    }
  }
}

TEST_CASE("swish values and gradient") {
  Tensor4<float> x({1, 1, 1, 3});
  x.data = {0.0f, 1.0f, -1.0f};
  Tensor4<float> y;
  swish(x, y);
  CHECK(y.data[0] == 0.0f);
  CHECK(std::abs(y.data[1] - 1.0f / (1.0f + std::exp(-1.0f))) < 1e-6f);
  CHECK(std::abs(y.data[2] + (1.0f - 1.0f / (1.0f + std::exp(-1.0f)))) < 1e-6f);

  for (std::uint64_t cs = 0; cs < 4; ++cs) {
    Rng rng(40 + cs);
    T4 xd({2, 2, 1, 3});
    vtest::fill_normal(xd.data, rng);
    Probe pr;
    pr.init(xd.data.size(), rng);
    auto f = [&]() {
      T4 yd;
      swish(xd, yd);
      return pr.loss(yd.data);
    };
    T4 yd;
    swish(xd, yd);
    T4 dx(xd.shape);
    dx.zero();
    const T4 dy = pr.dL(yd.shape);
    swish_backward(xd, dy, dx);
    for (std::size_t i = 0; i < xd.data.size(); ++i) check_grad(&xd.data[i], dx.data[i], f);
  }
}

TEST_CASE("sinusoidal embedding endpoints") {
  const auto e0 = sinusoidal_embed<double>(0, 8);
  for (std::size_t i = 0; i < 8; i += 2) {
    CHECK(e0[i] == 0.0);      // sin(0)
    CHECK(e0[i + 1] == 1.0);  // cos(0)
  }
  const auto e1 = sinusoidal_embed<double>(1, 8);
  CHECK(std::abs(e1[0] - std::sin(1.0)) < 1e-12);  // lowest index has frequency 1
  CHECK(std::abs(e1[1] - std::cos(1.0)) < 1e-12);
  // distinct h give distinct embeddings
  const auto e2 = sinusoidal_embed<double>(2, 8);
  CHECK(e1 != e2);
  // every component bounded
  for (double v : e1) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(sinusoidal_embed<double>(1, 7), ConfigError);
  CHECK_THROWS_AS(sinusoidal_embed<double>(-1, 8), ConfigError);
}

TEST_CASE("film with zero gamma/beta is the identity") {
  Rng rng(50);
  Tensor4<float> x({3, 2, 2, 4});
  vtest::fill_normal(x.data, rng);
  std::vector<float> gb(8, 0.0f);
  Tensor4<float> y;
  film(x, gb, y);
  CHECK(std::equal(x.data.begin(), x.data.end(), y.data.begin()));
}

TEST_CASE("film modulation formula") {
  Tensor4<float> x({1, 1, 1, 2});
  x.data = {2.0f, 3.0f};
  std::vector<float> gb{0.5f, -1.0f, 10.0f, 20.0f};  // gamma then beta
  Tensor4<float> y;
  film(x, gb, y);
  CHECK(y.data[0] == (1.0f + 0.5f) * 2.0f + 10.0f);
  CHECK(y.data[1] == (1.0f - 1.0f) * 3.0f + 20.0f);
}

TEST_CASE("film projection and modulation gradients match central differences") {
  for (std::uint64_t cs = 0; cs < 4; ++cs) {
    Rng rng(60 + cs);
    const std::int64_t C = 3, E = 4;
    T4 x({2, 2, 1, C});
    vtest::fill_normal(x.data, rng);
    std::vector<double> embed(static_cast<std::size_t>(E));
    for (auto& v : embed) v = rng.normal();
    std::vector<double> w(static_cast<std::size_t>(E * 2 * C));
    std::vector<double> b(static_cast<std::size_t>(2 * C));
    for (auto& v : w) v = rng.normal() * 0.3;
    for (auto& v : b) v = rng.normal() * 0.3;

    Probe pr;
    pr.init(x.data.size(), rng);
    auto f = [&]() {
      const auto gb = film_project(embed, w, b);
      T4 y;
      film(x, gb, y);
      return pr.loss(y.data);
    };

    const auto gb = film_project(embed, w, b);
    T4 y;
    film(x, gb, y);
    T4 dx(x.shape);
    dx.zero();
    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
    const T4 dy = pr.dL(y.shape);
    film_backward(x, embed, gb, dy, dx, dw, db);

    for (std::size_t i = 0; i < x.data.size(); ++i) check_grad(&x.data[i], dx.data[i], f);
    for (int probe = 0; probe < 6; ++probe) {
      const std::size_t iw = rng.uniform_u64(w.size());
      check_grad(&w[iw], dw[iw], f);
    }
    for (std::size_t i = 0; i < b.size(); ++i) check_grad(&b[i], db[i], f);
  }
}

TEST_CASE("channel dropout mask values and rates") {
  Rng rng(70);
  const double rate = 0.25;
  const auto mask = channel_dropout_mask<float>(10000, rate, rng);
  const float keep = 1.0f / (1.0f - static_cast<float>(rate));
  std::int64_t zeros = 0;
  for (float m : mask) {
    CHECK((m == 0.0f || m == keep));
    zeros += m == 0.0f;
  }
  // ~2500 expected; 6 sigma band
  CHECK(zeros > 2500 - 260);
  CHECK(zeros < 2500 + 260);

  Rng rng2(71);
  const auto none = channel_dropout_mask<float>(64, 0.0, rng2);
  for (float m : none) CHECK(m == 1.0f);
}

TEST_CASE("channel scale applies mask and backward routes gradient") {
  Rng rng(72);
  T4 x({2, 2, 1, 3});
  vtest::fill_normal(x.data, rng);
  std::vector<double> mask{0.0, 2.0, 1.0};
  Probe pr;
  pr.init(x.data.size(), rng);
  auto f = [&]() {
    T4 y;
    channel_scale(x, mask, y);
    return pr.loss(y.data);
  };
  T4 y;
  channel_scale(x, mask, y);
  for (std::int64_t p = 0; p < 4; ++p) {
    CHECK(y.data[static_cast<std::size_t>(p * 3)] == 0.0);
    CHECK(y.data[static_cast<std::size_t>(p * 3 + 1)] == 2.0 * x.data[static_cast<std::size_t>(p * 3 + 1)]);
  }
  T4 dx(x.shape);
  dx.zero();
  const T4 dy = pr.dL(y.shape);
  channel_scale_backward(mask, dy, dx);
  for (std::size_t i = 0; i < x.data.size(); ++i) check_grad(&x.data[i], dx.data[i], f);
}

TEST_CASE("block-mean pooling worked example") {
  Tensor4<float> x({4, 4, 1, 1});
  for (std::size_t i = 0; i < 16; ++i) x.data[i] = static_cast<float>(i + 1);
  Tensor4<float> y;
  resample_down(x, {2, 2, 1}, y);
  REQUIRE(y.shape == Vec4i{2, 2, 1, 1});
  // x-major layout: rows are x, columns y
  CHECK(y.at(0, 0, 0, 0) == (1.0f + 2.0f + 5.0f + 6.0f) / 4.0f);
  CHECK(y.at(0, 1, 0, 0) == (3.0f + 4.0f + 7.0f + 8.0f) / 4.0f);
  CHECK(y.at(1, 0, 0, 0) == (9.0f + 10.0f + 13.0f + 14.0f) / 4.0f);
  CHECK(y.at(1, 1, 0, 0) == (11.0f + 12.0f + 15.0f + 16.0f) / 4.0f);
}

TEST_CASE("pooling rejects non-divisible extents") {
  Tensor4<float> x({5, 4, 1, 1});
  Tensor4<float> y;
  CHECK_THROWS_AS(resample_down(x, {2, 2, 1}, y), ConfigError);
}

TEST_CASE("repeat upsampling copies the nearest source voxel") {
  Tensor4<float> x({2, 1, 1, 2});
  x.data = {1.0f, 2.0f, 3.0f, 4.0f};
  Tensor4<float> y;
  repeat_up(x, {2, 2, 1}, y);
  REQUIRE(y.shape == Vec4i{4, 2, 1, 2});
  CHECK(y.at(0, 0, 0, 0) == 1.0f);
  CHECK(y.at(1, 1, 0, 1) == 2.0f);
  CHECK(y.at(2, 0, 0, 0) == 3.0f);
  CHECK(y.at(3, 1, 0, 1) == 4.0f);
}

TEST_CASE("down then up on a constant is the identity") {
  Tensor4<float> x({4, 4, 2, 3});
  x.fill(2.5f);
  Tensor4<float> d, u;
  resample_down(x, {2, 2, 2}, d);
  repeat_up(d, {2, 2, 2}, u);
  CHECK(u.shape == x.shape);
  for (float v : u.data) CHECK(v == 2.5f);
}

TEST_CASE("resampling gradients match central differences") {
  for (std::uint64_t cs = 0; cs < 4; ++cs) {
    Rng rng(80 + cs);
    T4 x({4, 2, 2, 2});
    vtest::fill_normal(x.data, rng);

    {
      Probe pr;
      pr.init(static_cast<std::size_t>(2 * 1 * 1 * 2), rng);
      auto f = [&]() {
        T4 y;
        resample_down(x, {2, 2, 2}, y);
        return pr.loss(y.data);
      };
      T4 y;
      resample_down(x, {2, 2, 2}, y);
      T4 dx(x.shape);
      dx.zero();
      const T4 dy = pr.dL(y.shape);
      resample_down_backward({2, 2, 2}, dy, dx);
      for (std::size_t i = 0; i < x.data.size(); i += 3) check_grad(&x.data[i], dx.data[i], f);
    }
    {
      Probe pr;
      pr.init(static_cast<std::size_t>(8 * 4 * 2 * 2), rng);
      auto f = [&]() {
        T4 y;
        repeat_up(x, {2, 2, 1}, y);
        return pr.loss(y.data);
      };
      T4 y;
      repeat_up(x, {2, 2, 1}, y);
      T4 dx(x.shape);
      dx.zero();
      const T4 dy = pr.dL(y.shape);
      repeat_up_backward({2, 2, 1}, dy, dx);
      for (std::size_t i = 0; i < x.data.size(); i += 3) check_grad(&x.data[i], dx.data[i], f);
    }
  }
}

TEST_CASE("residual block gradients match central differences") {
  // composite check through GN/swish/conv/FiLM/residual in f64
  for (std::uint64_t cs = 0; cs < 3; ++cs) {
    Rng rng(90 + cs);
    const std::int64_t C = 4, g = 2, E = 4;
    std::vector<ParamTensor<double>> reg;
    ResBlock<double> block;
    block.build(reg, "rb", C, g, true, E, 0.0);
    for (auto& p : reg) {
      for (auto& v : p.v) v = rng.normal() * 0.3;
      std::fill(p.g.begin(), p.g.end(), 0.0);
    }

    T4 x({2, 2, 2, C});
    vtest::fill_normal(x.data, rng);
    const auto embed = sinusoidal_embed<double>(3, E);

    Probe pr;
    pr.init(x.data.size(), rng);
    ForwardOpts opts;
    opts.train = true;
    auto f = [&]() {
      ResBlock<double> fresh = block;
      const T4 y = fresh.forward(x, embed, opts, reg);
      return pr.loss(y.data);
    };

    const T4 y = block.forward(x, embed, opts, reg);
    const T4 dy = pr.dL(y.shape);
    const T4 dx = block.backward(dy, reg);

    for (int probe = 0; probe < 8; ++probe) {
      const std::size_t ix = rng.uniform_u64(x.data.size());
      check_grad(&x.data[ix], dx.data[ix], f);
    }
    for (auto& p : reg) {
      const std::size_t ip = rng.uniform_u64(p.v.size());
      check_grad(&p.v[ip], p.g[ip], f);
    }
  }
}

}  // TEST_SUITE
