#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "volcast/objectives.hpp"

using namespace volcast;

namespace {

SegmentationMask demo_mask() {
  // 3x2x1: neuron 1 = two voxels, neuron 2 = one voxel, one background voxel,
  // neuron 3 absent (empty)
  SegmentationMask m;
  m.dims = {3, 2, 1};
  m.labels = {1u, 1u, 0u, 2u, 0u, 0u};
  return m;
}

// Scalar oracle: mean over non-empty neurons of |mean(pred) - mean(target)|.
double trace_mae_oracle(const Tensor4f& pred, const Tensor4f& target, const NeuronIndex& idx,
                        std::int64_t c = 0) {
  const std::vector<double> pm = mask_frame(pred, idx, c);
  const std::vector<double> tm = mask_frame(target, idx, c);
  double s = 0.0;
  std::int64_t n_used = 0;
  for (std::int64_t n = 0; n < idx.n_neurons(); ++n) {
    if (idx.counts[static_cast<std::size_t>(n)] == 0) continue;
    s += std::abs(pm[static_cast<std::size_t>(n)] - tm[static_cast<std::size_t>(n)]);
    ++n_used;
  }
  return n_used == 0 ? 0.0 : s / static_cast<double>(n_used);
}

double gauss_cdf(double x, double mu, double sigma) {
  return 0.5 * (1.0 + std::erf((x - mu) / (sigma * std::sqrt(2.0))));
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("trace mae matches the per-neuron oracle") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  for (std::uint64_t cs = 0; cs < 25; ++cs) {
    Rng rng(500 + cs);
    Tensor4f pred({3, 2, 1, 1}), target({3, 2, 1, 1});
    vtest::fill_normal(pred.data, rng);
    vtest::fill_normal(target.data, rng);
    const LossGrad lg = trace_mae(pred, target, idx);
    CHECK(vtest::rel_err(lg.loss, trace_mae_oracle(pred, target, idx)) < 1e-12);
  }
}

TEST_CASE("trace mae worked example with hand numbers") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  Tensor4f pred({3, 2, 1, 1}), target({3, 2, 1, 1});
  pred.data = {1.0f, 3.0f, 99.0f, 5.0f, -4.0f, 7.0f};   // neuron1 mean 2, neuron2 5
  target.data = {0.0f, 1.0f, -8.0f, 2.0f, 11.0f, 0.0f}; // neuron1 mean 0.5, neuron2 2
  // background voxels (99, -4, 7 / -8, 11, 0) must not matter
  const LossGrad lg = trace_mae(pred, target, idx);
  CHECK(vtest::rel_err(lg.loss, ((2.0 - 0.5) + (5.0 - 2.0)) / 2.0) < 1e-12);

  // gradient: sign/(|N|*|seg|) on neuron voxels, zero elsewhere
  CHECK(vtest::rel_err(lg.grad.at(0, 0, 0, 0), 1.0 / (2.0 * 2.0)) < 1e-12);
  CHECK(vtest::rel_err(lg.grad.at(0, 1, 0, 0), 1.0 / (2.0 * 2.0)) < 1e-12);
  CHECK(vtest::rel_err(lg.grad.at(1, 1, 0, 0), 1.0 / (2.0 * 1.0)) < 1e-12);
  CHECK(lg.grad.at(1, 0, 0, 0) == 0.0f);
  CHECK(lg.grad.at(2, 0, 0, 0) == 0.0f);
  CHECK(lg.grad.at(2, 1, 0, 0) == 0.0f);
}

TEST_CASE("trace mae gradient matches central differences") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  Rng rng(510);
  Tensor4f predf({3, 2, 1, 1}), targetf({3, 2, 1, 1});
  vtest::fill_normal(predf.data, rng);
  vtest::fill_normal(targetf.data, rng);
  // f64 shadow of pred for the finite difference
  std::vector<double> p(predf.data.begin(), predf.data.end());
  auto f = [&]() {
    Tensor4f pf({3, 2, 1, 1});
    for (std::size_t i = 0; i < p.size(); ++i) pf.data[i] = static_cast<float>(p[i]);
    return trace_mae(pf, targetf, idx).loss;
  };
  const LossGrad lg = trace_mae(predf, targetf, idx);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double fd = vtest::central_diff(&p[i], f, 1e-4);
    CHECK(std::abs(static_cast<double>(lg.grad.data[i]) - fd) < 1e-3);
  }
}

TEST_CASE("trace mae is homogeneous in the error") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  Rng rng(520);
  Tensor4f target({3, 2, 1, 1}), delta({3, 2, 1, 1});
  vtest::fill_normal(target.data, rng);
  vtest::fill_normal(delta.data, rng);
  Tensor4f p1(target.shape), p3(target.shape);
  for (std::size_t i = 0; i < delta.data.size(); ++i) {
    p1.data[i] = target.data[i] + delta.data[i];
    p3.data[i] = target.data[i] + 3.0f * delta.data[i];
  }
  const double l1 = trace_mae(p1, target, idx).loss;
  const double l3 = trace_mae(p3, target, idx).loss;
  CHECK(vtest::rel_err(l3, 3.0 * l1) < 1e-5);
  // perfect prediction scores zero with zero gradient
  const LossGrad z = trace_mae(target, target, idx);
  CHECK(z.loss == 0.0);
  for (float g : z.grad.data) CHECK(g == 0.0f);
}

TEST_CASE("voxel mae oracle, ties get zero subgradient") {
  Rng rng(530);
  Tensor4f pred({2, 2, 2, 3}), target({2, 2, 2, 3});
  vtest::fill_normal(pred.data, rng);
  vtest::fill_normal(target.data, rng);
  target.data[5] = pred.data[5];  // tie

  const LossGrad lg = voxel_mae(pred, target);
  double want = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    want += std::abs(static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]));
  want /= static_cast<double>(pred.data.size());
  CHECK(vtest::rel_err(lg.loss, want) < 1e-12);

  const double unit = 1.0 / static_cast<double>(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (i == 5) {
      CHECK(lg.grad.data[i] == 0.0f);
    } else {
      const double s = pred.data[i] > target.data[i] ? unit : -unit;
      CHECK(vtest::rel_err(lg.grad.data[i], s) < 1e-6);
    }
  }
  Tensor4f wrong({2, 2, 1, 3});
  CHECK_THROWS_AS(voxel_mae(pred, wrong), DataError);
}

TEST_CASE("direct mae equals the mean of per-frame trace mae") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  Rng rng(540);
  const std::int64_t H = 4;
  Tensor4f pred({3, 2, 1, H}), target({3, 2, 1, H});
  vtest::fill_normal(pred.data, rng);
  vtest::fill_normal(target.data, rng);

  const LossGrad lg = direct_mae(pred, target, idx);
  double want = 0.0;
  for (std::int64_t h = 0; h < H; ++h) {
    const Tensor4f ph = slice_channels(pred, h, h + 1);
    const Tensor4f th = slice_channels(target, h, h + 1);
    want += trace_mae(ph, th, idx).loss;
  }
  want /= static_cast<double>(H);
  CHECK(vtest::rel_err(lg.loss, want) < 1e-10);

  // gradient stacks the per-frame gradients scaled by 1/H
  for (std::int64_t h = 0; h < H; ++h) {
    const Tensor4f ph = slice_channels(pred, h, h + 1);
    const Tensor4f th = slice_channels(target, h, h + 1);
    const LossGrad one = trace_mae(ph, th, idx);
    for (std::int64_t x = 0; x < 3; ++x)
      for (std::int64_t y = 0; y < 2; ++y)
        CHECK(vtest::rel_err(lg.grad.at(x, y, 0, h),
                             one.grad.at(x, y, 0, 0) / static_cast<double>(H)) < 1e-5);
  }
}

TEST_CASE("bin spec constants") {
  const BinSpec b = BinSpec::make(32, ClampRange{});
  CHECK(b.width() == doctest::Approx(0.0546875).epsilon(1e-12));
  CHECK(b.sigma == doctest::Approx(0.041015625).epsilon(1e-12));
  CHECK(b.edge(0) == doctest::Approx(-0.25));
  CHECK(b.edge(32) == doctest::Approx(1.5));
  CHECK(b.center(0) == doctest::Approx(-0.25 + 0.0546875 / 2.0));
  BinSpec bad = b;
  bad.n_bins = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = b;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encoding sums to one and matches renormalized CDF differences") {
  const BinSpec b = BinSpec::make(32, ClampRange{});
  for (double y : {-0.25, -0.1, 0.0, 0.3, 0.74, 1.2, 1.5}) {
    const std::vector<double> e = hl_gauss_encode(y, b);
    REQUIRE(e.size() == 32);
    const double total = std::accumulate(e.begin(), e.end(), 0.0);
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (double p : e) CHECK(p >= 0.0);

    // oracle: CDF differences over the support, renormalized
    const double z = gauss_cdf(b.range.hi, y, b.sigma) - gauss_cdf(b.range.lo, y, b.sigma);
    for (std::int64_t i = 0; i < 32; ++i) {
      const double want =
          (gauss_cdf(b.edge(i + 1), y, b.sigma) - gauss_cdf(b.edge(i), y, b.sigma)) / z;
      CHECK(std::abs(e[static_cast<std::size_t>(i)] - want) < 1e-12);
    }
  }
}

TEST_CASE("encoding concentrates mass near the target") {
  const BinSpec b = BinSpec::make(32, ClampRange{});
  const double y = 0.6;
  const std::vector<double> e = hl_gauss_encode(y, b);
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < e.size(); ++i)
    if (e[i] > e[argmax]) argmax = i;
  CHECK(std::abs(b.center(static_cast<std::int64_t>(argmax)) - y) <= b.width());
  // out-of-range targets clamp to the ends
  const std::vector<double> lo = hl_gauss_encode(-5.0, b);
  CHECK(lo[0] > 0.4);
  CHECK_THROWS_AS(hl_gauss_encode(std::nan(""), b), NumericError);
}

TEST_CASE("decode inverts encode to within a bin width") {
  const BinSpec b = BinSpec::make(32, ClampRange{});
  for (double y : {-0.2, 0.0, 0.33, 0.9, 1.45}) {
    const std::vector<double> e = hl_gauss_encode(y, b);
    // feed log-probabilities as logits: softmax recovers e exactly
    std::vector<double> logits(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) logits[i] = std::log(std::max(e[i], 1e-300));
    const double back = hl_gauss_decode(logits, b);
    CHECK(std::abs(back - y) < b.width());
  }
}

TEST_CASE("decode is invariant to logit shifts") {
  const BinSpec b = BinSpec::make(16, ClampRange{});
  Rng rng(550);
  std::vector<double> logits(16);
  for (auto& v : logits) v = rng.normal();
  std::vector<double> shifted = logits;
  for (auto& v : shifted) v += 37.5;
  CHECK(std::abs(hl_gauss_decode(logits, b) - hl_gauss_decode(shifted, b)) < 1e-9);
  // decode always lands inside the value range
  CHECK(hl_gauss_decode(logits, b) > b.range.lo);
  CHECK(hl_gauss_decode(logits, b) < b.range.hi);
}

TEST_CASE("cross entropy gradient is softmax minus encoding") {
  const BinSpec b = BinSpec::make(8, ClampRange{});
  Rng rng(560);
  std::vector<double> logits(8);
  for (auto& v : logits) v = rng.normal();
  const double y = 0.4;

  const ScalarLossGrad lg = hl_gauss_loss(logits, y, b);

  // oracle: softmax - encoding
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double zsum = 0.0;
  std::vector<double> q(8);
  for (std::size_t i = 0; i < 8; ++i) {
    q[i] = std::exp(logits[i] - mx);
    zsum += q[i];
  }
  for (auto& v : q) v /= zsum;
  const std::vector<double> p = hl_gauss_encode(y, b);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(lg.grad[i] - (q[i] - p[i])) < 1e-12);

  // loss value: -sum p log q
  double want = 0.0;
  for (std::size_t i = 0; i < 8; ++i) want -= p[i] * std::log(q[i]);
  CHECK(vtest::rel_err(lg.loss, want) < 1e-10);

  // central differences in f64 confirm the analytic gradient
  for (std::size_t i = 0; i < 8; ++i) {
    auto f = [&]() { return hl_gauss_loss(logits, y, b).loss; };
    const double fd = vtest::central_diff(&logits[i], f);
    CHECK(std::abs(lg.grad[i] - fd) < 1e-8);
  }

  // minimum at logits = log p: gradient vanishes
  std::vector<double> opt(8);
  for (std::size_t i = 0; i < 8; ++i) opt[i] = std::log(p[i]);
  const ScalarLossGrad at_opt = hl_gauss_loss(opt, y, b);
  for (double g : at_opt.grad) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("trace-level distributional loss reduces to scalar losses") {
  const SegmentationMask m = demo_mask();
  const NeuronIndex idx = build_index(m);
  const BinSpec b = BinSpec::make(8, ClampRange{});
  Rng rng(570);
  Tensor4f logits({3, 2, 1, 8}), target({3, 2, 1, 1});
  vtest::fill_normal(logits.data, rng);
  for (auto& v : target.data) v = static_cast<float>(rng.uniform());

  const LossGrad lg = hl_gauss_trace_loss(logits, target, idx, b);

  // oracle: per-neuron mean logits and mean target, scalar loss, averaged
  const std::vector<double> tmean = mask_frame(target, idx, 0);
  double want = 0.0;
  std::int64_t used = 0;
  for (std::int64_t n = 0; n < idx.n_neurons(); ++n) {
    if (idx.counts[static_cast<std::size_t>(n)] == 0) continue;
    std::vector<double> nl(8, 0.0);
    for (std::int64_t c = 0; c < 8; ++c) {
      const std::vector<double> ch = mask_frame(logits, idx, c);
      nl[static_cast<std::size_t>(c)] = ch[static_cast<std::size_t>(n)];
    }
    want += hl_gauss_loss(nl, tmean[static_cast<std::size_t>(n)], b).loss;
    ++used;
  }
  want /= static_cast<double>(used);
  CHECK(vtest::rel_err(lg.loss, want) < 1e-6);

  // gradient spreads uniformly over each neuron's voxels
  // f64 finite difference through the whole composite
  std::vector<double> shadow(logits.data.begin(), logits.data.end());
  auto f = [&]() {
    Tensor4f lf({3, 2, 1, 8});
    for (std::size_t i = 0; i < shadow.size(); ++i) lf.data[i] = static_cast<float>(shadow[i]);
    return hl_gauss_trace_loss(lf, target, idx, b).loss;
  };
  Rng pick(571);
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t i = pick.uniform_u64(shadow.size());
    const double fd = vtest::central_diff(&shadow[i], f, 1e-3);
    CHECK(std::abs(static_cast<double>(lg.grad.data[i]) - fd) < 1e-3);
  }
  // background voxels carry no gradient
  for (std::int64_t c = 0; c < 8; ++c) {
    CHECK(lg.grad.at(2, 0, 0, c) == 0.0f);
    CHECK(lg.grad.at(2, 1, 0, c) == 0.0f);
    CHECK(lg.grad.at(1, 0, 0, c) == 0.0f);
  }
}

TEST_CASE("frame decode applies the scalar decode voxelwise") {
  const BinSpec b = BinSpec::make(8, ClampRange{});
  Rng rng(580);
  Tensor4f logits({2, 2, 1, 8});
  vtest::fill_normal(logits.data, rng);
  const Tensor4f dec = hl_gauss_decode_frame(logits, b);
  REQUIRE(dec.shape == Vec4i{2, 2, 1, 1});
  for (std::int64_t x = 0; x < 2; ++x)
    for (std::int64_t y = 0; y < 2; ++y) {
      std::vector<double> l(8);
      for (std::int64_t c = 0; c < 8; ++c) l[static_cast<std::size_t>(c)] = logits.at(x, y, 0, c);
      CHECK(vtest::rel_err(dec.at(x, y, 0, 0), hl_gauss_decode(l, b)) < 1e-6);
    }
}

}  // TEST_SUITE
