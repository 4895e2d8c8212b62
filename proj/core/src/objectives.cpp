#include "volcast/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace volcast {

void BinSpec::validate() const {
  if (n_bins < 2) throw ConfigError("bins: n_bins must be >= 2");
  if (!(sigma > 0.0)) throw ConfigError("bins: sigma must be > 0");
  if (!(range.hi > range.lo)) throw ConfigError("bins: range must be non-degenerate");
}

BinSpec BinSpec::make(std::int64_t n_bins, ClampRange range) {
  BinSpec b;
  b.n_bins = n_bins;
  b.range = range;
  b.sigma = 0.75 * b.width();
  b.validate();
  return b;
}

namespace {

void check_same_shape(const Tensor4f& a, const Tensor4f& b, const char* what) {
  if (a.shape != b.shape) throw DataError(std::string(what) + ": shape mismatch");
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Per-neuron spatial mean of channel c.
double neuron_mean(const Tensor4f& frame, const NeuronIndex& idx, std::size_t n,
                   std::int64_t c) {
  const auto& vox = idx.voxels[n];
  const std::int64_t ch = frame.shape[3];
  double acc = 0.0;
  for (std::int64_t flat : vox) acc += frame.data[static_cast<std::size_t>(flat * ch + c)];
  return acc / static_cast<double>(vox.size());
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> q(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    q[i] = std::exp(logits[i] - mx);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

}  // namespace

LossGrad trace_mae(const Tensor4f& pred_frame, const Tensor4f& target_frame,
                   const NeuronIndex& idx) {
  check_same_shape(pred_frame, target_frame, "trace_mae");
  if (pred_frame.shape[3] != 1) throw DataError("trace_mae: expected a single-channel frame");
  if (idx.n_nonempty() == 0) throw DataError("trace_mae: all neurons empty");
  LossGrad out;
  out.grad = Tensor4f(pred_frame.shape);
  const double inv_n = 1.0 / static_cast<double>(idx.n_nonempty());
  for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
    if (idx.voxels[n].empty()) continue;
    const double d = neuron_mean(pred_frame, idx, n, 0) - neuron_mean(target_frame, idx, n, 0);
    out.loss += std::abs(d) * inv_n;
    const float g =
        static_cast<float>(sgn(d) * inv_n / static_cast<double>(idx.voxels[n].size()));
    for (std::int64_t flat : idx.voxels[n]) out.grad.data[static_cast<std::size_t>(flat)] = g;
  }
  return out;
}

LossGrad voxel_mae(const Tensor4f& pred, const Tensor4f& target) {
  check_same_shape(pred, target, "voxel_mae");
  LossGrad out;
  out.grad = Tensor4f(pred.shape);
  const std::size_t n = pred.data.size();
  if (n == 0) throw DataError("voxel_mae: empty tensors");
  const double inv = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    acc += std::abs(d);
    out.grad.data[i] = static_cast<float>(sgn(d) * inv);
  }
  out.loss = acc * inv;
  return out;
}

LossGrad direct_mae(const Tensor4f& pred_frames, const Tensor4f& target_frames,
                    const NeuronIndex& idx) {
  check_same_shape(pred_frames, target_frames, "direct_mae");
  if (idx.n_nonempty() == 0) throw DataError("direct_mae: all neurons empty");
  const std::int64_t H = pred_frames.shape[3];
  if (H < 1) throw DataError("direct_mae: no frames");
  LossGrad out;
  out.grad = Tensor4f(pred_frames.shape);
  const double inv_n = 1.0 / static_cast<double>(idx.n_nonempty());
  const double inv_h = 1.0 / static_cast<double>(H);
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
      if (idx.voxels[n].empty()) continue;
      const double d =
          neuron_mean(pred_frames, idx, n, h) - neuron_mean(target_frames, idx, n, h);
      out.loss += std::abs(d) * inv_n * inv_h;
      const float g = static_cast<float>(sgn(d) * inv_n * inv_h /
                                         static_cast<double>(idx.voxels[n].size()));
      for (std::int64_t flat : idx.voxels[n])
        out.grad.data[static_cast<std::size_t>(flat * H + h)] = g;
    }
  }
  return out;
}

std::vector<double> hl_gauss_encode(double y, const BinSpec& bins) {
  bins.validate();
  if (!std::isfinite(y)) throw NumericError("hl_gauss_encode: non-finite target value");
  y = std::clamp(y, bins.range.lo, bins.range.hi);
  const double denom =
      norm_cdf((bins.range.hi - y) / bins.sigma) - norm_cdf((bins.range.lo - y) / bins.sigma);
  std::vector<double> p(static_cast<std::size_t>(bins.n_bins));
  for (std::int64_t i = 0; i < bins.n_bins; ++i) {
    const double a = norm_cdf((bins.edge(i) - y) / bins.sigma);
    const double b = norm_cdf((bins.edge(i + 1) - y) / bins.sigma);
    p[static_cast<std::size_t>(i)] = (b - a) / denom;
  }
  return p;
}

ScalarLossGrad hl_gauss_loss(const std::vector<double>& logits, double y, const BinSpec& bins) {
  if (static_cast<std::int64_t>(logits.size()) != bins.n_bins)
    throw DataError("hl_gauss_loss: logits size != n_bins");
  const std::vector<double> p = hl_gauss_encode(y, bins);
  const std::vector<double> q = softmax(logits);
  ScalarLossGrad out;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (p[i] > 0.0) out.loss -= p[i] * std::log(q[i]);
    out.grad[i] = q[i] - p[i];
  }
  return out;
}

double hl_gauss_decode(const std::vector<double>& logits, const BinSpec& bins) {
  if (static_cast<std::int64_t>(logits.size()) != bins.n_bins)
    throw DataError("hl_gauss_decode: logits size != n_bins");
  const std::vector<double> q = softmax(logits);
  double acc = 0.0;
  for (std::int64_t i = 0; i < bins.n_bins; ++i)
    acc += q[static_cast<std::size_t>(i)] * bins.center(i);
  return acc;
}

LossGrad hl_gauss_trace_loss(const Tensor4f& logits_frame, const Tensor4f& target_frame,
                             const NeuronIndex& idx, const BinSpec& bins) {
  bins.validate();
  if (logits_frame.shape[3] != bins.n_bins)
    throw DataError("hl_gauss_trace_loss: logits channels != n_bins");
  if (target_frame.shape[3] != 1)
    throw DataError("hl_gauss_trace_loss: expected single-channel target");
  for (int a = 0; a < 3; ++a)
    if (logits_frame.shape[static_cast<std::size_t>(a)] !=
        target_frame.shape[static_cast<std::size_t>(a)])
      throw DataError("hl_gauss_trace_loss: spatial shape mismatch");
  if (idx.n_nonempty() == 0) throw DataError("hl_gauss_trace_loss: all neurons empty");

  LossGrad out;
  out.grad = Tensor4f(logits_frame.shape);
  const std::int64_t B = bins.n_bins;
  const double inv_n = 1.0 / static_cast<double>(idx.n_nonempty());
  std::vector<double> logits(static_cast<std::size_t>(B));
  for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
    const auto& vox = idx.voxels[n];
    if (vox.empty()) continue;
    std::fill(logits.begin(), logits.end(), 0.0);
    for (std::int64_t flat : vox)
      for (std::int64_t i = 0; i < B; ++i)
        logits[static_cast<std::size_t>(i)] +=
            logits_frame.data[static_cast<std::size_t>(flat * B + i)];
    const double inv_cnt = 1.0 / static_cast<double>(vox.size());
    for (double& v : logits) v *= inv_cnt;
    const double y = neuron_mean(target_frame, idx, n, 0);
    ScalarLossGrad s = hl_gauss_loss(logits, y, bins);
    out.loss += s.loss * inv_n;
    for (std::int64_t flat : vox)
      for (std::int64_t i = 0; i < B; ++i)
        out.grad.data[static_cast<std::size_t>(flat * B + i)] =
            static_cast<float>(s.grad[static_cast<std::size_t>(i)] * inv_n * inv_cnt);
  }
  return out;
}

Tensor4f hl_gauss_decode_frame(const Tensor4f& logits_frame, const BinSpec& bins) {
  bins.validate();
  if (logits_frame.shape[3] != bins.n_bins)
    throw DataError("hl_gauss_decode_frame: logits channels != n_bins");
  Tensor4f out({logits_frame.shape[0], logits_frame.shape[1], logits_frame.shape[2], 1});
  const std::int64_t B = bins.n_bins;
  const std::int64_t nvox = logits_frame.shape[0] * logits_frame.shape[1] * logits_frame.shape[2];
  std::vector<double> logits(static_cast<std::size_t>(B));
  for (std::int64_t v = 0; v < nvox; ++v) {
    for (std::int64_t i = 0; i < B; ++i)
      logits[static_cast<std::size_t>(i)] =
          logits_frame.data[static_cast<std::size_t>(v * B + i)];
    out.data[static_cast<std::size_t>(v)] = static_cast<float>(hl_gauss_decode(logits, bins));
  }
  return out;
}

}  // namespace volcast
