#pragma once
// Training objectives: trace-masked MAE, voxel MAE, direct multi-frame MAE,
// and a distributional cross-entropy head with Gaussian bin smoothing.
//
// All losses return the scalar and the gradient w.r.t. the prediction tensor.
// Averaging over sampled timesteps and lead times happens in the trainer.

#include <cstdint>
#include <vector>

#include "volcast/preprocess.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

// Uniform bins over a clamp range, targets smoothed by a Gaussian whose mass
// per bin comes from CDF differences renormalized over the range.
struct BinSpec {
  std::int64_t n_bins = 32;
  ClampRange range{};
  double sigma = 0.75 * (1.75 / 32.0);

  void validate() const;
  double width() const { return (range.hi - range.lo) / static_cast<double>(n_bins); }
  double edge(std::int64_t i) const { return range.lo + width() * static_cast<double>(i); }
  double center(std::int64_t i) const { return range.lo + width() * (static_cast<double>(i) + 0.5); }

  // sigma = 0.75 x bin width, the smoothing the binning method recommends.
  static BinSpec make(std::int64_t n_bins, ClampRange range);
};

struct LossGrad {
  double loss = 0.0;
  Tensor4f grad;
};

// Per-neuron mean MAE on one frame. grad at a voxel of neuron n is
// sign(pred_mean - target_mean) / (|N| * |seg(n)|), zero on background;
// |N| counts non-empty neurons. Frames are [X,Y,Z,1].
LossGrad trace_mae(const Tensor4f& pred_frame, const Tensor4f& target_frame,
                   const NeuronIndex& idx);

// Mean absolute error over every element; subgradient sign/count (0 at ties).
LossGrad voxel_mae(const Tensor4f& pred, const Tensor4f& target);

// Trace MAE averaged over the H channels of a multi-frame prediction
// [X,Y,Z,H]; equals the mean over h of per-frame trace_mae.
LossGrad direct_mae(const Tensor4f& pred_frames, const Tensor4f& target_frames,
                    const NeuronIndex& idx);

// Gaussian CDF-difference encoding of y (clamped to range) over the bins;
// sums to 1. Non-finite y raises NumericError.
std::vector<double> hl_gauss_encode(double y, const BinSpec& bins);

struct ScalarLossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Cross-entropy between softmax(logits) and the encoding of y; grad is
// softmax(logits) - encoding.
ScalarLossGrad hl_gauss_loss(const std::vector<double>& logits, double y, const BinSpec& bins);

// Expected value under softmax(logits): sum of probabilities times bin
// centers. Invariant to adding a constant to all logits.
double hl_gauss_decode(const std::vector<double>& logits, const BinSpec& bins);

// Distributional loss at the trace level: per-neuron mean of the logits
// frame [X,Y,Z,n_bins] over the neuron's voxels forms the neuron's logits;
// the target is the encoded per-neuron mean of target_frame [X,Y,Z,1].
// Loss averages cross-entropies over non-empty neurons; the gradient spreads
// back uniformly, mirroring trace_mae's 1/(|N|*|seg(n)|) weighting.
LossGrad hl_gauss_trace_loss(const Tensor4f& logits_frame, const Tensor4f& target_frame,
                             const NeuronIndex& idx, const BinSpec& bins);

// Decode a logits frame voxelwise into values, [X,Y,Z,n_bins] -> [X,Y,Z,1].
Tensor4f hl_gauss_decode_frame(const Tensor4f& logits_frame, const BinSpec& bins);

}  // namespace volcast
