#pragma once

#include <cstdint>

#include "volcast/common.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/volstore.hpp"

namespace volcast {

struct BaselineConfig {
  double percentile = 5.0;
  std::int64_t window = 0;  // 0 = global; otherwise trailing window length in frames
  double epsilon = 1e-3;

  void validate() const;
};

struct ClampRange {
  double lo = -0.25;
  double hi = 1.5;

  void validate() const;
};

// Nearest-rank percentile (no interpolation): the ceil(p/100 * n)-th
// smallest value, 1-based.
float percentile_nearest_rank(std::vector<float> values, double p);

// out(s,t) = clamp((raw(s,t) - F_s) / (F_s + eps), lo, hi) with F_s the
// per-voxel baseline percentile, computed globally or over a trailing
// window of `window` frames ending at t. Streams one z slab at a time.
void dff_normalize(const ChunkedVolume& raw, const BaselineConfig& cfg, const ClampRange& clamp,
                   ChunkedVolume& out);

// offset = floor((dims[axis] - size) / 2); values copied bit-exactly.
void center_crop(const ChunkedVolume& v, int axis, std::int64_t size, ChunkedVolume& out);
std::int64_t center_crop_offset(std::int64_t extent, std::int64_t size);

// Block-mean over xyz factor blocks; t untouched. Dims must divide.
void downsample_avg(const ChunkedVolume& v, const Vec3i& factors, ChunkedVolume& out);

// Output voxel (i,j,k) = input label at (i*fx, j*fy, k*fz).
SegmentationMask downsample_mask_stride(const SegmentationMask& m, const Vec3i& factors);

// Output meta helpers for the CLI.
Vec4i cropped_dims(const Vec4i& dims, int axis, std::int64_t size);
Vec4i downsampled_dims(const Vec4i& dims, const Vec3i& factors);

}  // namespace volcast
