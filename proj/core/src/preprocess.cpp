#include "volcast/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace volcast {

void BaselineConfig::validate() const {
  if (!(percentile > 0.0 && percentile < 100.0))
    throw ConfigError("baseline percentile must be in (0,100), got " +
                      std::to_string(percentile));
  if (window < 0) throw ConfigError("baseline window must be >= 0 (0 = global)");
  if (!(epsilon > 0.0)) throw ConfigError("baseline epsilon must be positive");
}

void ClampRange::validate() const {
  if (!(lo < hi)) throw ConfigError("clamp range requires lo < hi");
}

float percentile_nearest_rank(std::vector<float> values, double p) {
  if (values.empty()) throw ConfigError("percentile of empty set");
  std::sort(values.begin(), values.end());
  std::int64_t n = static_cast<std::int64_t>(values.size());
  std::int64_t rank = static_cast<std::int64_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::int64_t>(rank, 1, n);
  return values[static_cast<std::size_t>(rank - 1)];
}

void dff_normalize(const ChunkedVolume& raw, const BaselineConfig& cfg, const ClampRange& clamp,
                   ChunkedVolume& out) {
  cfg.validate();
  clamp.validate();
  if (raw.dims() != out.dims())
    throw DataError("dff_normalize: dims mismatch " + to_string(raw.dims()) + " vs " +
                    to_string(out.dims()));
  const Vec4i d = raw.dims();
  const std::int64_t T = d[3];

  std::vector<float> series(static_cast<std::size_t>(T));
  std::vector<float> win;
  for (std::int64_t z = 0; z < d[2]; ++z) {
    Box4 slab{{0, 0, z, 0}, {d[0], d[1], z + 1, T}};
    Tensor4f block = raw.read_subvolume<float>(slab);
    for (std::int64_t x = 0; x < d[0]; ++x)
      for (std::int64_t y = 0; y < d[1]; ++y) {
        float* p = block.data.data() + block.index(x, y, 0, 0);
        for (std::int64_t t = 0; t < T; ++t) {
          if (p[t] < 0.0f)
            throw DataError("dff_normalize: negative raw value at voxel (" + std::to_string(x) +
                            "," + std::to_string(y) + "," + std::to_string(z) + "), t=" +
                            std::to_string(t));
          series[static_cast<std::size_t>(t)] = p[t];
        }
        if (cfg.window == 0) {
          const double f = percentile_nearest_rank(series, cfg.percentile);
          for (std::int64_t t = 0; t < T; ++t) {
            double v = (static_cast<double>(p[t]) - f) / (f + cfg.epsilon);
            p[t] = static_cast<float>(std::clamp(v, clamp.lo, clamp.hi));
          }
        } else {
          for (std::int64_t t = T - 1; t >= 0; --t) {
            std::int64_t w0 = std::max<std::int64_t>(0, t - cfg.window + 1);
            win.assign(series.begin() + w0, series.begin() + t + 1);
            const double f = percentile_nearest_rank(std::move(win), cfg.percentile);
            double v = (static_cast<double>(p[t]) - f) / (f + cfg.epsilon);
            p[t] = static_cast<float>(std::clamp(v, clamp.lo, clamp.hi));
          }
        }
      }
    out.write_subvolume(slab, block);
  }
}

std::int64_t center_crop_offset(std::int64_t extent, std::int64_t size) {
  if (size < 1 || size > extent)
    throw ConfigError("center_crop: size " + std::to_string(size) +
                      " out of range for extent " + std::to_string(extent));
  return (extent - size) / 2;
}

Vec4i cropped_dims(const Vec4i& dims, int axis, std::int64_t size) {
  if (axis < 0 || axis > 3) throw ConfigError("center_crop: axis must be 0..3");
  center_crop_offset(dims[static_cast<std::size_t>(axis)], size);
  Vec4i out = dims;
  out[static_cast<std::size_t>(axis)] = size;
  return out;
}

void center_crop(const ChunkedVolume& v, int axis, std::int64_t size, ChunkedVolume& out) {
  Vec4i want = cropped_dims(v.dims(), axis, size);
  if (out.dims() != want)
    throw DataError("center_crop: output dims " + to_string(out.dims()) + " != expected " +
                    to_string(want));
  const std::int64_t off = center_crop_offset(v.dims()[static_cast<std::size_t>(axis)], size);
  const Vec4i d = out.dims();
  const std::int64_t tb = std::max<std::int64_t>(1, v.meta().chunk_shape[3]);
  for (std::int64_t b0 = 0; b0 < d[3]; b0 += tb) {
    std::int64_t b1 = std::min(d[3], b0 + tb);
    Box4 src{{0, 0, 0, b0}, {d[0], d[1], d[2], b1}};
    src.lo[static_cast<std::size_t>(axis)] += off;
    src.hi[static_cast<std::size_t>(axis)] += off;
    Tensor4f block = v.read_subvolume<float>(src);
    out.write_subvolume({{0, 0, 0, b0}, {d[0], d[1], d[2], b1}}, block);
  }
}

Vec4i downsampled_dims(const Vec4i& dims, const Vec3i& factors) {
  for (int a = 0; a < 3; ++a) {
    if (factors[static_cast<std::size_t>(a)] < 1)
      throw ConfigError("downsample factors must be >= 1");
    if (dims[static_cast<std::size_t>(a)] % factors[static_cast<std::size_t>(a)] != 0)
      throw ConfigError("downsample: axis " + std::to_string(a) + " extent " +
                        std::to_string(dims[static_cast<std::size_t>(a)]) +
                        " not divisible by factor " +
                        std::to_string(factors[static_cast<std::size_t>(a)]));
  }
  return {dims[0] / factors[0], dims[1] / factors[1], dims[2] / factors[2], dims[3]};
}

void downsample_avg(const ChunkedVolume& v, const Vec3i& factors, ChunkedVolume& out) {
  Vec4i want = downsampled_dims(v.dims(), factors);
  if (out.dims() != want)
    throw DataError("downsample_avg: output dims " + to_string(out.dims()) + " != expected " +
                    to_string(want));
  const Vec4i d = v.dims();
  const Vec4i o = want;
  const double inv = 1.0 / static_cast<double>(prod(factors));
  const std::int64_t tb = std::max<std::int64_t>(1, v.meta().chunk_shape[3]);
  for (std::int64_t b0 = 0; b0 < d[3]; b0 += tb) {
    std::int64_t b1 = std::min(d[3], b0 + tb);
    const std::int64_t bt = b1 - b0;
    Tensor4f block = v.read_subvolume<float>({{0, 0, 0, b0}, {d[0], d[1], d[2], b1}});
    Tensor4f down({o[0], o[1], o[2], bt});
    std::vector<double> acc(static_cast<std::size_t>(bt));
    for (std::int64_t x = 0; x < o[0]; ++x)
      for (std::int64_t y = 0; y < o[1]; ++y)
        for (std::int64_t z = 0; z < o[2]; ++z) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::int64_t dx = 0; dx < factors[0]; ++dx)
            for (std::int64_t dy = 0; dy < factors[1]; ++dy)
              for (std::int64_t dz = 0; dz < factors[2]; ++dz) {
                const float* p = block.ptr(x * factors[0] + dx, y * factors[1] + dy,
                                           z * factors[2] + dz);
                for (std::int64_t t = 0; t < bt; ++t) acc[static_cast<std::size_t>(t)] += p[t];
              }
          float* q = down.ptr(x, y, z);
          for (std::int64_t t = 0; t < bt; ++t)
            q[t] = static_cast<float>(acc[static_cast<std::size_t>(t)] * inv);
        }
    out.write_subvolume({{0, 0, 0, b0}, {o[0], o[1], o[2], b1}}, down);
  }
}

SegmentationMask downsample_mask_stride(const SegmentationMask& m, const Vec3i& factors) {
  Vec4i want = downsampled_dims({m.dims[0], m.dims[1], m.dims[2], 1}, factors);
  SegmentationMask out;
  out.dims = {want[0], want[1], want[2]};
  out.labels.assign(static_cast<std::size_t>(prod(out.dims)), 0);
  for (std::int64_t x = 0; x < out.dims[0]; ++x)
    for (std::int64_t y = 0; y < out.dims[1]; ++y)
      for (std::int64_t z = 0; z < out.dims[2]; ++z)
        out.labels[static_cast<std::size_t>(out.index(x, y, z))] =
            m.at(x * factors[0], y * factors[1], z * factors[2]);
  return out;
}

}  // namespace volcast
