#include "volcast/shard.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace volcast {

using json = nlohmann::json;

double ShardPlan::load_overhead() const {
  double padded = 0.0;
  for (const auto& s : shards) {
    double v = 1.0;
    for (int a = 0; a < 3; ++a)
      v *= static_cast<double>(s.pad_hi[static_cast<std::size_t>(a)] -
                               s.pad_lo[static_cast<std::size_t>(a)]);
    padded += v;
  }
  return padded / static_cast<double>(dims[0] * dims[1] * dims[2]);
}

std::string ShardPlan::to_json_text() const {
  json j;
  j["dims"] = dims;
  j["grid"] = grid;
  j["halo"] = halo;
  j["receptive_field"] = rf.rf;
  j["load_overhead"] = load_overhead();
  json arr = json::array();
  for (const auto& s : shards) {
    json e;
    e["core"] = {{"lo", s.core_lo}, {"hi", s.core_hi}};
    e["padded"] = {{"lo", s.pad_lo}, {"hi", s.pad_hi}};
    arr.push_back(std::move(e));
  }
  j["shards"] = std::move(arr);
  return j.dump(2);
}

ShardPlan make_plan(const Vec3i& dims, const std::array<std::int64_t, 2>& grid,
                    const ModelConfig& cfg) {
  cfg.validate();
  if (grid[0] < 1 || grid[1] < 1) throw ConfigError("shard grid factors must be >= 1");
  for (int a = 0; a < 3; ++a)
    if (dims[static_cast<std::size_t>(a)] < 1)
      throw ConfigError("shard dims must be positive");
  if (dims[0] % grid[0] != 0 || dims[1] % grid[1] != 0)
    throw ConfigError("shard grid (" + std::to_string(grid[0]) + "," + std::to_string(grid[1]) +
                      ") does not divide xy extents (" + std::to_string(dims[0]) + "," +
                      std::to_string(dims[1]) + ")");

  ShardPlan plan;
  plan.dims = dims;
  plan.grid = grid;
  plan.rf = receptive_field(cfg);
  const Vec3i exact = stencil_radius(cfg);

  Vec3i cum{1, 1, 1};
  for (const auto& s : cfg.stages)
    for (int a = 0; a < 3; ++a) cum[static_cast<std::size_t>(a)] *= s[static_cast<std::size_t>(a)];

  for (int a = 0; a < 3; ++a) {
    const std::int64_t base = (plan.rf.rf[static_cast<std::size_t>(a)] - 1) / 2;
    std::int64_t h = std::max(base, exact[static_cast<std::size_t>(a)]);
    const std::int64_t c = cum[static_cast<std::size_t>(a)];
    h = ceil_div(h, c) * c;
    if (h >= dims[static_cast<std::size_t>(a)] && a < 2 && grid[static_cast<std::size_t>(a)] > 1)
      throw ConfigError("halo " + std::to_string(h) + " exceeds volume extent " +
                        std::to_string(dims[static_cast<std::size_t>(a)]) + " on axis " +
                        std::to_string(a));
    plan.halo[static_cast<std::size_t>(a)] = h;
  }

  const Vec3i core_ext{dims[0] / grid[0], dims[1] / grid[1], dims[2]};
  for (int a = 0; a < 3; ++a) {
    if (core_ext[static_cast<std::size_t>(a)] % cum[static_cast<std::size_t>(a)] != 0)
      throw ConfigError("shard core extent " +
                        std::to_string(core_ext[static_cast<std::size_t>(a)]) + " on axis " +
                        std::to_string(a) + " is not divisible by the downsampling factor " +
                        std::to_string(cum[static_cast<std::size_t>(a)]));
  }

  for (std::int64_t gx = 0; gx < grid[0]; ++gx)
    for (std::int64_t gy = 0; gy < grid[1]; ++gy) {
      ShardPlan::Shard s;
      s.core_lo = {gx * core_ext[0], gy * core_ext[1], 0};
      s.core_hi = {(gx + 1) * core_ext[0], (gy + 1) * core_ext[1], dims[2]};
      for (int a = 0; a < 3; ++a) {
        s.pad_lo[static_cast<std::size_t>(a)] =
            std::max<std::int64_t>(0, s.core_lo[static_cast<std::size_t>(a)] -
                                          plan.halo[static_cast<std::size_t>(a)]);
        s.pad_hi[static_cast<std::size_t>(a)] =
            std::min<std::int64_t>(dims[static_cast<std::size_t>(a)],
                                   s.core_hi[static_cast<std::size_t>(a)] +
                                       plan.halo[static_cast<std::size_t>(a)]);
      }
      plan.shards.push_back(s);
    }
  return plan;
}

Tensor4f sharded_forward(UNet<float>& model, const ShardPlan& plan, const ChunkedVolume& movie,
                         std::int64_t t_end, std::int64_t h, NormMode norm) {
  const ModelConfig& cfg = model.config();
  const std::int64_t C = cfg.context;
  const Vec4i vdims = movie.meta().dims;
  if (vdims[0] != plan.dims[0] || vdims[1] != plan.dims[1] || vdims[2] != plan.dims[2])
    throw DataError("sharded_forward: plan dims do not match the volume");
  if (t_end - C + 1 < 0 || t_end >= vdims[3])
    throw DataError("sharded_forward: context window outside the recording");

  const Vec3i sup = cfg.superres_factor();
  Tensor4f out({plan.dims[0] * sup[0], plan.dims[1] * sup[1], plan.dims[2] * sup[2],
                cfg.out_channels()});
  ForwardOpts opts;
  opts.train = false;
  opts.norm = norm;

  for (const auto& s : plan.shards) {
    Box4 box{{s.pad_lo[0], s.pad_lo[1], s.pad_lo[2], t_end - C + 1},
             {s.pad_hi[0], s.pad_hi[1], s.pad_hi[2], t_end + 1}};
    const Tensor4f context = movie.read_subvolume<float>(box, PadMode::error);
    const Tensor4f pred = model.forward(context, h, opts);

    const Vec3i off{(s.core_lo[0] - s.pad_lo[0]) * sup[0], (s.core_lo[1] - s.pad_lo[1]) * sup[1],
                    (s.core_lo[2] - s.pad_lo[2]) * sup[2]};
    const Vec3i ext{(s.core_hi[0] - s.core_lo[0]) * sup[0],
                    (s.core_hi[1] - s.core_lo[1]) * sup[1],
                    (s.core_hi[2] - s.core_lo[2]) * sup[2]};
    const std::int64_t ch = cfg.out_channels();
    for (std::int64_t x = 0; x < ext[0]; ++x)
      for (std::int64_t y = 0; y < ext[1]; ++y)
        for (std::int64_t z = 0; z < ext[2]; ++z) {
          const float* src = pred.ptr(off[0] + x, off[1] + y, off[2] + z);
          float* dst = out.ptr(s.core_lo[0] * sup[0] + x, s.core_lo[1] * sup[1] + y,
                               s.core_lo[2] * sup[2] + z);
          std::copy(src, src + ch, dst);
        }
  }
  return out;
}

}  // namespace volcast
