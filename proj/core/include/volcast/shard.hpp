#pragma once
// Spatial xy sharding of loading and forward execution with halo padding.
// Shards run in-process and independently; exactness against the unsharded
// forward holds with frozen normalization statistics and adequate halo.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volcast/model.hpp"
#include "volcast/tensor.hpp"
#include "volcast/volstore.hpp"

namespace volcast {

struct ShardPlan {
  Vec3i dims{0, 0, 0};
  std::array<std::int64_t, 2> grid{1, 1};
  Vec3i halo{0, 0, 0};
  ReceptiveField rf;

  struct Shard {
    Vec3i core_lo, core_hi;  // disjoint cover of the volume
    Vec3i pad_lo, pad_hi;    // core grown by halo, clamped to bounds
  };
  std::vector<Shard> shards;  // row-major over (gx, gy)

  // Total padded voxels / volume voxels; the cost of halo duplication.
  double load_overhead() const;
  std::string to_json_text() const;
};

// Halo per axis is the larger of (receptive_field-1)/2 and the exact stencil
// radius, rounded up so downsampling stages still divide every padded
// extent. Grid must divide the xy extents.
ShardPlan make_plan(const Vec3i& dims, const std::array<std::int64_t, 2>& grid,
                    const ModelConfig& cfg);

// Runs the model shard by shard: each shard reads only its padded box of the
// context frames ending at t_end, runs forward, and contributes its core
// region. Returns the stitched output at output resolution. Frozen
// normalization preserves equality with the unsharded forward.
Tensor4f sharded_forward(UNet<float>& model, const ShardPlan& plan, const ChunkedVolume& movie,
                         std::int64_t t_end, std::int64_t h,
                         NormMode norm = NormMode::frozen);

}  // namespace volcast
