#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/tensor.hpp"
#include "volcast/volstore.hpp"

namespace volcast {

// Label volume assigning voxels to neuron ids; 0 = background. Labels are
// expected in 1..N; ids missing from the volume become empty neurons.
struct SegmentationMask {
  Vec3i dims{0, 0, 0};
  std::vector<std::uint32_t> labels;  // x-major: ((x*Y + y)*Z + z)

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * dims[1] + y) * dims[2] + z;
  }
  std::uint32_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return labels[static_cast<std::size_t>(index(x, y, z))];
  }

  void save(const std::filesystem::path& root, const Vec4d& voxel_size = {1, 1, 1, 1}) const;
  static SegmentationMask load(const std::filesystem::path& root);
};

// Per-neuron voxel lists in deterministic x-major scan order. counts[n] == 0
// flags an empty neuron; empty neurons stay in place so ids remain stable
// across resolutions.
struct NeuronIndex {
  Vec3i dims{0, 0, 0};
  std::vector<std::vector<std::int64_t>> voxels;  // flat spatial indices per neuron
  std::vector<std::int64_t> counts;

  std::int64_t n_neurons() const { return static_cast<std::int64_t>(counts.size()); }
  std::int64_t n_nonempty() const;
};

struct TraceMatrix {
  std::int64_t neurons = 0;
  std::int64_t timesteps = 0;
  std::vector<float> values;                // row-major [neurons][timesteps]
  std::vector<std::uint8_t> empty;          // per-neuron flag, in-memory only

  float& at(std::int64_t n, std::int64_t t) {
    return values[static_cast<std::size_t>(n * timesteps + t)];
  }
  float at(std::int64_t n, std::int64_t t) const {
    return values[static_cast<std::size_t>(n * timesteps + t)];
  }
  static TraceMatrix zeros(std::int64_t n, std::int64_t t);
};

NeuronIndex build_index(const SegmentationMask& m);

// Per-neuron spatial mean of each frame in [t0, t1). Accumulation is f64;
// one neuron rendered with a constant recovers that constant exactly.
TraceMatrix extract_traces(const ChunkedVolume& v, const NeuronIndex& idx, std::int64_t t0,
                           std::int64_t t1);
TraceMatrix extract_traces(const Tensor4f& movie, const NeuronIndex& idx);

// Per-neuron mean of a single frame, channel c of a [X,Y,Z,C] tensor.
// Empty neurons yield 0. Used inside the training losses.
template <typename T>
std::vector<double> mask_frame(const Tensor4<T>& frame, const NeuronIndex& idx,
                               std::int64_t c = 0);

// Every voxel of neuron n at time t takes y_n(t); background is 0.
void render_traces(const NeuronIndex& idx, const TraceMatrix& traces, ChunkedVolume& out);
// Writes only segmented voxels into channel c of frame; background voxels
// and other channels keep whatever the caller put there.
void render_traces_frame(const NeuronIndex& idx, const TraceMatrix& traces, std::int64_t t,
                         Tensor4f& frame, std::int64_t c = 0);

TraceMatrix permute_assignment(const TraceMatrix& traces, std::uint64_t seed);

// Copies v with background voxels set to 0.
void zero_unsegmented(const ChunkedVolume& v, const SegmentationMask& m, ChunkedVolume& out);

void save_traces(const TraceMatrix& t, const std::filesystem::path& file);
TraceMatrix load_traces(const std::filesystem::path& file);
void write_traces_csv(const TraceMatrix& t, const std::filesystem::path& file);

}  // namespace volcast
