#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

enum class ScalarKind { f32le, u32le };
enum class PadMode { error, fill, clamp };

ScalarKind scalar_kind_from_string(const std::string& s);
std::string to_string(ScalarKind k);

struct VolumeMeta {
  Vec4i dims{0, 0, 0, 0};
  Vec4d voxel_size{1.0, 1.0, 1.0, 1.0};  // µm, µm, µm, seconds per step
  Vec4i chunk_shape{0, 0, 0, 0};
  ScalarKind scalar_kind = ScalarKind::f32le;
  float fill_value = 0.0f;

  void validate() const;  // throws ConfigError naming the offending field
  Vec4i chunk_grid() const;
};

struct IoStats {
  std::uint64_t chunks_read = 0;
  std::uint64_t chunks_written = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
};

// 4D scalar field persisted as fixed-shape little-endian chunks under one
// directory: meta.json plus c{ix}_{iy}_{iz}_{it}.bin files. Edge chunks are
// stored full-size, padded with fill_value. Absent chunks read back as
// fill_value. Within a chunk the order is row-major, x slowest, t fastest.
class ChunkedVolume {
 public:
  static ChunkedVolume create(const std::filesystem::path& root, const VolumeMeta& meta);
  static ChunkedVolume open(const std::filesystem::path& root);

  const VolumeMeta& meta() const { return meta_; }
  const Vec4i& dims() const { return meta_.dims; }
  const std::filesystem::path& root() const { return root_; }

  // block shape must equal box extent; box must lie within dims. Partially
  // covered chunks are merged read-modify-write. Concurrent writes that
  // touch a common chunk are rejected with DataError.
  template <typename T>
  void write_subvolume(const Box4& box, const Tensor4<T>& block);

  // Returns exactly box.extent() voxels. With PadMode::error the box must
  // be inside dims; fill pads with fill_value; clamp repeats edge voxels.
  template <typename T>
  Tensor4<T> read_subvolume(const Box4& box, PadMode pad = PadMode::error) const;

  // Chunk grid indices touched by a read of box (brute-force oracle target).
  std::vector<Vec4i> chunks_for_box(const Box4& box) const;

  IoStats io_stats() const;
  void reset_io_stats() const;
  void set_trace(bool on) const;  // record touched chunk indices on reads
  std::vector<Vec4i> take_trace() const;

 private:
  // Shared across handle copies so counters and write-conflict tracking
  // refer to the store, not to one handle instance.
  struct Sync {
    std::atomic<std::uint64_t> chunks_read{0};
    std::atomic<std::uint64_t> chunks_written{0};
    std::atomic<std::uint64_t> bytes_read{0};
    std::atomic<std::uint64_t> bytes_written{0};
    std::mutex trace_mu;
    bool trace_on = false;
    std::vector<Vec4i> trace;
    std::mutex write_mu;
    std::set<std::int64_t> chunks_in_flight;
  };

  ChunkedVolume(std::filesystem::path root, VolumeMeta meta);

  std::filesystem::path chunk_path(const Vec4i& ci) const;
  std::int64_t chunk_linear(const Vec4i& ci) const;

  template <typename T>
  std::vector<T> load_chunk(const Vec4i& ci) const;  // fill_value if absent
  template <typename T>
  void store_chunk(const Vec4i& ci, const std::vector<T>& payload);

  template <typename T>
  void read_interior(const Box4& box, Tensor4<T>& out, const Vec4i& out_offset) const;

  void check_kind(ScalarKind requested) const;

  std::filesystem::path root_;
  VolumeMeta meta_;
  std::shared_ptr<Sync> sync_;
};

template <typename T>
constexpr ScalarKind scalar_kind_of();
template <>
constexpr ScalarKind scalar_kind_of<float>() { return ScalarKind::f32le; }
template <>
constexpr ScalarKind scalar_kind_of<std::uint32_t>() { return ScalarKind::u32le; }

}  // namespace volcast
