#include "volcast/volstore.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace volcast {

namespace fs = std::filesystem;
using json = nlohmann::json;

ScalarKind scalar_kind_from_string(const std::string& s) {
  if (s == "f32le") return ScalarKind::f32le;
  if (s == "u32le") return ScalarKind::u32le;
  throw ConfigError("unknown scalar_kind '" + s + "'");
}

std::string to_string(ScalarKind k) {
  return k == ScalarKind::f32le ? "f32le" : "u32le";
}

void VolumeMeta::validate() const {
  static const char* axis_names[4] = {"x", "y", "z", "t"};
  for (int a = 0; a < 4; ++a) {
    if (dims[a] < 1)
      throw ConfigError(std::string("meta.dims.") + axis_names[a] + " must be >= 1, got " +
                        std::to_string(dims[a]));
    if (chunk_shape[a] < 1)
      throw ConfigError(std::string("meta.chunk_shape.") + axis_names[a] +
                        " must be >= 1, got " + std::to_string(chunk_shape[a]));
    if (chunk_shape[a] > dims[a])
      throw ConfigError(std::string("meta.chunk_shape.") + axis_names[a] + " (" +
                        std::to_string(chunk_shape[a]) + ") exceeds dims (" +
                        std::to_string(dims[a]) + ")");
    if (!(voxel_size[a] > 0.0))
      throw ConfigError(std::string("meta.voxel_size.") + axis_names[a] + " must be positive");
  }
}

Vec4i VolumeMeta::chunk_grid() const {
  return {ceil_div(dims[0], chunk_shape[0]), ceil_div(dims[1], chunk_shape[1]),
          ceil_div(dims[2], chunk_shape[2]), ceil_div(dims[3], chunk_shape[3])};
}

ChunkedVolume::ChunkedVolume(fs::path root, VolumeMeta meta)
    : root_(std::move(root)), meta_(meta), sync_(std::make_shared<Sync>()) {}

ChunkedVolume ChunkedVolume::create(const fs::path& root, const VolumeMeta& meta) {
  meta.validate();
  if (fs::exists(root / "meta.json"))
    throw DataError("volume root already occupied: " + root.string());
  fs::create_directories(root);
  json j;
  j["dims"] = meta.dims;
  j["voxel_size"] = meta.voxel_size;
  j["chunk_shape"] = meta.chunk_shape;
  j["scalar_kind"] = to_string(meta.scalar_kind);
  j["fill_value"] = meta.fill_value;
  std::ofstream f(root / "meta.json");
  f << j.dump(2) << "\n";
  if (!f) throw DataError("failed to write " + (root / "meta.json").string());
  return ChunkedVolume(root, meta);
}

ChunkedVolume ChunkedVolume::open(const fs::path& root) {
  std::ifstream f(root / "meta.json");
  if (!f) throw DataError("no volume at " + root.string() + " (meta.json missing)");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("corrupt meta.json at " + root.string() + ": " + e.what());
  }
  VolumeMeta m;
  try {
    m.dims = j.at("dims").get<Vec4i>();
    m.voxel_size = j.at("voxel_size").get<Vec4d>();
    m.chunk_shape = j.at("chunk_shape").get<Vec4i>();
    m.scalar_kind = scalar_kind_from_string(j.at("scalar_kind").get<std::string>());
    m.fill_value = j.at("fill_value").get<float>();
  } catch (const json::exception& e) {
    throw DataError("invalid meta.json at " + root.string() + ": " + e.what());
  }
  m.validate();
  return ChunkedVolume(root, m);
}

fs::path ChunkedVolume::chunk_path(const Vec4i& ci) const {
  return root_ / ("c" + std::to_string(ci[0]) + "_" + std::to_string(ci[1]) + "_" +
                  std::to_string(ci[2]) + "_" + std::to_string(ci[3]) + ".bin");
}

std::int64_t ChunkedVolume::chunk_linear(const Vec4i& ci) const {
  Vec4i g = meta_.chunk_grid();
  return ((ci[0] * g[1] + ci[1]) * g[2] + ci[2]) * g[3] + ci[3];
}

void ChunkedVolume::check_kind(ScalarKind requested) const {
  if (requested != meta_.scalar_kind)
    throw ConfigError("scalar kind mismatch: volume holds " + to_string(meta_.scalar_kind) +
                      ", access requested " + to_string(requested));
}

std::vector<Vec4i> ChunkedVolume::chunks_for_box(const Box4& box) const {
  Box4 inner;
  for (int a = 0; a < 4; ++a) {
    inner.lo[a] = std::max<std::int64_t>(box.lo[a], 0);
    inner.hi[a] = std::min(box.hi[a], meta_.dims[a]);
  }
  std::vector<Vec4i> out;
  if (!inner.valid()) return out;
  Vec4i clo, chi;
  for (int a = 0; a < 4; ++a) {
    clo[a] = inner.lo[a] / meta_.chunk_shape[a];
    chi[a] = (inner.hi[a] - 1) / meta_.chunk_shape[a];
  }
  for (std::int64_t cx = clo[0]; cx <= chi[0]; ++cx)
    for (std::int64_t cy = clo[1]; cy <= chi[1]; ++cy)
      for (std::int64_t cz = clo[2]; cz <= chi[2]; ++cz)
        for (std::int64_t ct = clo[3]; ct <= chi[3]; ++ct)
          out.push_back({cx, cy, cz, ct});
  return out;
}

template <typename T>
std::vector<T> ChunkedVolume::load_chunk(const Vec4i& ci) const {
  const std::size_t n = static_cast<std::size_t>(prod(meta_.chunk_shape));
  std::vector<T> buf(n, static_cast<T>(meta_.fill_value));
  sync_->chunks_read.fetch_add(1);
  if (sync_->trace_on) {
    std::lock_guard<std::mutex> lk(sync_->trace_mu);
    sync_->trace.push_back(ci);
  }
  std::ifstream f(chunk_path(ci), std::ios::binary);
  if (!f) return buf;  // absent chunk: fill_value
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(n * sizeof(T)));
  if (f.gcount() != static_cast<std::streamsize>(n * sizeof(T)))
    throw DataError("short chunk file: " + chunk_path(ci).string());
  sync_->bytes_read.fetch_add(n * sizeof(T));
  return buf;
}

template <typename T>
void ChunkedVolume::store_chunk(const Vec4i& ci, const std::vector<T>& payload) {
  std::ofstream f(chunk_path(ci), std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(T)));
  if (!f) throw DataError("failed to write chunk: " + chunk_path(ci).string());
  sync_->chunks_written.fetch_add(1);
  sync_->bytes_written.fetch_add(payload.size() * sizeof(T));
}

template <typename T>
void ChunkedVolume::write_subvolume(const Box4& box, const Tensor4<T>& block) {
  check_kind(scalar_kind_of<T>());
  if (!box.valid()) throw ConfigError("write_subvolume: degenerate box " +
                                      to_string(box.lo) + ".." + to_string(box.hi));
  if (!Box4::full(meta_.dims).contains(box))
    throw DataError("write_subvolume: box " + to_string(box.lo) + ".." + to_string(box.hi) +
                    " outside dims " + to_string(meta_.dims));
  if (block.shape != box.extent())
    throw DataError("write_subvolume: block shape " + to_string(block.shape) +
                    " != box extent " + to_string(box.extent()));

  std::vector<Vec4i> chunks = chunks_for_box(box);
  std::vector<std::int64_t> ids;
  ids.reserve(chunks.size());
  for (const auto& ci : chunks) ids.push_back(chunk_linear(ci));
  {
    std::lock_guard<std::mutex> lk(sync_->write_mu);
    for (std::int64_t id : ids)
      if (sync_->chunks_in_flight.count(id))
        throw DataError("concurrent write to chunk " + std::to_string(id) + " detected");
    for (std::int64_t id : ids) sync_->chunks_in_flight.insert(id);
  }

  const Vec4i& cs = meta_.chunk_shape;
  try {
    for (const auto& ci : chunks) {
      std::vector<T> buf = load_chunk<T>(ci);
      // overlap of box with this chunk, in absolute coordinates
      Box4 ov;
      bool nonempty = true;
      for (int a = 0; a < 4; ++a) {
        ov.lo[a] = std::max(box.lo[a], ci[a] * cs[a]);
        ov.hi[a] = std::min({box.hi[a], (ci[a] + 1) * cs[a], meta_.dims[a]});
        if (ov.lo[a] >= ov.hi[a]) nonempty = false;
      }
      if (!nonempty) continue;
      const std::int64_t run = ov.hi[3] - ov.lo[3];
      for (std::int64_t x = ov.lo[0]; x < ov.hi[0]; ++x)
        for (std::int64_t y = ov.lo[1]; y < ov.hi[1]; ++y)
          for (std::int64_t z = ov.lo[2]; z < ov.hi[2]; ++z) {
            const T* src = block.data.data() +
                           block.index(x - box.lo[0], y - box.lo[1], z - box.lo[2],
                                       ov.lo[3] - box.lo[3]);
            std::int64_t dst_off =
                (((x - ci[0] * cs[0]) * cs[1] + (y - ci[1] * cs[1])) * cs[2] +
                 (z - ci[2] * cs[2])) * cs[3] + (ov.lo[3] - ci[3] * cs[3]);
            std::memcpy(buf.data() + dst_off, src, static_cast<std::size_t>(run) * sizeof(T));
          }
      store_chunk(ci, buf);
    }
  } catch (...) {
    std::lock_guard<std::mutex> lk(sync_->write_mu);
    for (std::int64_t id : ids) sync_->chunks_in_flight.erase(id);
    throw;
  }
  std::lock_guard<std::mutex> lk(sync_->write_mu);
  for (std::int64_t id : ids) sync_->chunks_in_flight.erase(id);
}

template <typename T>
void ChunkedVolume::read_interior(const Box4& box, Tensor4<T>& out,
                                  const Vec4i& out_offset) const {
  const Vec4i& cs = meta_.chunk_shape;
  for (const auto& ci : chunks_for_box(box)) {
    std::vector<T> buf = load_chunk<T>(ci);
    Box4 ov;
    for (int a = 0; a < 4; ++a) {
      ov.lo[a] = std::max(box.lo[a], ci[a] * cs[a]);
      ov.hi[a] = std::min({box.hi[a], (ci[a] + 1) * cs[a], meta_.dims[a]});
    }
    const std::int64_t run = ov.hi[3] - ov.lo[3];
    for (std::int64_t x = ov.lo[0]; x < ov.hi[0]; ++x)
      for (std::int64_t y = ov.lo[1]; y < ov.hi[1]; ++y)
        for (std::int64_t z = ov.lo[2]; z < ov.hi[2]; ++z) {
          std::int64_t src_off =
              (((x - ci[0] * cs[0]) * cs[1] + (y - ci[1] * cs[1])) * cs[2] +
               (z - ci[2] * cs[2])) * cs[3] + (ov.lo[3] - ci[3] * cs[3]);
          T* dst = out.data.data() +
                   out.index(x - box.lo[0] + out_offset[0], y - box.lo[1] + out_offset[1],
                             z - box.lo[2] + out_offset[2], ov.lo[3] - box.lo[3] + out_offset[3]);
          std::memcpy(dst, buf.data() + src_off, static_cast<std::size_t>(run) * sizeof(T));
        }
  }
}

template <typename T>
Tensor4<T> ChunkedVolume::read_subvolume(const Box4& box, PadMode pad) const {
  check_kind(scalar_kind_of<T>());
  if (!box.valid()) throw ConfigError("read_subvolume: degenerate box " +
                                      to_string(box.lo) + ".." + to_string(box.hi));
  Box4 full = Box4::full(meta_.dims);
  if (pad == PadMode::error && !full.contains(box))
    throw DataError("read_subvolume: box " + to_string(box.lo) + ".." + to_string(box.hi) +
                    " outside dims " + to_string(meta_.dims) + " (padding=error)");

  if (pad == PadMode::clamp && !full.contains(box)) {
    // Source region = clamped coordinate range; then sample with clamping.
    Box4 src;
    for (int a = 0; a < 4; ++a) {
      src.lo[a] = std::clamp<std::int64_t>(box.lo[a], 0, meta_.dims[a] - 1);
      src.hi[a] = std::clamp<std::int64_t>(box.hi[a] - 1, 0, meta_.dims[a] - 1) + 1;
    }
    Tensor4<T> interior(src.extent());
    read_interior(src, interior, {0, 0, 0, 0});
    Vec4i e = box.extent();
    Tensor4<T> out(e);
    for (std::int64_t x = 0; x < e[0]; ++x) {
      std::int64_t sx = std::clamp(box.lo[0] + x, src.lo[0], src.hi[0] - 1) - src.lo[0];
      for (std::int64_t y = 0; y < e[1]; ++y) {
        std::int64_t sy = std::clamp(box.lo[1] + y, src.lo[1], src.hi[1] - 1) - src.lo[1];
        for (std::int64_t z = 0; z < e[2]; ++z) {
          std::int64_t sz = std::clamp(box.lo[2] + z, src.lo[2], src.hi[2] - 1) - src.lo[2];
          for (std::int64_t t = 0; t < e[3]; ++t) {
            std::int64_t st = std::clamp(box.lo[3] + t, src.lo[3], src.hi[3] - 1) - src.lo[3];
            out.at(x, y, z, t) = interior.at(sx, sy, sz, st);
          }
        }
      }
    }
    return out;
  }

  Tensor4<T> out(box.extent(), static_cast<T>(meta_.fill_value));
  Box4 inner;
  for (int a = 0; a < 4; ++a) {
    inner.lo[a] = std::max<std::int64_t>(box.lo[a], 0);
    inner.hi[a] = std::min(box.hi[a], meta_.dims[a]);
  }
  if (inner.valid()) {
    Vec4i off = {inner.lo[0] - box.lo[0], inner.lo[1] - box.lo[1], inner.lo[2] - box.lo[2],
                 inner.lo[3] - box.lo[3]};
    read_interior(inner, out, off);
  }
  return out;
}

IoStats ChunkedVolume::io_stats() const {
  return {sync_->chunks_read.load(), sync_->chunks_written.load(), sync_->bytes_read.load(),
          sync_->bytes_written.load()};
}

void ChunkedVolume::reset_io_stats() const {
  sync_->chunks_read = 0;
  sync_->chunks_written = 0;
  sync_->bytes_read = 0;
  sync_->bytes_written = 0;
}

void ChunkedVolume::set_trace(bool on) const {
  std::lock_guard<std::mutex> lk(sync_->trace_mu);
  sync_->trace_on = on;
  sync_->trace.clear();
}

std::vector<Vec4i> ChunkedVolume::take_trace() const {
  std::lock_guard<std::mutex> lk(sync_->trace_mu);
  std::vector<Vec4i> out;
  out.swap(sync_->trace);
  return out;
}

template void ChunkedVolume::write_subvolume<float>(const Box4&, const Tensor4<float>&);
template void ChunkedVolume::write_subvolume<std::uint32_t>(const Box4&,
                                                            const Tensor4<std::uint32_t>&);
template Tensor4<float> ChunkedVolume::read_subvolume<float>(const Box4&, PadMode) const;
template Tensor4<std::uint32_t> ChunkedVolume::read_subvolume<std::uint32_t>(const Box4&,
                                                                             PadMode) const;

}  // namespace volcast
