#include "volcast/segtrace.hpp"

#include <algorithm>
#include <fstream>

namespace volcast {

namespace fs = std::filesystem;

void SegmentationMask::save(const fs::path& root, const Vec4d& voxel_size) const {
  VolumeMeta meta;
  meta.dims = {dims[0], dims[1], dims[2], 1};
  meta.chunk_shape = meta.dims;
  meta.scalar_kind = ScalarKind::u32le;
  meta.fill_value = 0.0f;
  meta.voxel_size = voxel_size;
  ChunkedVolume vol = ChunkedVolume::create(root, meta);
  Tensor4<std::uint32_t> block(meta.dims);
  std::copy(labels.begin(), labels.end(), block.data.begin());
  vol.write_subvolume(Box4::full(meta.dims), block);
}

SegmentationMask SegmentationMask::load(const fs::path& root) {
  ChunkedVolume vol = ChunkedVolume::open(root);
  const Vec4i& d = vol.dims();
  if (d[3] != 1) throw DataError("mask volume must have t extent 1, got " + to_string(d));
  Tensor4<std::uint32_t> block = vol.read_subvolume<std::uint32_t>(Box4::full(d));
  SegmentationMask m;
  m.dims = {d[0], d[1], d[2]};
  m.labels.assign(block.data.begin(), block.data.end());
  return m;
}

std::int64_t NeuronIndex::n_nonempty() const {
  std::int64_t n = 0;
  for (std::int64_t c : counts)
    if (c > 0) ++n;
  return n;
}

TraceMatrix TraceMatrix::zeros(std::int64_t n, std::int64_t t) {
  TraceMatrix m;
  m.neurons = n;
  m.timesteps = t;
  m.values.assign(static_cast<std::size_t>(n * t), 0.0f);
  m.empty.assign(static_cast<std::size_t>(n), 0);
  return m;
}

NeuronIndex build_index(const SegmentationMask& m) {
  std::uint32_t max_label = 0;
  for (std::uint32_t l : m.labels) max_label = std::max(max_label, l);
  NeuronIndex idx;
  idx.dims = m.dims;
  idx.voxels.resize(max_label);
  idx.counts.assign(max_label, 0);
  std::int64_t flat = 0;
  for (std::int64_t x = 0; x < m.dims[0]; ++x)
    for (std::int64_t y = 0; y < m.dims[1]; ++y)
      for (std::int64_t z = 0; z < m.dims[2]; ++z, ++flat) {
        std::uint32_t l = m.labels[static_cast<std::size_t>(flat)];
        if (l == 0) continue;
        idx.voxels[l - 1].push_back(flat);
        ++idx.counts[l - 1];
      }
  return idx;
}

namespace {

void check_spatial_dims(const Vec3i& a, const Vec4i& b) {
  if (a[0] != b[0] || a[1] != b[1] || a[2] != b[2])
    throw DataError("mask dims " + to_string(a) + " do not match volume spatial dims " +
                    to_string(b));
}

}  // namespace

TraceMatrix extract_traces(const ChunkedVolume& v, const NeuronIndex& idx, std::int64_t t0,
                           std::int64_t t1) {
  check_spatial_dims(idx.dims, v.dims());
  if (t0 < 0 || t1 > v.dims()[3] || t0 >= t1)
    throw DataError("extract_traces: bad t range [" + std::to_string(t0) + ", " +
                    std::to_string(t1) + ")");
  const std::int64_t N = idx.n_neurons();
  const std::int64_t T = t1 - t0;
  TraceMatrix out = TraceMatrix::zeros(N, T);
  for (std::int64_t n = 0; n < N; ++n) out.empty[static_cast<std::size_t>(n)] = idx.counts[n] == 0;

  // Stream over time blocks; accumulate per-neuron sums in f64.
  const std::int64_t tb = std::max<std::int64_t>(1, v.meta().chunk_shape[3]);
  std::vector<double> acc;
  for (std::int64_t b0 = t0; b0 < t1; b0 += tb) {
    std::int64_t b1 = std::min(t1, b0 + tb);
    Box4 box{{0, 0, 0, b0}, {idx.dims[0], idx.dims[1], idx.dims[2], b1}};
    Tensor4f block = v.read_subvolume<float>(box);
    const std::int64_t bt = b1 - b0;
    for (std::int64_t n = 0; n < N; ++n) {
      if (idx.counts[n] == 0) continue;
      acc.assign(static_cast<std::size_t>(bt), 0.0);
      for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)]) {
        const float* p = block.data.data() + flat * bt;
        for (std::int64_t t = 0; t < bt; ++t) acc[static_cast<std::size_t>(t)] += p[t];
      }
      const double inv = 1.0 / static_cast<double>(idx.counts[n]);
      for (std::int64_t t = 0; t < bt; ++t)
        out.at(n, b0 - t0 + t) = static_cast<float>(acc[static_cast<std::size_t>(t)] * inv);
    }
  }
  return out;
}

TraceMatrix extract_traces(const Tensor4f& movie, const NeuronIndex& idx) {
  check_spatial_dims(idx.dims, movie.shape);
  const std::int64_t N = idx.n_neurons();
  const std::int64_t T = movie.shape[3];
  TraceMatrix out = TraceMatrix::zeros(N, T);
  std::vector<double> acc(static_cast<std::size_t>(T));
  for (std::int64_t n = 0; n < N; ++n) {
    out.empty[static_cast<std::size_t>(n)] = idx.counts[n] == 0;
    if (idx.counts[n] == 0) continue;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)]) {
      const float* p = movie.data.data() + flat * T;
      for (std::int64_t t = 0; t < T; ++t) acc[static_cast<std::size_t>(t)] += p[t];
    }
    const double inv = 1.0 / static_cast<double>(idx.counts[n]);
    for (std::int64_t t = 0; t < T; ++t)
      out.at(n, t) = static_cast<float>(acc[static_cast<std::size_t>(t)] * inv);
  }
  return out;
}

template <typename T>
std::vector<double> mask_frame(const Tensor4<T>& frame, const NeuronIndex& idx, std::int64_t c) {
  check_spatial_dims(idx.dims, frame.shape);
  if (c < 0 || c >= frame.shape[3])
    throw DataError("mask_frame: channel " + std::to_string(c) + " out of range");
  const std::int64_t N = idx.n_neurons();
  const std::int64_t C = frame.shape[3];
  std::vector<double> out(static_cast<std::size_t>(N), 0.0);
  for (std::int64_t n = 0; n < N; ++n) {
    if (idx.counts[n] == 0) continue;
    double acc = 0.0;
    for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)])
      acc += static_cast<double>(frame.data[static_cast<std::size_t>(flat * C + c)]);
    out[static_cast<std::size_t>(n)] = acc / static_cast<double>(idx.counts[n]);
  }
  return out;
}

template std::vector<double> mask_frame<float>(const Tensor4<float>&, const NeuronIndex&,
                                               std::int64_t);
template std::vector<double> mask_frame<double>(const Tensor4<double>&, const NeuronIndex&,
                                                std::int64_t);

void render_traces_frame(const NeuronIndex& idx, const TraceMatrix& traces, std::int64_t t,
                         Tensor4f& frame, std::int64_t c) {
  check_spatial_dims(idx.dims, frame.shape);
  const std::int64_t C = frame.shape[3];
  for (std::int64_t n = 0; n < idx.n_neurons(); ++n) {
    const float v = traces.at(n, t);
    for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)])
      frame.data[static_cast<std::size_t>(flat * C + c)] = v;
  }
}

void render_traces(const NeuronIndex& idx, const TraceMatrix& traces, ChunkedVolume& out) {
  check_spatial_dims(idx.dims, out.dims());
  if (out.dims()[3] != traces.timesteps)
    throw DataError("render_traces: volume t extent " + std::to_string(out.dims()[3]) +
                    " != trace timesteps " + std::to_string(traces.timesteps));
  if (idx.n_neurons() != traces.neurons)
    throw DataError("render_traces: index has " + std::to_string(idx.n_neurons()) +
                    " neurons, traces " + std::to_string(traces.neurons));
  const std::int64_t tb = std::max<std::int64_t>(1, out.meta().chunk_shape[3]);
  const Vec4i d = out.dims();
  for (std::int64_t b0 = 0; b0 < d[3]; b0 += tb) {
    std::int64_t b1 = std::min(d[3], b0 + tb);
    Tensor4f block({d[0], d[1], d[2], b1 - b0}, 0.0f);
    for (std::int64_t n = 0; n < idx.n_neurons(); ++n)
      for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)]) {
        float* p = block.data.data() + flat * (b1 - b0);
        for (std::int64_t t = b0; t < b1; ++t) p[t - b0] = traces.at(n, t);
      }
    out.write_subvolume({{0, 0, 0, b0}, {d[0], d[1], d[2], b1}}, block);
  }
}

TraceMatrix permute_assignment(const TraceMatrix& traces, std::uint64_t seed) {
  if (traces.neurons < 2) throw ConfigError("permute_assignment requires at least 2 neurons");
  Rng rng(seed);
  std::vector<std::int64_t> perm = rng.permutation(traces.neurons);
  TraceMatrix out = TraceMatrix::zeros(traces.neurons, traces.timesteps);
  out.empty = traces.empty;
  for (std::int64_t n = 0; n < traces.neurons; ++n) {
    const float* src = traces.values.data() + perm[static_cast<std::size_t>(n)] * traces.timesteps;
    float* dst = out.values.data() + n * traces.timesteps;
    std::copy(src, src + traces.timesteps, dst);
  }
  return out;
}

void zero_unsegmented(const ChunkedVolume& v, const SegmentationMask& m, ChunkedVolume& out) {
  check_spatial_dims(m.dims, v.dims());
  if (v.dims() != out.dims())
    throw DataError("zero_unsegmented: dims mismatch " + to_string(v.dims()) + " vs " +
                    to_string(out.dims()));
  const Vec4i d = v.dims();
  const std::int64_t tb = std::max<std::int64_t>(1, v.meta().chunk_shape[3]);
  for (std::int64_t b0 = 0; b0 < d[3]; b0 += tb) {
    std::int64_t b1 = std::min(d[3], b0 + tb);
    Box4 box{{0, 0, 0, b0}, {d[0], d[1], d[2], b1}};
    Tensor4f block = v.read_subvolume<float>(box);
    const std::int64_t bt = b1 - b0;
    std::int64_t flat = 0;
    for (std::int64_t x = 0; x < d[0]; ++x)
      for (std::int64_t y = 0; y < d[1]; ++y)
        for (std::int64_t z = 0; z < d[2]; ++z, ++flat)
          if (m.labels[static_cast<std::size_t>(flat)] == 0) {
            float* p = block.data.data() + flat * bt;
            std::fill(p, p + bt, 0.0f);
          }
    out.write_subvolume(box, block);
  }
}

void save_traces(const TraceMatrix& t, const fs::path& file) {
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  std::uint64_t n = static_cast<std::uint64_t>(t.neurons);
  std::uint64_t ts = static_cast<std::uint64_t>(t.timesteps);
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(&ts), 8);
  f.write(reinterpret_cast<const char*>(t.values.data()),
          static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!f) throw DataError("failed to write traces: " + file.string());
}

TraceMatrix load_traces(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw DataError("missing traces file: " + file.string());
  std::uint64_t n = 0, ts = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  f.read(reinterpret_cast<char*>(&ts), 8);
  TraceMatrix out = TraceMatrix::zeros(static_cast<std::int64_t>(n), static_cast<std::int64_t>(ts));
  f.read(reinterpret_cast<char*>(out.values.data()),
         static_cast<std::streamsize>(out.values.size() * sizeof(float)));
  if (!f) throw DataError("truncated traces file: " + file.string());
  return out;
}

void write_traces_csv(const TraceMatrix& t, const fs::path& file) {
  std::ofstream f(file, std::ios::trunc);
  f << "neuron";
  for (std::int64_t s = 0; s < t.timesteps; ++s) f << ",t" << s;
  f << "\n";
  for (std::int64_t n = 0; n < t.neurons; ++n) {
    f << (n + 1);
    for (std::int64_t s = 0; s < t.timesteps; ++s) f << "," << t.at(n, s);
    f << "\n";
  }
  if (!f) throw DataError("failed to write csv: " + file.string());
}

}  // namespace volcast
