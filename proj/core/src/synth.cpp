#include "volcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace volcast {

using json = nlohmann::json;

void SynthConfig::validate() const {
  for (int a = 0; a < 3; ++a)
    if (dims[static_cast<std::size_t>(a)] < 3)
      throw ConfigError("synth.dims spatial extents must be >= 3");
  if (dims[3] < 1) throw ConfigError("synth.dims.t must be >= 1");
  if (n_cells < 1) throw ConfigError("synth.n_cells must be >= 1");
  if (!(radius_lo >= 1.0 && radius_hi >= radius_lo))
    throw ConfigError("synth.radius range must satisfy 1 <= lo <= hi");
  if (!(coupling_density >= 0.0 && coupling_density <= 1.0))
    throw ConfigError("synth.coupling_density must be in [0,1]");
  if (!(noise_voxel >= 0.0) || !(noise_trace >= 0.0))
    throw ConfigError("synth.noise levels must be >= 0");
  if (texture != "uniform" && texture != "radial")
    throw ConfigError("synth.texture must be uniform|radial, got '" + texture + "'");
  if (coupling_sign != "mixed" && coupling_sign != "positive")
    throw ConfigError("synth.coupling_sign must be mixed|positive, got '" + coupling_sign + "'");
  if (!(radial_gamma >= 0.0 && radial_gamma < 1.0))
    throw ConfigError("synth.radial_gamma must be in [0,1)");
  double frac_sum = 0.0;
  for (double f : split_fracs) {
    if (!(f >= 0.0)) throw ConfigError("synth.split_fracs must be >= 0");
    frac_sum += f;
  }
  if (std::abs(frac_sum - 1.0) > 1e-9) throw ConfigError("synth.split_fracs must sum to 1");
  if (!(split_fracs[0] > 0.0)) throw ConfigError("synth.split_fracs train share must be > 0");
}

namespace {

const std::set<std::string> kSynthKeys = {
    "dims",          "n_cells",        "radius_lo",        "radius_hi",
    "coupling_density", "coupling_scale", "noise_voxel",   "noise_trace",
    "texture",       "seed",           "coupling_min_dist", "coupling_max_dist",
    "coupling_sign", "radial_gamma",   "split_fracs"};

const std::set<std::string> kVariants = {"full", "masked_bg", "rendered", "shuffled"};

}  // namespace

std::string SynthConfig::to_json_text() const {
  json j;
  j["dims"] = dims;
  j["n_cells"] = n_cells;
  j["radius_lo"] = radius_lo;
  j["radius_hi"] = radius_hi;
  j["coupling_density"] = coupling_density;
  j["coupling_scale"] = coupling_scale;
  j["noise_voxel"] = noise_voxel;
  j["noise_trace"] = noise_trace;
  j["texture"] = texture;
  j["seed"] = seed;
  j["coupling_min_dist"] = coupling_min_dist;
  j["coupling_max_dist"] = coupling_max_dist;
  j["coupling_sign"] = coupling_sign;
  j["radial_gamma"] = radial_gamma;
  j["split_fracs"] = split_fracs;
  return j.dump(2);
}

SynthConfig SynthConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kSynthKeys.count(key)) throw ConfigError("synth config: unknown key '" + key + "'");
  SynthConfig c;
  try {
    if (j.contains("dims")) c.dims = j["dims"].get<Vec4i>();
    c.n_cells = j.value("n_cells", c.n_cells);
    c.radius_lo = j.value("radius_lo", c.radius_lo);
    c.radius_hi = j.value("radius_hi", c.radius_hi);
    c.coupling_density = j.value("coupling_density", c.coupling_density);
    c.coupling_scale = j.value("coupling_scale", c.coupling_scale);
    c.noise_voxel = j.value("noise_voxel", c.noise_voxel);
    c.noise_trace = j.value("noise_trace", c.noise_trace);
    c.texture = j.value("texture", c.texture);
    c.seed = j.value("seed", c.seed);
    c.coupling_min_dist = j.value("coupling_min_dist", c.coupling_min_dist);
    c.coupling_max_dist = j.value("coupling_max_dist", c.coupling_max_dist);
    c.coupling_sign = j.value("coupling_sign", c.coupling_sign);
    c.radial_gamma = j.value("radial_gamma", c.radial_gamma);
    if (j.contains("split_fracs")) c.split_fracs = j["split_fracs"].get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: malformed field: ") + e.what());
  }
  c.validate();
  return c;
}

SynthConfig SynthConfig::from_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open synth config: " + p.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

CellLayout gen_cells(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork("mask");
  const std::int64_t X = cfg.dims[0], Y = cfg.dims[1], Z = cfg.dims[2];
  CellLayout out;
  out.mask.dims = {X, Y, Z};
  out.mask.labels.assign(static_cast<std::size_t>(X * Y * Z), 0);
  const std::int64_t max_attempts = 1000;
  for (std::int64_t k = 1; k <= cfg.n_cells; ++k) {
    bool placed = false;
    for (std::int64_t attempt = 0; attempt < max_attempts && !placed; ++attempt) {
      std::array<double, 3> r, c;
      bool fits = true;
      for (int a = 0; a < 3; ++a) {
        const double dim = static_cast<double>(cfg.dims[static_cast<std::size_t>(a)]);
        const double cap = (dim - 1.0) / 2.0;
        r[static_cast<std::size_t>(a)] =
            std::min(cfg.radius_lo + (cfg.radius_hi - cfg.radius_lo) * rng.uniform(), cap);
        if (r[static_cast<std::size_t>(a)] < 1.0) fits = false;
        const double lo = r[static_cast<std::size_t>(a)];
        const double hi = dim - 1.0 - r[static_cast<std::size_t>(a)];
        c[static_cast<std::size_t>(a)] = lo + (hi - lo) * rng.uniform();
      }
      if (!fits) continue;
      // Candidate voxel set; reject on any overlap with earlier cells.
      std::vector<std::int64_t> vox;
      const std::int64_t x0 = static_cast<std::int64_t>(std::ceil(c[0] - r[0]));
      const std::int64_t x1 = static_cast<std::int64_t>(std::floor(c[0] + r[0]));
      const std::int64_t y0 = static_cast<std::int64_t>(std::ceil(c[1] - r[1]));
      const std::int64_t y1 = static_cast<std::int64_t>(std::floor(c[1] + r[1]));
      const std::int64_t z0 = static_cast<std::int64_t>(std::ceil(c[2] - r[2]));
      const std::int64_t z1 = static_cast<std::int64_t>(std::floor(c[2] + r[2]));
      bool overlap = false;
      for (std::int64_t x = x0; x <= x1 && !overlap; ++x)
        for (std::int64_t y = y0; y <= y1 && !overlap; ++y)
          for (std::int64_t z = z0; z <= z1 && !overlap; ++z) {
            const double dx = (static_cast<double>(x) - c[0]) / r[0];
            const double dy = (static_cast<double>(y) - c[1]) / r[1];
            const double dz = (static_cast<double>(z) - c[2]) / r[2];
            if (dx * dx + dy * dy + dz * dz > 1.0) continue;
            const std::int64_t flat = out.mask.index(x, y, z);
            if (out.mask.labels[static_cast<std::size_t>(flat)] != 0) {
              overlap = true;
              break;
            }
            vox.push_back(flat);
          }
      if (overlap || vox.empty()) continue;
      for (std::int64_t flat : vox)
        out.mask.labels[static_cast<std::size_t>(flat)] = static_cast<std::uint32_t>(k);
      out.centers.push_back(c);
      out.radii.push_back(r);
      placed = true;
    }
    if (!placed)
      throw DataError("cell placement failed for cell " + std::to_string(k) + " of " +
                      std::to_string(cfg.n_cells) + "; volume too small or cells too large");
  }
  return out;
}

SegmentationMask gen_mask(const SynthConfig& cfg) { return gen_cells(cfg).mask; }

namespace {

// Largest singular value via power iteration on A^T A; an upper bound on the
// spectral radius, so rescaling by it keeps the recurrence stable.
double operator_norm(const std::vector<double>& A, std::int64_t K) {
  std::vector<double> x(static_cast<std::size_t>(K));
  for (std::int64_t i = 0; i < K; ++i)
    x[static_cast<std::size_t>(i)] = 1.0 + 0.01 * static_cast<double>(i);
  std::vector<double> ax(static_cast<std::size_t>(K)), atax(static_cast<std::size_t>(K));
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    for (std::int64_t i = 0; i < K; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < K; ++j)
        s += A[static_cast<std::size_t>(i * K + j)] * x[static_cast<std::size_t>(j)];
      ax[static_cast<std::size_t>(i)] = s;
    }
    for (std::int64_t j = 0; j < K; ++j) {
      double s = 0.0;
      for (std::int64_t i = 0; i < K; ++i)
        s += A[static_cast<std::size_t>(i * K + j)] * ax[static_cast<std::size_t>(i)];
      atax[static_cast<std::size_t>(j)] = s;
    }
    double nrm = 0.0;
    for (double v : atax) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return 0.0;
    lambda = nrm;
    for (std::int64_t j = 0; j < K; ++j) x[static_cast<std::size_t>(j)] = atax[static_cast<std::size_t>(j)] / nrm;
  }
  // lambda approximates the dominant eigenvalue of A^T A.
  return std::sqrt(lambda);
}

}  // namespace

TraceMatrix gen_traces_for(const SynthConfig& cfg,
                           const std::vector<std::array<double, 3>>& centers) {
  cfg.validate();
  const std::int64_t K = cfg.n_cells;
  if (static_cast<std::int64_t>(centers.size()) != K)
    throw DataError("gen_traces: centers count != n_cells");
  Rng rng = Rng(cfg.seed).fork("traces");

  std::vector<double> A(static_cast<std::size_t>(K * K), 0.0);
  for (std::int64_t i = 0; i < K; ++i)
    A[static_cast<std::size_t>(i * K + i)] = 0.5 + 0.4 * rng.uniform();
  for (std::int64_t i = 0; i < K; ++i)
    for (std::int64_t j = 0; j < K; ++j) {
      if (i == j) continue;
      double d = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double dd = centers[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] -
                          centers[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
        d += dd * dd;
      }
      d = std::sqrt(d);
      if (d < cfg.coupling_min_dist) continue;
      if (cfg.coupling_max_dist > 0.0 && d > cfg.coupling_max_dist) continue;
      if (rng.uniform() < cfg.coupling_density) {
        double w = cfg.coupling_scale * rng.normal();
        if (cfg.coupling_sign == "positive") w = std::abs(w);
        A[static_cast<std::size_t>(i * K + j)] = w;
      }
    }
  const double nrm = operator_norm(A, K);
  if (nrm > 0.0) {
    const double scale = 0.9 / nrm;
    for (double& v : A) v *= scale;
  }

  const std::int64_t T = cfg.dims[3];
  TraceMatrix traces = TraceMatrix::zeros(K, T);
  std::vector<double> x(static_cast<std::size_t>(K)), nx(static_cast<std::size_t>(K));
  for (std::int64_t n = 0; n < K; ++n)
    x[static_cast<std::size_t>(n)] = rng.uniform() - 0.5;
  std::vector<double> raw(static_cast<std::size_t>(K * T));
  const std::int64_t burn_in = 100;
  for (std::int64_t t = -burn_in; t < T; ++t) {
    if (t >= 0)
      for (std::int64_t n = 0; n < K; ++n)
        raw[static_cast<std::size_t>(n * T + t)] = x[static_cast<std::size_t>(n)];
    for (std::int64_t i = 0; i < K; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < K; ++j)
        s += A[static_cast<std::size_t>(i * K + j)] * x[static_cast<std::size_t>(j)];
      nx[static_cast<std::size_t>(i)] = std::tanh(s) + cfg.noise_trace * rng.normal();
    }
    x.swap(nx);
  }

  double mn = raw[0], mx = raw[0];
  for (double v : raw) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const ClampRange range{};
  if (mx - mn < 1e-12) {
    const float mid = static_cast<float>(0.5 * (range.lo + range.hi));
    std::fill(traces.values.begin(), traces.values.end(), mid);
  } else {
    const double scale = (range.hi - range.lo) / (mx - mn);
    for (std::size_t i = 0; i < raw.size(); ++i)
      traces.values[i] = static_cast<float>(range.lo + (raw[i] - mn) * scale);
  }
  return traces;
}

TraceMatrix gen_traces(const SynthConfig& cfg) {
  return gen_traces_for(cfg, gen_cells(cfg).centers);
}

namespace {

// Per-voxel radial falloff factors, one entry per voxel of each cell in
// index order: 1 - gamma * (distance to centroid / max distance in cell).
std::vector<std::vector<float>> radial_falloff(const NeuronIndex& idx, const SynthConfig& cfg) {
  std::vector<std::vector<float>> fall(idx.voxels.size());
  const std::int64_t Y = idx.dims[1], Z = idx.dims[2];
  for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
    const auto& vox = idx.voxels[n];
    if (vox.empty()) continue;
    double cx = 0.0, cy = 0.0, cz = 0.0;
    for (std::int64_t flat : vox) {
      cx += static_cast<double>(flat / (Y * Z));
      cy += static_cast<double>((flat / Z) % Y);
      cz += static_cast<double>(flat % Z);
    }
    const double inv = 1.0 / static_cast<double>(vox.size());
    cx *= inv;
    cy *= inv;
    cz *= inv;
    std::vector<double> dist(vox.size());
    double dmax = 0.0;
    for (std::size_t s = 0; s < vox.size(); ++s) {
      const std::int64_t flat = vox[s];
      const double dx = static_cast<double>(flat / (Y * Z)) - cx;
      const double dy = static_cast<double>((flat / Z) % Y) - cy;
      const double dz = static_cast<double>(flat % Z) - cz;
      dist[s] = std::sqrt(dx * dx + dy * dy + dz * dz);
      dmax = std::max(dmax, dist[s]);
    }
    fall[n].resize(vox.size());
    for (std::size_t s = 0; s < vox.size(); ++s)
      fall[n][s] = static_cast<float>(
          dmax > 0.0 ? 1.0 - cfg.radial_gamma * dist[s] / dmax : 1.0);
  }
  return fall;
}

void render_frame(const SegmentationMask& mask, const NeuronIndex& idx,
                  const std::vector<std::vector<float>>& fall, const TraceMatrix& traces,
                  const SynthConfig& cfg, std::int64_t t, Tensor4f& frame) {
  frame.zero();
  for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
    const auto& vox = idx.voxels[n];
    const float y = traces.at(static_cast<std::int64_t>(n), t);
    for (std::size_t s = 0; s < vox.size(); ++s) {
      const float v = cfg.texture == "radial" ? y * fall[n][s] : y;
      frame.data[static_cast<std::size_t>(vox[s])] = v;
    }
  }
  if (cfg.noise_voxel > 0.0) {
    Rng rng = Rng(cfg.seed).fork("frame:" + std::to_string(t));
    for (float& v : frame.data)
      v += static_cast<float>(cfg.noise_voxel * rng.normal());
  }
  (void)mask;
}

}  // namespace

void render_movie(const SegmentationMask& mask, const TraceMatrix& traces,
                  const SynthConfig& cfg, ChunkedVolume& out) {
  if (mask.dims[0] != cfg.dims[0] || mask.dims[1] != cfg.dims[1] || mask.dims[2] != cfg.dims[2])
    throw DataError("render_movie: mask dims do not match config dims");
  if (traces.timesteps != cfg.dims[3])
    throw DataError("render_movie: trace timesteps do not match config dims");
  const NeuronIndex idx = build_index(mask);
  const auto fall = cfg.texture == "radial" ? radial_falloff(idx, cfg)
                                            : std::vector<std::vector<float>>();
  Tensor4f frame({cfg.dims[0], cfg.dims[1], cfg.dims[2], 1});
  for (std::int64_t t = 0; t < cfg.dims[3]; ++t) {
    render_frame(mask, idx, fall, traces, cfg, t, frame);
    Box4 box{{0, 0, 0, t}, {cfg.dims[0], cfg.dims[1], cfg.dims[2], t + 1}};
    out.write_subvolume(box, frame);
  }
}

SplitSpec default_splits(const SynthConfig& cfg) {
  const std::int64_t T = cfg.dims[3];
  const std::int64_t t_train = static_cast<std::int64_t>(
      std::floor(cfg.split_fracs[0] * static_cast<double>(T)));
  const std::int64_t t_val = t_train + static_cast<std::int64_t>(std::floor(
                                           cfg.split_fracs[1] * static_cast<double>(T)));
  SplitSpec s;
  s.train.push_back({0, t_train});
  if (t_val > t_train) s.val.push_back({t_train, t_val});
  if (T > t_val) s.test.push_back({t_val, T});
  s.validate();
  return s;
}

void make_dataset(const SynthConfig& cfg, const std::set<std::string>& variants,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  if (variants.empty()) throw ConfigError("make_dataset: no variants requested");
  for (const auto& v : variants)
    if (!kVariants.count(v)) throw ConfigError("make_dataset: unknown variant '" + v + "'");

  const CellLayout layout = gen_cells(cfg);
  const TraceMatrix traces = gen_traces_for(cfg, layout.centers);
  const NeuronIndex idx = build_index(layout.mask);

  std::filesystem::create_directories(out_dir);
  layout.mask.save(out_dir / "mask");
  save_traces(traces, out_dir / "traces.bin");
  default_splits(cfg).save(out_dir / "splits.json");
  {
    std::ofstream f(out_dir / "synth_config.json");
    f << cfg.to_json_text() << "\n";
    if (!f) throw DataError("failed to write synth_config.json");
  }

  VolumeMeta meta;
  meta.dims = cfg.dims;
  meta.chunk_shape = {cfg.dims[0], cfg.dims[1], cfg.dims[2], 1};
  meta.scalar_kind = ScalarKind::f32le;
  meta.fill_value = 0.0f;

  auto create = [&](const std::string& name) {
    return ChunkedVolume::create(out_dir / ("movie_" + name), meta);
  };

  if (variants.count("full") || variants.count("masked_bg")) {
    const auto fall = cfg.texture == "radial" ? radial_falloff(idx, cfg)
                                              : std::vector<std::vector<float>>();
    std::unique_ptr<ChunkedVolume> full, masked;
    if (variants.count("full")) full = std::make_unique<ChunkedVolume>(create("full"));
    if (variants.count("masked_bg"))
      masked = std::make_unique<ChunkedVolume>(create("masked_bg"));
    Tensor4f frame({cfg.dims[0], cfg.dims[1], cfg.dims[2], 1});
    Tensor4f bgz({cfg.dims[0], cfg.dims[1], cfg.dims[2], 1});
    for (std::int64_t t = 0; t < cfg.dims[3]; ++t) {
      render_frame(layout.mask, idx, fall, traces, cfg, t, frame);
      Box4 box{{0, 0, 0, t}, {cfg.dims[0], cfg.dims[1], cfg.dims[2], t + 1}};
      if (full) full->write_subvolume(box, frame);
      if (masked) {
        for (std::size_t i = 0; i < frame.data.size(); ++i)
          bgz.data[i] = layout.mask.labels[i] == 0 ? 0.0f : frame.data[i];
        masked->write_subvolume(box, bgz);
      }
    }
  }
  if (variants.count("rendered")) {
    ChunkedVolume v = create("rendered");
    render_traces(idx, traces, v);
  }
  if (variants.count("shuffled")) {
    ChunkedVolume v = create("shuffled");
    const std::uint64_t pseed = Rng(cfg.seed).fork("shuffle").next_u64();
    render_traces(idx, permute_assignment(traces, pseed), v);
  }
}

}  // namespace volcast
