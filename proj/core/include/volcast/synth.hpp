#pragma once
// Synthetic calcium-movie generator with known ground truth: non-overlapping
// ellipsoidal cells, a stable tanh-linear recurrence for cross-cell dynamics,
// and movie variants that keep or destroy the signal/segmentation pairing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "volcast/segtrace.hpp"
#include "volcast/tensor.hpp"
#include "volcast/trainer.hpp"
#include "volcast/volstore.hpp"

namespace volcast {

struct SynthConfig {
  Vec4i dims{48, 32, 8, 1500};
  std::int64_t n_cells = 30;
  double radius_lo = 2.0;
  double radius_hi = 4.0;
  double coupling_density = 0.2;   // probability an eligible ordered pair couples
  double coupling_scale = 1.0;     // raw off-diagonal magnitude before rescaling
  double noise_voxel = 0.02;       // N(0, sigma^2) added to every rendered voxel
  double noise_trace = 0.05;       // innovation noise in the recurrence
  std::string texture = "uniform";  // uniform | radial
  std::uint64_t seed = 1;
  // Optional center-distance band (voxels) restricting which cell pairs may
  // couple; max <= 0 means unbounded above.
  double coupling_min_dist = 0.0;
  double coupling_max_dist = 0.0;
  // mixed: signed Gaussian couplings. positive: same magnitudes, all
  // excitatory, so nearby activity aggregates under one shared local law.
  std::string coupling_sign = "mixed";
  double radial_gamma = 0.5;  // falloff depth for the radial texture
  std::array<double, 3> split_fracs{0.70, 0.15, 0.15};

  void validate() const;
  std::string to_json_text() const;
  static SynthConfig from_json_text(const std::string& text);
  static SynthConfig from_file(const std::filesystem::path& p);
};

// Cell placement with the continuous geometry kept alongside the voxel mask.
struct CellLayout {
  SegmentationMask mask;
  std::vector<std::array<double, 3>> centers;
  std::vector<std::array<double, 3>> radii;
};

// Rejection-samples n_cells non-overlapping axis-aligned ellipsoids fully
// inside the volume. Deterministic per seed; DataError after bounded retries.
CellLayout gen_cells(const SynthConfig& cfg);

SegmentationMask gen_mask(const SynthConfig& cfg);

// x(t+1) = tanh(A x(t)) + eps. A has positive self-decay on the diagonal and
// sparse random couplings on eligible pairs (signed or all-positive per
// coupling_sign), rescaled so its operator norm is 0.9 (spectral radius
// <= 0.9, stable). The recorded trajectory is affinely mapped into the
// clamp range [-0.25, 1.5].
TraceMatrix gen_traces_for(const SynthConfig& cfg,
                           const std::vector<std::array<double, 3>>& centers);
TraceMatrix gen_traces(const SynthConfig& cfg);

// Writes dims.t frames into out. uniform: cell voxels take the trace value;
// radial: scaled by 1 - gamma * (distance to the cell centroid / the cell's
// max distance). Gaussian voxel noise (if any) lands on every voxel;
// background has no signal. Frames use independent RNG streams.
void render_movie(const SegmentationMask& mask, const TraceMatrix& traces,
                  const SynthConfig& cfg, ChunkedVolume& out);

// Dataset directory: movie_<variant>/ volumes, mask/, traces.bin,
// splits.json, synth_config.json. Variants:
//   full       rendered per cfg texture and noise
//   masked_bg  full with background voxels zeroed (same noise realization)
//   rendered   exact noiseless uniform rendering of the true traces
//   shuffled   exact rendering of traces permuted across cells
void make_dataset(const SynthConfig& cfg, const std::set<std::string>& variants,
                  const std::filesystem::path& out_dir);

SplitSpec default_splits(const SynthConfig& cfg);

}  // namespace volcast
