#pragma once
// Example sampling, AdamW optimization with a cosine schedule, validation,
// checkpointing, and the pretrain/finetune flow. Single optimization stream,
// batch size 1; determinism comes from forking the master RNG per step.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volcast/model.hpp"
#include "volcast/objectives.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

using TimeInterval = std::array<std::int64_t, 2>;  // [lo, hi)

// Named frame ranges per condition. Sampling never crosses an interval
// boundary, so context and targets always sit inside one interval.
struct SplitSpec {
  std::vector<TimeInterval> train;
  std::vector<TimeInterval> val;
  std::vector<TimeInterval> test;
  std::vector<TimeInterval> holdout;

  void validate() const;  // intervals well-formed, disjoint per condition; train nonempty
  const std::vector<TimeInterval>& condition(const std::string& name) const;

  std::string to_json_text() const;
  static SplitSpec from_json_text(const std::string& text);
  static SplitSpec from_file(const std::filesystem::path& p);
  void save(const std::filesystem::path& p) const;
};

struct TrainConfig {
  std::int64_t steps = 250000;
  double lr_init = 1e-4;
  double lr_final = 1e-7;
  double weight_decay = 1e-5;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 1;
  std::string loss_kind = "trace_mae";  // trace_mae | voxel_mae | direct_mae | hl_gauss
  std::int64_t val_every = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Validation grid size: up to this many evenly spaced start points and
  // lead times, fixed by config and data alone so runs are repeatable.
  std::int64_t val_max_starts = 8;
  std::int64_t val_max_horizons = 4;
  // Channel dropout engages only for contexts at least this long.
  std::int64_t dropout_context_threshold = 8;

  void validate() const;
  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& p);
};

// Draw a training example: t is the last context frame, h the lead time.
// t is uniform over all endpoints whose context [t-C+1, t] and targets
// (t, t+H] fit inside a single train interval; h is uniform over 1..H.
// t is drawn before h. Throws DataError when no endpoint is valid.
std::pair<std::int64_t, std::int64_t> sample_example(const SplitSpec& splits, std::int64_t C,
                                                     std::int64_t H, Rng& rng);

// lr(s) = lr_final + 0.5*(lr_init - lr_final)*(1 + cos(pi*s/steps)).
double cosine_lr(std::int64_t step, const TrainConfig& cfg);

struct OptimState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;

  static OptimState for_model(const UNet<float>& model);
};

// One decoupled-weight-decay Adam update on a flat parameter vector; t is the
// 1-based step count used for bias correction.
void adamw_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                  std::vector<float>& v, std::int64_t t, double lr, double weight_decay,
                  double beta1, double beta2, double eps);

// Applies adamw_update to every model parameter using its accumulated
// gradient; increments opt.step once.
void adamw_step(UNet<float>& model, OptimState& opt, double lr, double weight_decay,
                double beta1, double beta2, double eps);

struct TrainResult {
  double best_val = 0.0;
  std::int64_t best_step = -1;
  double final_train_loss = 0.0;
  std::filesystem::path best_ckpt;
  std::filesystem::path final_ckpt;
};

// Full training loop over an in-memory movie [X,Y,Z,T]. Writes under run_dir:
// model_config.json, train_config.json, splits.json, log.csv
// (step,lr,train_loss,val_mae), best.ckpt (weights only) and final.ckpt
// (weights plus optimizer moments as opt.m.* / opt.v.* tensors).
// resume_from restores weights, moments, and the step counter from a
// final-style checkpoint and appends to the existing log.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Tensor4f& movie, const SegmentationMask& mask, const SplitSpec& splits,
                  const std::filesystem::path& run_dir,
                  const std::filesystem::path& resume_from = {});

// Loads the pretrained checkpoint (its embedded ModelConfig is the model),
// reinitializes optimizer state, and trains with the given TrainConfig.
TrainResult finetune(const std::filesystem::path& pretrained, const TrainConfig& train_cfg,
                     const Tensor4f& movie, const SegmentationMask& mask,
                     const SplitSpec& splits, const std::filesystem::path& run_dir);

// Deterministic validation trace-MAE on the val split, averaged over the
// fixed (t, h) grid described in TrainConfig.
double validate_trace_mae(UNet<float>& model, const ModelConfig& model_cfg,
                          const TrainConfig& train_cfg, const Tensor4f& movie,
                          const NeuronIndex& idx, const SplitSpec& splits);

}  // namespace volcast
