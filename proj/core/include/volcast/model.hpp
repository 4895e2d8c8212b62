#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/layers.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

// Fully convolutional forecaster family: temporal context as input channels,
// symmetric down/up pathway with additive skips, optional super-resolution
// tail at reduced width, and a lead-time conditioned, direct, or
// distributional output head.
struct ModelConfig {
  std::int64_t context = 4;             // C, input channels
  std::int64_t horizon = 32;            // H
  std::int64_t features = 128;          // F
  std::int64_t superres_features = 32;  // F'
  std::int64_t groups = 16;
  std::vector<Vec3i> stages;            // per-stage downsample factors
  std::int64_t blocks_low = 4;          // total blocks at the lowest resolution
  std::int64_t blocks_other = 3;        // total blocks at every other resolution
  std::vector<Vec3i> superres_stages;   // upsample factors past input resolution
  double dropout_rate = 0.0;
  std::int64_t embed_dim = 32;
  std::string head = "lead_time";       // lead_time | direct | hl_gauss
  std::int64_t n_bins = 32;             // hl_gauss head width
  Vec3i input_downsample{1, 1, 1};      // external preprocessing factor (native RF reporting)

  void validate() const;
  bool conditioned() const { return head != "direct"; }
  std::int64_t out_channels() const;
  Vec3i superres_factor() const;

  std::string to_json_text() const;
  static ModelConfig from_json_text(const std::string& text);
  static ModelConfig from_file(const std::filesystem::path& p);
};

struct ReceptiveField {
  Vec3i rf{0, 0, 0};
};

// Published accounting: cum_downsample * blocks_low * 4 per axis for
// downsampling configs, 1 + (blocks_low*2 + 2)*2 when no stage downsamples.
ReceptiveField receptive_field(const ModelConfig& cfg);
// Same, scaled by the external input downsample factor.
ReceptiveField receptive_field_native(const ModelConfig& cfg);

// Exact per-axis stencil radius in input voxels, from an interval walk of
// the layer graph over all lattice alignments. For no-downsample configs it
// equals (receptive_field - 1) / 2; with downsampling stages it exceeds the
// published accounting and is what halo sizing must use.
Vec3i stencil_radius(const ModelConfig& cfg);

struct FlopsBreakdown {
  std::int64_t conv = 0;
  std::int64_t other = 0;
  std::int64_t total() const { return conv + other; }
};
FlopsBreakdown flops_estimate(const ModelConfig& cfg, const Vec3i& input_extent);

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<T> v;
  std::vector<T> g;

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
};

enum class NormMode { live, frozen };

struct ForwardOpts {
  bool train = false;
  NormMode norm = NormMode::live;
  Rng* dropout_rng = nullptr;  // required when train && dropout_rate > 0
};

// Pre-activation residual block: GN, swish, conv, GN, FiLM, swish,
// optional channel dropout, conv, residual add. Caches live here between
// forward and backward.
template <typename T>
struct ResBlock {
  std::int64_t channels = 0;
  std::int64_t groups = 1;
  bool conditioned = false;
  double dropout_rate = 0.0;
  // indices into the parameter registry
  std::int64_t gn1_s = -1, gn1_o = -1, c1_k = -1, c1_b = -1;
  std::int64_t gn2_s = -1, gn2_o = -1, film_w = -1, film_b = -1;
  std::int64_t c2_k = -1, c2_b = -1;

  void build(std::vector<ParamTensor<T>>& reg, const std::string& prefix, std::int64_t ch,
             std::int64_t g, bool cond, std::int64_t embed_dim, double drop);
  Tensor4<T> forward(const Tensor4<T>& x, const std::vector<T>& embed, const ForwardOpts& o,
                     std::vector<ParamTensor<T>>& reg);
  Tensor4<T> backward(const Tensor4<T>& dy, std::vector<ParamTensor<T>>& reg);

 private:
  Tensor4<T> x_in_, a1_, s1_, c1out_, a2_, f2_, s2_, d2_;
  GroupNormCache<T> gn1c_, gn2c_;
  std::vector<T> gb_, embed_, dropmask_;
  bool dropped_ = false;
  NormMode norm_used_ = NormMode::live;
};

template <typename T>
class UNet {
 public:
  UNet(const ModelConfig& cfg, std::uint64_t seed);  // seeded initialization
  explicit UNet(const ModelConfig& cfg);             // zero weights (for loading)

  const ModelConfig& config() const { return cfg_; }
  std::vector<ParamTensor<T>>& params() { return params_; }
  const std::vector<ParamTensor<T>>& params() const { return params_; }
  std::int64_t param_count() const;
  void zero_grad();

  // context: [X, Y, Z, C]; returns [X*sup, Y*sup, Z*sup, out_channels].
  // h is the lead time for conditioned heads (1..H); ignored by the direct head.
  Tensor4<T> forward(const Tensor4<T>& context, std::int64_t h, const ForwardOpts& opts = {});
  // Accumulates parameter gradients from the last forward; returns dL/dcontext.
  Tensor4<T> backward(const Tensor4<T>& dout);

 private:
  void build();
  void init_weights(std::uint64_t seed);
  std::int64_t add_param(const std::string& name, std::vector<std::int64_t> shape);

  ModelConfig cfg_;
  std::vector<ParamTensor<T>> params_;

  std::int64_t embed_k_ = -1, embed_b_ = -1;
  std::vector<ResBlock<T>> down_blocks_;
  std::vector<ResBlock<T>> low_blocks_;
  std::vector<std::vector<ResBlock<T>>> dec_blocks_;   // [stage][block]
  std::vector<std::int64_t> up_k_, up_b_;              // per stage
  std::int64_t reduce_k_ = -1, reduce_b_ = -1;
  std::vector<std::int64_t> sup_k_, sup_b_;            // per superres stage
  std::vector<ResBlock<T>> sup_blocks_;
  std::int64_t out_k_ = -1, out_b_ = -1;

  // forward tape
  Tensor4<T> t_context_, t_embed_out_;
  std::vector<Tensor4<T>> t_skips_;     // down-path block outputs
  std::vector<Tensor4<T>> t_up_in_;     // input of repeat per stage
  std::vector<Tensor4<T>> t_up_rep_;    // repeated tensor (conv input) per stage
  Tensor4<T> t_reduce_in_;
  std::vector<Tensor4<T>> t_sup_in_, t_sup_rep_;
  Tensor4<T> t_out_in_;
  std::vector<T> t_embed_vec_;
  ForwardOpts t_opts_;
  bool has_tape_ = false;
};

struct NamedTensorView {
  std::string name;
  std::vector<std::int64_t> shape;
  const float* data = nullptr;
  std::int64_t size = 0;
};

struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::string> extra;
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::vector<float>>> tensors;
};

// Binary layout: "VCKP", u64le header length, JSON header (config echo,
// step, extra, tensor manifest with byte offsets), then f32le payload.
void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                     std::int64_t step, const std::vector<NamedTensorView>& tensors,
                     const std::map<std::string, std::string>& extra = {});
Checkpoint load_checkpoint(const std::filesystem::path& file);

std::vector<NamedTensorView> tensor_views(const UNet<float>& model);
// Fills model parameters from ckpt; throws DataError on any mismatch.
void restore_params(UNet<float>& model, const Checkpoint& ckpt);

}  // namespace volcast
