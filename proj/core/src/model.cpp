#include "volcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace volcast {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (context < 1) throw ConfigError("model.context must be >= 1");
  if (horizon < 1) throw ConfigError("model.horizon must be >= 1");
  if (features < 1) throw ConfigError("model.features must be >= 1");
  if (groups < 1) throw ConfigError("model.groups must be >= 1");
  if (features % groups != 0)
    throw ConfigError("model.features (" + std::to_string(features) +
                      ") must be divisible by groups (" + std::to_string(groups) + ")");
  if (!superres_stages.empty() && superres_features % groups != 0)
    throw ConfigError("model.superres_features (" + std::to_string(superres_features) +
                      ") must be divisible by groups (" + std::to_string(groups) + ")");
  if (blocks_low < 1) throw ConfigError("model.blocks_low must be >= 1");
  if (blocks_other < 1) throw ConfigError("model.blocks_other must be >= 1");
  for (const auto& s : stages)
    for (int a = 0; a < 3; ++a)
      if (s[static_cast<std::size_t>(a)] < 1)
        throw ConfigError("model.stages factors must be >= 1");
  for (const auto& s : superres_stages)
    for (int a = 0; a < 3; ++a)
      if (s[static_cast<std::size_t>(a)] < 1)
        throw ConfigError("model.superres_stages factors must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("model.dropout_rate must be in [0,1)");
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("model.embed_dim must be even and >= 2");
  if (head != "lead_time" && head != "direct" && head != "hl_gauss")
    throw ConfigError("model.head must be one of lead_time|direct|hl_gauss, got '" + head + "'");
  if (n_bins < 2) throw ConfigError("model.n_bins must be >= 2");
  for (int a = 0; a < 3; ++a)
    if (input_downsample[static_cast<std::size_t>(a)] < 1)
      throw ConfigError("model.input_downsample factors must be >= 1");
}

std::int64_t ModelConfig::out_channels() const {
  if (head == "direct") return horizon;
  if (head == "hl_gauss") return n_bins;
  return 1;
}

Vec3i ModelConfig::superres_factor() const {
  Vec3i f{1, 1, 1};
  for (const auto& s : superres_stages)
    for (int a = 0; a < 3; ++a) f[static_cast<std::size_t>(a)] *= s[static_cast<std::size_t>(a)];
  return f;
}

namespace {

const std::set<std::string> kModelKeys = {
    "context",        "horizon",    "features",   "superres_features",
    "groups",         "stages",     "blocks_low", "blocks_other",
    "superres_stages", "dropout_rate", "embed_dim", "head",
    "n_bins",         "input_downsample"};

std::vector<Vec3i> stages_from_json(const json& j) {
  std::vector<Vec3i> out;
  for (const auto& e : j) out.push_back(e.get<Vec3i>());
  return out;
}

json stages_to_json(const std::vector<Vec3i>& v) {
  json j = json::array();
  for (const auto& e : v) j.push_back(e);
  return j;
}

}  // namespace

std::string ModelConfig::to_json_text() const {
  json j;
  j["context"] = context;
  j["horizon"] = horizon;
  j["features"] = features;
  j["superres_features"] = superres_features;
  j["groups"] = groups;
  j["stages"] = stages_to_json(stages);
  j["blocks_low"] = blocks_low;
  j["blocks_other"] = blocks_other;
  j["superres_stages"] = stages_to_json(superres_stages);
  j["dropout_rate"] = dropout_rate;
  j["embed_dim"] = embed_dim;
  j["head"] = head;
  j["n_bins"] = n_bins;
  j["input_downsample"] = input_downsample;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kModelKeys.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
  ModelConfig c;
  try {
    c.context = j.value("context", c.context);
    c.horizon = j.value("horizon", c.horizon);
    c.features = j.value("features", c.features);
    c.superres_features = j.value("superres_features", c.superres_features);
    c.groups = j.value("groups", c.groups);
    if (j.contains("stages")) c.stages = stages_from_json(j["stages"]);
    c.blocks_low = j.value("blocks_low", c.blocks_low);
    c.blocks_other = j.value("blocks_other", c.blocks_other);
    if (j.contains("superres_stages")) c.superres_stages = stages_from_json(j["superres_stages"]);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.head = j.value("head", c.head);
    c.n_bins = j.value("n_bins", c.n_bins);
    if (j.contains("input_downsample")) c.input_downsample = j["input_downsample"].get<Vec3i>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: malformed field: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open model config: " + p.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

ReceptiveField receptive_field(const ModelConfig& cfg) {
  cfg.validate();
  Vec3i cum{1, 1, 1};
  for (const auto& s : cfg.stages)
    for (int a = 0; a < 3; ++a) cum[static_cast<std::size_t>(a)] *= s[static_cast<std::size_t>(a)];
  ReceptiveField out;
  const bool any_down = cum[0] > 1 || cum[1] > 1 || cum[2] > 1;
  for (int a = 0; a < 3; ++a) {
    if (any_down)
      out.rf[static_cast<std::size_t>(a)] = cum[static_cast<std::size_t>(a)] * cfg.blocks_low * 4;
    else
      out.rf[static_cast<std::size_t>(a)] = 1 + (cfg.blocks_low * 2 + 2) * 2;
  }
  return out;
}

ReceptiveField receptive_field_native(const ModelConfig& cfg) {
  ReceptiveField rf = receptive_field(cfg);
  for (int a = 0; a < 3; ++a)
    rf.rf[static_cast<std::size_t>(a)] *= cfg.input_downsample[static_cast<std::size_t>(a)];
  return rf;
}

namespace {

struct AxisOp {
  enum Kind { conv, down, up } kind;
  std::int64_t f = 1;
};

// Per-axis op sequence in forward order; the same walk serves all axes with
// their respective factors.
std::vector<AxisOp> axis_ops(const ModelConfig& cfg, int axis) {
  std::vector<AxisOp> ops;
  auto block = [&] {
    ops.push_back({AxisOp::conv, 1});
    ops.push_back({AxisOp::conv, 1});
  };
  ops.push_back({AxisOp::conv, 1});  // embed
  for (const auto& s : cfg.stages) {
    block();
    ops.push_back({AxisOp::down, s[static_cast<std::size_t>(axis)]});
  }
  for (std::int64_t j = 0; j < cfg.blocks_low; ++j) block();
  for (auto it = cfg.stages.rbegin(); it != cfg.stages.rend(); ++it) {
    ops.push_back({AxisOp::up, (*it)[static_cast<std::size_t>(axis)]});
    ops.push_back({AxisOp::conv, 1});  // up conv
    for (std::int64_t j = 0; j + 1 < cfg.blocks_other; ++j) block();
  }
  if (!cfg.superres_stages.empty()) {
    ops.push_back({AxisOp::conv, 1});  // reduce
    for (const auto& s : cfg.superres_stages) {
      ops.push_back({AxisOp::up, s[static_cast<std::size_t>(axis)]});
      ops.push_back({AxisOp::conv, 1});
      block();
    }
  }
  ops.push_back({AxisOp::conv, 1});  // output
  return ops;
}

std::int64_t fdiv(std::int64_t a, std::int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace

Vec3i stencil_radius(const ModelConfig& cfg) {
  cfg.validate();
  Vec3i out{0, 0, 0};
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<AxisOp> ops = axis_ops(cfg, axis);
    std::int64_t sup = 1, down = 1;
    for (const auto& op : ops) {
      if (op.kind == AxisOp::down) down *= op.f;
      if (op.kind == AxisOp::up) sup *= op.f;
    }
    // Decoder ups mirror encoder downs, so sup/down is the superres gain:
    // each input voxel maps to that many output voxels. Shifting the input
    // by one coarse cell (down voxels) shifts the output by down*gain, which
    // bounds the alignment classes to scan. Spans are walked boundary-free.
    const std::int64_t gain = std::max<std::int64_t>(1, sup / down);
    const std::int64_t period = gain * down;
    std::int64_t radius = 0;
    for (std::int64_t p = 0; p < period; ++p) {
      std::int64_t lo = p, hi = p;
      for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
        switch (it->kind) {
          case AxisOp::conv:
            lo -= 1;
            hi += 1;
            break;
          case AxisOp::up:
            lo = fdiv(lo, it->f);
            hi = fdiv(hi, it->f);
            break;
          case AxisOp::down:
            lo = lo * it->f;
            hi = hi * it->f + it->f - 1;
            break;
        }
      }
      const std::int64_t center = fdiv(p, gain);
      radius = std::max({radius, center - lo, hi - center});
    }
    out[static_cast<std::size_t>(axis)] = radius;
  }
  return out;
}

FlopsBreakdown flops_estimate(const ModelConfig& cfg, const Vec3i& input_extent) {
  cfg.validate();
  FlopsBreakdown fb;
  Vec3i e = input_extent;
  const std::int64_t F = cfg.features;
  const std::int64_t Fp = cfg.superres_features;
  auto vox = [&] { return e[0] * e[1] * e[2]; };
  auto check_div = [&](const Vec3i& f) {
    for (int a = 0; a < 3; ++a)
      if (e[static_cast<std::size_t>(a)] % f[static_cast<std::size_t>(a)] != 0)
        throw ConfigError("flops_estimate: extent " +
                          std::to_string(e[static_cast<std::size_t>(a)]) +
                          " not divisible by stage factor on axis " + std::to_string(a));
  };
  // Per-voxel-element costs for the non-conv ops inside one block:
  // two norms (~8), two swish (~5), film (~3), residual add (1).
  auto block_cost = [&](std::int64_t ch) {
    fb.conv += 2 * conv3d_flops(ch, ch, vox());
    fb.other += vox() * ch * (2 * 8 + 2 * 5 + (cfg.conditioned() ? 3 : 0) + 1);
  };
  fb.conv += conv3d_flops(cfg.context, F, vox());
  for (const auto& s : cfg.stages) {
    block_cost(F);
    check_div(s);
    for (int a = 0; a < 3; ++a) e[static_cast<std::size_t>(a)] /= s[static_cast<std::size_t>(a)];
    fb.other += vox() * F;
  }
  for (std::int64_t j = 0; j < cfg.blocks_low; ++j) block_cost(F);
  for (auto it = cfg.stages.rbegin(); it != cfg.stages.rend(); ++it) {
    for (int a = 0; a < 3; ++a) e[static_cast<std::size_t>(a)] *= (*it)[static_cast<std::size_t>(a)];
    fb.other += vox() * F;                      // repeat + skip add
    fb.conv += conv3d_flops(F, F, vox());       // up conv
    for (std::int64_t j = 0; j + 1 < cfg.blocks_other; ++j) block_cost(F);
  }
  if (!cfg.superres_stages.empty()) {
    fb.conv += conv3d_flops(F, Fp, vox());
    for (const auto& s : cfg.superres_stages) {
      for (int a = 0; a < 3; ++a) e[static_cast<std::size_t>(a)] *= s[static_cast<std::size_t>(a)];
      fb.other += vox() * Fp;
      fb.conv += conv3d_flops(Fp, Fp, vox());
      block_cost(Fp);
    }
    fb.conv += conv3d_flops(Fp, cfg.out_channels(), vox());
  } else {
    fb.conv += conv3d_flops(F, cfg.out_channels(), vox());
  }
  return fb;
}

// ---------------------------------------------------------------------------
// ResBlock

template <typename T>
void ResBlock<T>::build(std::vector<ParamTensor<T>>& reg, const std::string& prefix,
                        std::int64_t ch, std::int64_t g, bool cond, std::int64_t embed_dim,
                        double drop) {
  channels = ch;
  groups = g;
  conditioned = cond;
  dropout_rate = drop;
  auto add = [&](const std::string& name, std::vector<std::int64_t> shape) {
    ParamTensor<T> p;
    p.name = prefix + name;
    p.shape = std::move(shape);
    std::int64_t n = 1;
    for (std::int64_t s : p.shape) n *= s;
    p.v.assign(static_cast<std::size_t>(n), T(0));
    p.g.assign(static_cast<std::size_t>(n), T(0));
    reg.push_back(std::move(p));
    return static_cast<std::int64_t>(reg.size()) - 1;
  };
  gn1_s = add("gn1.scale", {ch});
  gn1_o = add("gn1.offset", {ch});
  c1_k = add("conv1.k", {3, 3, 3, ch, ch});
  c1_b = add("conv1.b", {ch});
  gn2_s = add("gn2.scale", {ch});
  gn2_o = add("gn2.offset", {ch});
  if (conditioned) {
    film_w = add("film.w", {embed_dim, 2 * ch});
    film_b = add("film.b", {2 * ch});
  }
  c2_k = add("conv2.k", {3, 3, 3, ch, ch});
  c2_b = add("conv2.b", {ch});
}

template <typename T>
Tensor4<T> ResBlock<T>::forward(const Tensor4<T>& x, const std::vector<T>& embed,
                                const ForwardOpts& o, std::vector<ParamTensor<T>>& reg) {
  if (x.shape[3] != channels)
    throw ConfigError("resblock: input channels " + std::to_string(x.shape[3]) + " != " +
                      std::to_string(channels));
  x_in_ = x;
  norm_used_ = o.norm;
  const bool frozen = o.norm == NormMode::frozen;
  group_norm(x, reg[gn1_s].v, reg[gn1_o].v, groups, 1e-5, frozen, a1_, &gn1c_);
  swish(a1_, s1_);
  conv3d(s1_, reg[c1_k].v, reg[c1_b].v, channels, c1out_);
  group_norm(c1out_, reg[gn2_s].v, reg[gn2_o].v, groups, 1e-5, frozen, a2_, &gn2c_);
  if (conditioned) {
    embed_ = embed;
    gb_ = film_project(embed, reg[film_w].v, reg[film_b].v);
    film(a2_, gb_, f2_);
  } else {
    f2_ = a2_;
  }
  swish(f2_, s2_);
  // Dropout needs all three: train mode, a positive rate, and an rng. The
  // trainer withholds the rng to gate dropout on context length.
  dropped_ = o.train && dropout_rate > 0.0 && o.dropout_rng != nullptr;
  if (dropped_) {
    dropmask_ = channel_dropout_mask<T>(channels, dropout_rate, *o.dropout_rng);
    channel_scale(s2_, dropmask_, d2_);
  } else {
    d2_ = s2_;
  }
  Tensor4<T> y;
  conv3d(d2_, reg[c2_k].v, reg[c2_b].v, channels, y);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  return y;
}

template <typename T>
Tensor4<T> ResBlock<T>::backward(const Tensor4<T>& dy, std::vector<ParamTensor<T>>& reg) {
  const bool frozen = norm_used_ == NormMode::frozen;
  Tensor4<T> dd2(d2_.shape);
  conv3d_backward(d2_, reg[c2_k].v, dy, dd2, reg[c2_k].g, reg[c2_b].g);
  Tensor4<T> ds2;
  if (dropped_) {
    ds2 = Tensor4<T>(s2_.shape);
    channel_scale_backward(dropmask_, dd2, ds2);
  } else {
    ds2 = std::move(dd2);
  }
  Tensor4<T> df2(f2_.shape);
  swish_backward(f2_, ds2, df2);
  Tensor4<T> da2;
  if (conditioned) {
    da2 = Tensor4<T>(a2_.shape);
    film_backward(a2_, embed_, gb_, df2, da2, reg[film_w].g, reg[film_b].g);
  } else {
    da2 = std::move(df2);
  }
  Tensor4<T> dc1(c1out_.shape);
  group_norm_backward(c1out_, reg[gn2_s].v, groups, frozen, gn2c_, da2, dc1, reg[gn2_s].g,
                      reg[gn2_o].g);
  Tensor4<T> ds1(s1_.shape);
  conv3d_backward(s1_, reg[c1_k].v, dc1, ds1, reg[c1_k].g, reg[c1_b].g);
  Tensor4<T> da1(a1_.shape);
  swish_backward(a1_, ds1, da1);
  Tensor4<T> dx(x_in_.shape);
  group_norm_backward(x_in_, reg[gn1_s].v, groups, frozen, gn1c_, da1, dx, reg[gn1_s].g,
                      reg[gn1_o].g);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
  return dx;
}

// ---------------------------------------------------------------------------
// UNet

template <typename T>
UNet<T>::UNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build();
  init_weights(seed);
}

template <typename T>
UNet<T>::UNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build();
}

template <typename T>
std::int64_t UNet<T>::add_param(const std::string& name, std::vector<std::int64_t> shape) {
  ParamTensor<T> p;
  p.name = name;
  p.shape = std::move(shape);
  std::int64_t n = 1;
  for (std::int64_t s : p.shape) n *= s;
  p.v.assign(static_cast<std::size_t>(n), T(0));
  p.g.assign(static_cast<std::size_t>(n), T(0));
  params_.push_back(std::move(p));
  return static_cast<std::int64_t>(params_.size()) - 1;
}

template <typename T>
void UNet<T>::build() {
  const std::int64_t F = cfg_.features;
  const std::int64_t Fp = cfg_.superres_features;
  const std::int64_t S = static_cast<std::int64_t>(cfg_.stages.size());
  const bool cond = cfg_.conditioned();

  embed_k_ = add_param("embed.k", {3, 3, 3, cfg_.context, F});
  embed_b_ = add_param("embed.b", {F});

  down_blocks_.resize(static_cast<std::size_t>(S));
  for (std::int64_t i = 0; i < S; ++i)
    down_blocks_[static_cast<std::size_t>(i)].build(
        params_, "down" + std::to_string(i) + ".", F, cfg_.groups, cond, cfg_.embed_dim,
        cfg_.dropout_rate);

  low_blocks_.resize(static_cast<std::size_t>(cfg_.blocks_low));
  for (std::int64_t j = 0; j < cfg_.blocks_low; ++j)
    low_blocks_[static_cast<std::size_t>(j)].build(
        params_, "low" + std::to_string(j) + ".", F, cfg_.groups, cond, cfg_.embed_dim,
        cfg_.dropout_rate);

  up_k_.assign(static_cast<std::size_t>(S), -1);
  up_b_.assign(static_cast<std::size_t>(S), -1);
  dec_blocks_.resize(static_cast<std::size_t>(S));
  for (std::int64_t i = S - 1; i >= 0; --i) {
    up_k_[static_cast<std::size_t>(i)] = add_param("up" + std::to_string(i) + ".k", {3, 3, 3, F, F});
    up_b_[static_cast<std::size_t>(i)] = add_param("up" + std::to_string(i) + ".b", {F});
    auto& blocks = dec_blocks_[static_cast<std::size_t>(i)];
    blocks.resize(static_cast<std::size_t>(cfg_.blocks_other - 1));
    for (std::int64_t j = 0; j + 1 < cfg_.blocks_other; ++j)
      blocks[static_cast<std::size_t>(j)].build(
          params_, "dec" + std::to_string(i) + "_" + std::to_string(j) + ".", F, cfg_.groups,
          cond, cfg_.embed_dim, cfg_.dropout_rate);
  }

  const std::int64_t Ssup = static_cast<std::int64_t>(cfg_.superres_stages.size());
  if (Ssup > 0) {
    reduce_k_ = add_param("reduce.k", {3, 3, 3, F, Fp});
    reduce_b_ = add_param("reduce.b", {Fp});
    sup_k_.assign(static_cast<std::size_t>(Ssup), -1);
    sup_b_.assign(static_cast<std::size_t>(Ssup), -1);
    sup_blocks_.resize(static_cast<std::size_t>(Ssup));
    for (std::int64_t s = 0; s < Ssup; ++s) {
      sup_k_[static_cast<std::size_t>(s)] =
          add_param("sup" + std::to_string(s) + ".up.k", {3, 3, 3, Fp, Fp});
      sup_b_[static_cast<std::size_t>(s)] = add_param("sup" + std::to_string(s) + ".up.b", {Fp});
      sup_blocks_[static_cast<std::size_t>(s)].build(
          params_, "sup" + std::to_string(s) + ".blk.", Fp, cfg_.groups, cond, cfg_.embed_dim,
          cfg_.dropout_rate);
    }
  }
  const std::int64_t f_last = Ssup > 0 ? Fp : F;
  out_k_ = add_param("out.k", {3, 3, 3, f_last, cfg_.out_channels()});
  out_b_ = add_param("out.b", {cfg_.out_channels()});
}

template <typename T>
void UNet<T>::init_weights(std::uint64_t seed) {
  Rng master(seed);
  for (auto& p : params_) {
    Rng r = master.fork(p.name);
    const std::string& n = p.name;
    auto ends_with = [&](const std::string& suf) {
      return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".k")) {
      const std::int64_t cin = p.shape[3];
      const double sigma = 1.0 / std::sqrt(27.0 * static_cast<double>(cin));
      for (auto& v : p.v) v = static_cast<T>(r.truncated_normal() * sigma);
    } else if (ends_with(".scale")) {
      std::fill(p.v.begin(), p.v.end(), T(1));
    } else {
      std::fill(p.v.begin(), p.v.end(), T(0));  // biases, offsets, film projections
    }
  }
}

template <typename T>
std::int64_t UNet<T>::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto& p : params_)
    std::fill(p.g.begin(), p.g.end(), T(0));
}

template <typename T>
Tensor4<T> UNet<T>::forward(const Tensor4<T>& context, std::int64_t h, const ForwardOpts& opts) {
  if (context.shape[3] != cfg_.context)
    throw DataError("forward: context has " + std::to_string(context.shape[3]) +
                    " channels, config expects " + std::to_string(cfg_.context));
  if (cfg_.conditioned() && (h < 1 || h > cfg_.horizon))
    throw ConfigError("forward: lead time " + std::to_string(h) + " outside 1.." +
                      std::to_string(cfg_.horizon));
  {
    Vec3i e{context.shape[0], context.shape[1], context.shape[2]};
    for (const auto& s : cfg_.stages)
      for (int a = 0; a < 3; ++a) {
        if (e[static_cast<std::size_t>(a)] % s[static_cast<std::size_t>(a)] != 0)
          throw DataError("forward: extent " + std::to_string(e[static_cast<std::size_t>(a)]) +
                          " on axis " + std::to_string(a) + " not divisible by stage factors");
        e[static_cast<std::size_t>(a)] /= s[static_cast<std::size_t>(a)];
      }
  }

  t_opts_ = opts;
  t_context_ = context;
  t_embed_vec_ = cfg_.conditioned() ? sinusoidal_embed<T>(h, cfg_.embed_dim) : std::vector<T>();

  const std::int64_t S = static_cast<std::int64_t>(cfg_.stages.size());
  Tensor4<T> x;
  conv3d(context, params_[embed_k_].v, params_[embed_b_].v, cfg_.features, x);
  t_embed_out_ = x;

  t_skips_.assign(static_cast<std::size_t>(S), Tensor4<T>());
  for (std::int64_t i = 0; i < S; ++i) {
    x = down_blocks_[static_cast<std::size_t>(i)].forward(x, t_embed_vec_, opts, params_);
    t_skips_[static_cast<std::size_t>(i)] = x;
    Tensor4<T> d;
    resample_down(x, cfg_.stages[static_cast<std::size_t>(i)], d);
    x = std::move(d);
  }

  for (auto& blk : low_blocks_) x = blk.forward(x, t_embed_vec_, opts, params_);

  t_up_in_.assign(static_cast<std::size_t>(S), Tensor4<T>());
  t_up_rep_.assign(static_cast<std::size_t>(S), Tensor4<T>());
  for (std::int64_t i = S - 1; i >= 0; --i) {
    t_up_in_[static_cast<std::size_t>(i)] = x;
    Tensor4<T> rep;
    repeat_up(x, cfg_.stages[static_cast<std::size_t>(i)], rep);
    t_up_rep_[static_cast<std::size_t>(i)] = rep;
    Tensor4<T> c;
    conv3d(rep, params_[up_k_[static_cast<std::size_t>(i)]].v,
           params_[up_b_[static_cast<std::size_t>(i)]].v, cfg_.features, c);
    const Tensor4<T>& skip = t_skips_[static_cast<std::size_t>(i)];
    for (std::size_t n = 0; n < c.data.size(); ++n) c.data[n] += skip.data[n];
    x = std::move(c);
    for (auto& blk : dec_blocks_[static_cast<std::size_t>(i)])
      x = blk.forward(x, t_embed_vec_, opts, params_);
  }

  const std::int64_t Ssup = static_cast<std::int64_t>(cfg_.superres_stages.size());
  if (Ssup > 0) {
    t_reduce_in_ = x;
    Tensor4<T> r;
    conv3d(x, params_[reduce_k_].v, params_[reduce_b_].v, cfg_.superres_features, r);
    x = std::move(r);
    t_sup_in_.assign(static_cast<std::size_t>(Ssup), Tensor4<T>());
    t_sup_rep_.assign(static_cast<std::size_t>(Ssup), Tensor4<T>());
    for (std::int64_t s = 0; s < Ssup; ++s) {
      t_sup_in_[static_cast<std::size_t>(s)] = x;
      Tensor4<T> rep;
      repeat_up(x, cfg_.superres_stages[static_cast<std::size_t>(s)], rep);
      t_sup_rep_[static_cast<std::size_t>(s)] = rep;
      Tensor4<T> c;
      conv3d(rep, params_[sup_k_[static_cast<std::size_t>(s)]].v,
             params_[sup_b_[static_cast<std::size_t>(s)]].v, cfg_.superres_features, c);
      x = sup_blocks_[static_cast<std::size_t>(s)].forward(c, t_embed_vec_, opts, params_);
    }
  }

  t_out_in_ = x;
  Tensor4<T> y;
  conv3d(x, params_[out_k_].v, params_[out_b_].v, cfg_.out_channels(), y);
  has_tape_ = true;
  return y;
}

template <typename T>
Tensor4<T> UNet<T>::backward(const Tensor4<T>& dout) {
  if (!has_tape_) throw ConfigError("backward called without a preceding forward");
  const std::int64_t S = static_cast<std::int64_t>(cfg_.stages.size());
  const std::int64_t Ssup = static_cast<std::int64_t>(cfg_.superres_stages.size());

  Tensor4<T> dx(t_out_in_.shape);
  conv3d_backward(t_out_in_, params_[out_k_].v, dout, dx, params_[out_k_].g, params_[out_b_].g);

  if (Ssup > 0) {
    for (std::int64_t s = Ssup - 1; s >= 0; --s) {
      dx = sup_blocks_[static_cast<std::size_t>(s)].backward(dx, params_);
      Tensor4<T> drep(t_sup_rep_[static_cast<std::size_t>(s)].shape);
      conv3d_backward(t_sup_rep_[static_cast<std::size_t>(s)],
                      params_[sup_k_[static_cast<std::size_t>(s)]].v, dx, drep,
                      params_[sup_k_[static_cast<std::size_t>(s)]].g,
                      params_[sup_b_[static_cast<std::size_t>(s)]].g);
      Tensor4<T> dprev(t_sup_in_[static_cast<std::size_t>(s)].shape);
      repeat_up_backward(cfg_.superres_stages[static_cast<std::size_t>(s)], drep, dprev);
      dx = std::move(dprev);
    }
    Tensor4<T> dred(t_reduce_in_.shape);
    conv3d_backward(t_reduce_in_, params_[reduce_k_].v, dx, dred, params_[reduce_k_].g,
                    params_[reduce_b_].g);
    dx = std::move(dred);
  }

  std::vector<Tensor4<T>> dskips(static_cast<std::size_t>(S));
  for (std::int64_t i = 0; i < S; ++i) {
    auto& blocks = dec_blocks_[static_cast<std::size_t>(i)];
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) dx = it->backward(dx, params_);
    dskips[static_cast<std::size_t>(i)] = dx;  // skip branch of the add
    Tensor4<T> drep(t_up_rep_[static_cast<std::size_t>(i)].shape);
    conv3d_backward(t_up_rep_[static_cast<std::size_t>(i)],
                    params_[up_k_[static_cast<std::size_t>(i)]].v, dx, drep,
                    params_[up_k_[static_cast<std::size_t>(i)]].g,
                    params_[up_b_[static_cast<std::size_t>(i)]].g);
    Tensor4<T> dprev(t_up_in_[static_cast<std::size_t>(i)].shape);
    repeat_up_backward(cfg_.stages[static_cast<std::size_t>(i)], drep, dprev);
    dx = std::move(dprev);
  }

  for (auto it = low_blocks_.rbegin(); it != low_blocks_.rend(); ++it)
    dx = it->backward(dx, params_);

  for (std::int64_t i = S - 1; i >= 0; --i) {
    Tensor4<T> dblock(t_skips_[static_cast<std::size_t>(i)].shape);
    resample_down_backward(cfg_.stages[static_cast<std::size_t>(i)], dx, dblock);
    const Tensor4<T>& ds = dskips[static_cast<std::size_t>(i)];
    for (std::size_t n = 0; n < dblock.data.size(); ++n) dblock.data[n] += ds.data[n];
    dx = down_blocks_[static_cast<std::size_t>(i)].backward(dblock, params_);
  }

  Tensor4<T> dinput(t_context_.shape);
  conv3d_backward(t_context_, params_[embed_k_].v, dx, dinput, params_[embed_k_].g,
                  params_[embed_b_].g);
  return dinput;
}

template struct ResBlock<float>;
template struct ResBlock<double>;
template class UNet<float>;
template class UNet<double>;

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                     std::int64_t step, const std::vector<NamedTensorView>& tensors,
                     const std::map<std::string, std::string>& extra) {
  json header;
  header["format"] = 1;
  header["step"] = step;
  header["config"] = json::parse(cfg.to_json_text());
  header["extra"] = extra;
  json manifest = json::array();
  std::int64_t offset = 0;
  for (const auto& t : tensors) {
    json m;
    m["name"] = t.name;
    m["shape"] = t.shape;
    m["offset"] = offset;
    manifest.push_back(std::move(m));
    offset += t.size * static_cast<std::int64_t>(sizeof(float));
  }
  header["tensors"] = std::move(manifest);
  const std::string htext = header.dump();

  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  f.write("VCKP", 4);
  std::uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& t : tensors)
    f.write(reinterpret_cast<const char*>(t.data),
            static_cast<std::streamsize>(t.size * sizeof(float)));
  if (!f) throw DataError("failed to write checkpoint: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw DataError("missing checkpoint: " + file.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "VCKP")
    throw DataError("not a checkpoint file: " + file.string());
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("truncated checkpoint header: " + file.string());
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  Checkpoint ck;
  ck.config = ModelConfig::from_json_text(header.at("config").dump());
  ck.step = header.at("step").get<std::int64_t>();
  if (header.contains("extra"))
    for (const auto& [k, v] : header["extra"].items()) ck.extra[k] = v.get<std::string>();
  for (const auto& m : header.at("tensors")) {
    const std::string name = m.at("name").get<std::string>();
    std::vector<std::int64_t> shape = m.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t n = 1;
    for (std::int64_t s : shape) n *= s;
    std::vector<float> values(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!f) throw DataError("truncated checkpoint payload at tensor '" + name + "'");
    ck.order.push_back(name);
    ck.tensors[name] = {std::move(shape), std::move(values)};
  }
  return ck;
}

std::vector<NamedTensorView> tensor_views(const UNet<float>& model) {
  std::vector<NamedTensorView> out;
  for (const auto& p : model.params())
    out.push_back({p.name, p.shape, p.v.data(), p.size()});
  return out;
}

void restore_params(UNet<float>& model, const Checkpoint& ckpt) {
  for (auto& p : model.params()) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end())
      throw DataError("checkpoint missing tensor '" + p.name + "'");
    if (it->second.first != p.shape)
      throw DataError("checkpoint tensor '" + p.name + "' has mismatched shape");
    std::copy(it->second.second.begin(), it->second.second.end(), p.v.begin());
  }
}

}  // namespace volcast
