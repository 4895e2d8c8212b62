#include "volcast/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

namespace volcast {

using json = nlohmann::json;

namespace {

void check_intervals(const std::vector<TimeInterval>& iv, const std::string& name) {
  std::vector<TimeInterval> sorted = iv;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i][0] < 0 || sorted[i][0] >= sorted[i][1])
      throw ConfigError("splits." + name + ": interval [" + std::to_string(sorted[i][0]) + "," +
                        std::to_string(sorted[i][1]) + ") is not well-formed");
    if (i > 0 && sorted[i][0] < sorted[i - 1][1])
      throw ConfigError("splits." + name + ": intervals overlap");
  }
}

json intervals_to_json(const std::vector<TimeInterval>& iv) {
  json j = json::array();
  for (const auto& e : iv) j.push_back(e);
  return j;
}

std::vector<TimeInterval> intervals_from_json(const json& j) {
  std::vector<TimeInterval> out;
  for (const auto& e : j) out.push_back(e.get<TimeInterval>());
  return out;
}

}  // namespace

void SplitSpec::validate() const {
  if (train.empty()) throw ConfigError("splits.train must be nonempty");
  check_intervals(train, "train");
  check_intervals(val, "val");
  check_intervals(test, "test");
  check_intervals(holdout, "holdout");
}

const std::vector<TimeInterval>& SplitSpec::condition(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  if (name == "holdout") return holdout;
  throw ConfigError("splits: unknown condition '" + name + "'");
}

std::string SplitSpec::to_json_text() const {
  json j;
  j["train"] = intervals_to_json(train);
  j["val"] = intervals_to_json(val);
  j["test"] = intervals_to_json(test);
  j["holdout"] = intervals_to_json(holdout);
  return j.dump(2);
}

SplitSpec SplitSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("splits file is not valid JSON: ") + e.what());
  }
  SplitSpec s;
  try {
    if (j.contains("train")) s.train = intervals_from_json(j["train"]);
    if (j.contains("val")) s.val = intervals_from_json(j["val"]);
    if (j.contains("test")) s.test = intervals_from_json(j["test"]);
    if (j.contains("holdout")) s.holdout = intervals_from_json(j["holdout"]);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("splits: malformed field: ") + e.what());
  }
  s.validate();
  return s;
}

SplitSpec SplitSpec::from_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("cannot open splits file: " + p.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

void SplitSpec::save(const std::filesystem::path& p) const {
  std::ofstream f(p);
  f << to_json_text() << "\n";
  if (!f) throw DataError("failed to write splits file: " + p.string());
}

namespace {

const std::set<std::string> kTrainKeys = {
    "steps",       "lr_init",   "lr_final", "weight_decay",
    "batch_size",  "seed",      "loss_kind", "val_every",
    "beta1",       "beta2",     "eps",      "val_max_starts",
    "val_max_horizons", "dropout_context_threshold"};

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (!(lr_init > 0.0)) throw ConfigError("train.lr_init must be > 0");
  if (!(lr_final > 0.0)) throw ConfigError("train.lr_final must be > 0");
  if (lr_final > lr_init) throw ConfigError("train.lr_final must be <= lr_init");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size != 1) throw ConfigError("train.batch_size must be 1");
  if (loss_kind != "trace_mae" && loss_kind != "voxel_mae" && loss_kind != "direct_mae" &&
      loss_kind != "hl_gauss")
    throw ConfigError("train.loss_kind must be trace_mae|voxel_mae|direct_mae|hl_gauss");
  if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must be in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
  if (val_max_starts < 1 || val_max_horizons < 1)
    throw ConfigError("train.val grid sizes must be >= 1");
  if (dropout_context_threshold < 0)
    throw ConfigError("train.dropout_context_threshold must be >= 0");
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["steps"] = steps;
  j["lr_init"] = lr_init;
  j["lr_final"] = lr_final;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["loss_kind"] = loss_kind;
  j["val_every"] = val_every;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["val_max_starts"] = val_max_starts;
  j["val_max_horizons"] = val_max_horizons;
  j["dropout_context_threshold"] = dropout_context_threshold;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kTrainKeys.count(key)) throw ConfigError("train config: unknown key '" + key + "'");
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.lr_init = j.value("lr_init", c.lr_init);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.loss_kind = j.value("loss_kind", c.loss_kind);
    c.val_every = j.value("val_every", c.val_every);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.val_max_starts = j.value("val_max_starts", c.val_max_starts);
    c.val_max_horizons = j.value("val_max_horizons", c.val_max_horizons);
    c.dropout_context_threshold =
        j.value("dropout_context_threshold", c.dropout_context_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: malformed field: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open train config: " + p.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

namespace {

// Valid context endpoints t per interval: context [t-C+1, t] and targets
// (t, t+H] inside [lo, hi).
std::vector<std::int64_t> endpoint_counts(const std::vector<TimeInterval>& intervals,
                                          std::int64_t C, std::int64_t H) {
  std::vector<std::int64_t> counts;
  for (const auto& iv : intervals)
    counts.push_back(std::max<std::int64_t>(0, iv[1] - iv[0] - C - H + 1));
  return counts;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> sample_example(const SplitSpec& splits, std::int64_t C,
                                                     std::int64_t H, Rng& rng) {
  if (C < 1 || H < 1) throw ConfigError("sample_example: C and H must be >= 1");
  const auto counts = endpoint_counts(splits.train, C, H);
  std::int64_t total = 0;
  for (std::int64_t c : counts) total += c;
  if (total == 0)
    throw DataError("sample_example: no train interval admits context " + std::to_string(C) +
                    " plus horizon " + std::to_string(H));
  std::int64_t k = rng.uniform_int(0, total);
  std::int64_t t = -1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (k < counts[i]) {
      t = splits.train[i][0] + C - 1 + k;
      break;
    }
    k -= counts[i];
  }
  const std::int64_t h = rng.uniform_int(1, H + 1);
  return {t, h};
}

double cosine_lr(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.steps == 0) return cfg.lr_final;
  const double s = static_cast<double>(step) / static_cast<double>(cfg.steps);
  return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(M_PI * s));
}

OptimState OptimState::for_model(const UNet<float>& model) {
  OptimState o;
  for (const auto& p : model.params()) {
    o.m.emplace_back(p.v.size(), 0.0f);
    o.v.emplace_back(p.v.size(), 0.0f);
  }
  return o;
}

void adamw_update(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
                  std::vector<float>& v, std::int64_t t, double lr, double weight_decay,
                  double beta1, double beta2, double eps) {
  if (w.size() != g.size() || w.size() != m.size() || w.size() != v.size())
    throw DataError("adamw_update: shape mismatch");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
    const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    double wi = w[i];
    wi -= lr * weight_decay * wi;             // decoupled decay
    wi -= lr * mhat / (std::sqrt(vhat) + eps);
    w[i] = static_cast<float>(wi);
  }
}

void adamw_step(UNet<float>& model, OptimState& opt, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
  auto& params = model.params();
  if (opt.m.size() != params.size())
    throw DataError("adamw_step: optimizer state does not match model");
  ++opt.step;
  for (std::size_t i = 0; i < params.size(); ++i)
    adamw_update(params[i].v, params[i].g, opt.m[i], opt.v[i], opt.step, lr, weight_decay,
                 beta1, beta2, eps);
}

namespace {

// Evenly spaced selection of k values from 0..n-1 (all of them when n <= k).
std::vector<std::int64_t> spread(std::int64_t n, std::int64_t k) {
  std::vector<std::int64_t> out;
  if (n <= 0) return out;
  if (n <= k) {
    for (std::int64_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t v = k == 1 ? 0 : (i * (n - 1)) / (k - 1);
    if (out.empty() || out.back() != v) out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> all_endpoints(const std::vector<TimeInterval>& intervals,
                                        std::int64_t C, std::int64_t H) {
  std::vector<std::int64_t> out;
  for (const auto& iv : intervals)
    for (std::int64_t t = iv[0] + C - 1; t + H < iv[1]; ++t) out.push_back(t);
  return out;
}

struct LossCtx {
  const ModelConfig* mc;
  const TrainConfig* tc;
  const Tensor4f* movie;
  const NeuronIndex* idx;
  BinSpec bins;
};

// Forward + loss + gradient w.r.t. the model output for one example.
LossGrad step_loss(UNet<float>& model, const LossCtx& ctx, std::int64_t t, std::int64_t h,
                   const ForwardOpts& opts, Tensor4f* pred_out = nullptr) {
  const ModelConfig& mc = *ctx.mc;
  const Tensor4f context = slice_channels(*ctx.movie, t - mc.context + 1, t + 1);
  Tensor4f pred = model.forward(context, h, opts);
  LossGrad lg;
  if (ctx.tc->loss_kind == "trace_mae") {
    const Tensor4f target = slice_channels(*ctx.movie, t + h, t + h + 1);
    lg = trace_mae(pred, target, *ctx.idx);
  } else if (ctx.tc->loss_kind == "voxel_mae") {
    const Tensor4f target = slice_channels(*ctx.movie, t + h, t + h + 1);
    lg = voxel_mae(pred, target);
  } else if (ctx.tc->loss_kind == "direct_mae") {
    const Tensor4f targets = slice_channels(*ctx.movie, t + 1, t + 1 + mc.horizon);
    lg = direct_mae(pred, targets, *ctx.idx);
  } else {  // hl_gauss
    const Tensor4f target = slice_channels(*ctx.movie, t + h, t + h + 1);
    lg = hl_gauss_trace_loss(pred, target, *ctx.idx, ctx.bins);
  }
  if (pred_out != nullptr) *pred_out = std::move(pred);
  return lg;
}

void check_loss_head(const ModelConfig& mc, const std::string& loss_kind) {
  if (loss_kind == "direct_mae" && mc.head != "direct")
    throw ConfigError("loss_kind direct_mae requires head=direct");
  if (loss_kind == "hl_gauss" && mc.head != "hl_gauss")
    throw ConfigError("loss_kind hl_gauss requires head=hl_gauss");
  if ((loss_kind == "trace_mae" || loss_kind == "voxel_mae") && mc.head != "lead_time")
    throw ConfigError("loss_kind " + loss_kind + " requires head=lead_time");
}

}  // namespace

double validate_trace_mae(UNet<float>& model, const ModelConfig& model_cfg,
                          const TrainConfig& train_cfg, const Tensor4f& movie,
                          const NeuronIndex& idx, const SplitSpec& splits) {
  const std::int64_t C = model_cfg.context, H = model_cfg.horizon;
  const auto endpoints = all_endpoints(splits.val, C, H);
  if (endpoints.empty())
    throw DataError("validation: no val interval admits context plus horizon");
  const auto t_sel = spread(static_cast<std::int64_t>(endpoints.size()),
                            train_cfg.val_max_starts);
  std::vector<std::int64_t> h_sel;
  if (model_cfg.head == "direct") {
    h_sel.push_back(1);  // one forward covers every lead time
  } else {
    for (std::int64_t i : spread(H, train_cfg.val_max_horizons)) h_sel.push_back(i + 1);
  }
  const BinSpec bins = BinSpec::make(model_cfg.n_bins, ClampRange{});
  ForwardOpts opts;
  opts.train = false;
  opts.norm = NormMode::live;

  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t ti : t_sel) {
    const std::int64_t t = endpoints[static_cast<std::size_t>(ti)];
    const Tensor4f context = slice_channels(movie, t - C + 1, t + 1);
    for (std::int64_t h : h_sel) {
      Tensor4f pred = model.forward(context, h, opts);
      if (model_cfg.head == "direct") {
        const Tensor4f targets = slice_channels(movie, t + 1, t + 1 + H);
        acc += direct_mae(pred, targets, idx).loss;
      } else if (model_cfg.head == "hl_gauss") {
        const Tensor4f target = slice_channels(movie, t + h, t + h + 1);
        const std::vector<double> tmean = mask_frame(target, idx);
        const std::int64_t B = model_cfg.n_bins;
        std::vector<double> logits(static_cast<std::size_t>(B));
        double per = 0.0;
        std::int64_t n_used = 0;
        for (std::size_t n = 0; n < idx.voxels.size(); ++n) {
          if (idx.voxels[n].empty()) continue;
          std::fill(logits.begin(), logits.end(), 0.0);
          for (std::int64_t flat : idx.voxels[n])
            for (std::int64_t b = 0; b < B; ++b)
              logits[static_cast<std::size_t>(b)] +=
                  pred.data[static_cast<std::size_t>(flat * B + b)];
          for (double& v : logits) v /= static_cast<double>(idx.voxels[n].size());
          per += std::abs(hl_gauss_decode(logits, bins) - tmean[n]);
          ++n_used;
        }
        acc += per / static_cast<double>(n_used);
      } else {
        const Tensor4f target = slice_channels(movie, t + h, t + h + 1);
        acc += trace_mae(pred, target, idx).loss;
      }
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

namespace {

void save_model_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                           std::int64_t step, UNet<float>& model, const OptimState* opt,
                           const std::map<std::string, std::string>& extra) {
  std::vector<NamedTensorView> views = tensor_views(model);
  if (opt != nullptr) {
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i)
      views.push_back({"opt.m." + params[i].name, params[i].shape, opt->m[i].data(),
                       static_cast<std::int64_t>(opt->m[i].size())});
    for (std::size_t i = 0; i < params.size(); ++i)
      views.push_back({"opt.v." + params[i].name, params[i].shape, opt->v[i].data(),
                       static_cast<std::int64_t>(opt->v[i].size())});
  }
  save_checkpoint(file, cfg, step, views, extra);
}

TrainResult run_training(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         UNet<float>& model, OptimState& opt, std::int64_t start_step,
                         double best_val_in, std::int64_t best_step_in, const Tensor4f& movie,
                         const SegmentationMask& mask, const SplitSpec& splits,
                         const std::filesystem::path& run_dir, bool append_log) {
  splits.validate();
  check_loss_head(model_cfg, train_cfg.loss_kind);
  if (!model_cfg.superres_stages.empty())
    throw ConfigError("training requires matched input/output resolution; "
                      "superres stages are inference-only");
  for (int a = 0; a < 3; ++a)
    if (model_cfg.input_downsample[static_cast<std::size_t>(a)] != 1)
      throw ConfigError("training expects pre-downsampled input; set input_downsample to 1");
  if (movie.shape[0] != mask.dims[0] || movie.shape[1] != mask.dims[1] ||
      movie.shape[2] != mask.dims[2])
    throw DataError("train: movie and mask dims disagree");
  const std::int64_t T = movie.shape[3];
  for (const auto& iv : splits.train)
    if (iv[1] > T) throw DataError("train: split interval exceeds movie length");

  const NeuronIndex idx = build_index(mask);
  if (idx.n_nonempty() == 0) throw DataError("train: segmentation has no neurons");

  std::filesystem::create_directories(run_dir);
  {
    std::ofstream f(run_dir / "model_config.json");
    f << model_cfg.to_json_text() << "\n";
    std::ofstream g(run_dir / "train_config.json");
    g << train_cfg.to_json_text() << "\n";
  }
  splits.save(run_dir / "splits.json");

  std::ofstream log(run_dir / "log.csv", append_log ? std::ios::app : std::ios::trunc);
  if (!append_log) log << "step,lr,train_loss,val_mae\n";

  LossCtx ctx{&model_cfg, &train_cfg, &movie, &idx,
              BinSpec::make(model_cfg.n_bins, ClampRange{})};

  TrainResult res;
  res.best_val = best_val_in;
  res.best_step = best_step_in;
  res.best_ckpt = run_dir / "best.ckpt";
  res.final_ckpt = run_dir / "final.ckpt";
  const bool use_dropout = model_cfg.context >= train_cfg.dropout_context_threshold &&
                           model_cfg.dropout_rate > 0.0;

  auto run_validation = [&](std::int64_t step_now) {
    const double val = validate_trace_mae(model, model_cfg, train_cfg, movie, idx, splits);
    if (res.best_step < 0 || val < res.best_val) {
      res.best_val = val;
      res.best_step = step_now;
      std::map<std::string, std::string> extra;
      extra["best_val"] = fmt_double(val);
      extra["best_step"] = std::to_string(step_now);
      save_model_checkpoint(res.best_ckpt, model_cfg, step_now, model, nullptr, extra);
    }
    return val;
  };

  double train_loss = 0.0;
  for (std::int64_t s = start_step; s < train_cfg.steps; ++s) {
    const double lr = cosine_lr(s, train_cfg);
    Rng rng = Rng(train_cfg.seed).fork("step:" + std::to_string(s));
    const auto [t, h] = sample_example(splits, model_cfg.context, model_cfg.horizon, rng);
    ForwardOpts opts;
    opts.train = true;
    opts.norm = NormMode::live;
    opts.dropout_rng = use_dropout ? &rng : nullptr;
    const LossGrad lg = step_loss(model, ctx, t, h, opts);
    if (!std::isfinite(lg.loss))
      throw NumericError("training diverged at step " + std::to_string(s) +
                         ": loss = " + fmt_double(lg.loss));
    model.zero_grad();
    model.backward(lg.grad);
    adamw_step(model, opt, lr, train_cfg.weight_decay, train_cfg.beta1, train_cfg.beta2,
               train_cfg.eps);
    train_loss = lg.loss;

    std::string val_field;
    if ((s + 1) % train_cfg.val_every == 0 || s + 1 == train_cfg.steps) {
      const double val = run_validation(s + 1);
      val_field = fmt_double(val);
    }
    log << s << "," << fmt_double(lr) << "," << fmt_double(lg.loss) << "," << val_field << "\n";
  }
  if (train_cfg.steps == start_step && res.best_step < 0) {
    // Zero-step run: still produce a best checkpoint so downstream tooling
    // has weights to read.
    if (!all_endpoints(splits.val, model_cfg.context, model_cfg.horizon).empty())
      run_validation(start_step);
  }
  log.flush();

  res.final_train_loss = train_loss;
  std::map<std::string, std::string> extra;
  extra["best_val"] = fmt_double(res.best_val);
  extra["best_step"] = std::to_string(res.best_step);
  extra["loss_kind"] = train_cfg.loss_kind;
  save_model_checkpoint(res.final_ckpt, model_cfg, train_cfg.steps, model, &opt, extra);
  if (res.best_step < 0) {
    // No validation possible; fall back to the final weights.
    save_model_checkpoint(res.best_ckpt, model_cfg, train_cfg.steps, model, nullptr, extra);
  }
  return res;
}

void restore_moments(const Checkpoint& ck, UNet<float>& model, OptimState& opt) {
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto mi = ck.tensors.find("opt.m." + params[i].name);
    const auto vi = ck.tensors.find("opt.v." + params[i].name);
    if (mi == ck.tensors.end() || vi == ck.tensors.end())
      throw DataError("checkpoint lacks optimizer state for '" + params[i].name + "'");
    if (mi->second.second.size() != opt.m[i].size() ||
        vi->second.second.size() != opt.v[i].size())
      throw DataError("optimizer state shape mismatch for '" + params[i].name + "'");
    std::copy(mi->second.second.begin(), mi->second.second.end(), opt.m[i].begin());
    std::copy(vi->second.second.begin(), vi->second.second.end(), opt.v[i].begin());
  }
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Tensor4f& movie, const SegmentationMask& mask, const SplitSpec& splits,
                  const std::filesystem::path& run_dir,
                  const std::filesystem::path& resume_from) {
  model_cfg.validate();
  train_cfg.validate();
  UNet<float> model(model_cfg, train_cfg.seed);
  OptimState opt = OptimState::for_model(model);
  std::int64_t start_step = 0;
  double best_val = 0.0;
  std::int64_t best_step = -1;
  bool append_log = false;
  if (!resume_from.empty()) {
    const Checkpoint ck = load_checkpoint(resume_from);
    if (ck.config.to_json_text() != model_cfg.to_json_text())
      throw ConfigError("resume checkpoint was trained with a different model config");
    restore_params(model, ck);
    restore_moments(ck, model, opt);
    start_step = ck.step;
    opt.step = ck.step;
    if (ck.extra.count("best_val")) best_val = std::stod(ck.extra.at("best_val"));
    if (ck.extra.count("best_step")) best_step = std::stoll(ck.extra.at("best_step"));
    append_log = std::filesystem::exists(run_dir / "log.csv");
  }
  return run_training(model_cfg, train_cfg, model, opt, start_step, best_val, best_step, movie,
                      mask, splits, run_dir, append_log);
}

TrainResult finetune(const std::filesystem::path& pretrained, const TrainConfig& train_cfg,
                     const Tensor4f& movie, const SegmentationMask& mask,
                     const SplitSpec& splits, const std::filesystem::path& run_dir) {
  train_cfg.validate();
  const Checkpoint ck = load_checkpoint(pretrained);
  const ModelConfig model_cfg = ck.config;
  UNet<float> model(model_cfg);
  restore_params(model, ck);
  OptimState opt = OptimState::for_model(model);  // reinitialized, not restored
  return run_training(model_cfg, train_cfg, model, opt, 0, 0.0, -1, movie, mask, splits,
                      run_dir, false);
}

}  // namespace volcast
