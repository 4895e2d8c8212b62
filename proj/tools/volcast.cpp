// volcast: operator front end for the forecasting pipeline.
//
// Subcommands: synth-gen, preprocess, train, finetune, eval, rf-report,
// shard-plan. Exit codes: 0 success, 2 usage/config error, 3 data error,
// 4 numerical failure. Every command that takes --out writes manifest.json
// there and refuses to overwrite existing output without --force.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "volcast/manifest.hpp"
#include "volcast/metrics.hpp"
#include "volcast/model.hpp"
#include "volcast/preprocess.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/shard.hpp"
#include "volcast/synth.hpp"
#include "volcast/trainer.hpp"
#include "volcast/volstore.hpp"

namespace fs = std::filesystem;
using namespace volcast;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::int64_t> parse_ints(const std::string& s, std::size_t n,
                                     const std::string& what) {
  const auto parts = split_csv(s);
  if (parts.size() != n)
    throw ConfigError(what + ": expected " + std::to_string(n) + " comma-separated integers, got '" +
                      s + "'");
  std::vector<std::int64_t> out;
  for (const auto& p : parts) {
    try {
      out.push_back(std::stoll(p));
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + p + "' is not an integer");
    }
  }
  return out;
}

Vec3i parse_vec3(const std::string& s, const std::string& what) {
  const auto v = parse_ints(s, 3, what);
  return {v[0], v[1], v[2]};
}

// Creates out_dir, refusing to clobber existing non-empty output. A command
// that legitimately appends (train --resume) sets allow_existing.
void prepare_out(const fs::path& out, bool force, bool allow_existing = false) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out))
      throw ConfigError("output path exists and is not a directory: " + out.string());
    if (!fs::is_empty(out) && !allow_existing) {
      if (!force)
        throw ConfigError("output directory " + out.string() +
                          " is not empty; pass --force to overwrite");
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct DatasetBundle {
  Tensor4f movie;
  SegmentationMask mask;
  NeuronIndex idx;
  SplitSpec splits;
  fs::path splits_file;
};

DatasetBundle load_dataset(const fs::path& data, const std::string& variant,
                           const fs::path& splits_override) {
  if (!fs::is_directory(data)) throw DataError("data directory not found: " + data.string());
  const fs::path movie_dir = data / ("movie_" + variant);
  if (!fs::is_directory(movie_dir)) {
    std::string have;
    for (const auto& e : fs::directory_iterator(data)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("movie_", 0) == 0) have += (have.empty() ? "" : ", ") + name.substr(6);
    }
    throw DataError("variant '" + variant + "' not found under " + data.string() +
                    (have.empty() ? "" : " (available: " + have + ")"));
  }
  DatasetBundle b;
  const ChunkedVolume vol = ChunkedVolume::open(movie_dir);
  b.movie = vol.read_subvolume<float>(Box4::full(vol.meta().dims), PadMode::error);
  b.mask = SegmentationMask::load(data / "mask");
  b.idx = build_index(b.mask);
  b.splits_file = splits_override.empty() ? data / "splits.json" : splits_override;
  b.splits = SplitSpec::from_file(b.splits_file);
  return b;
}

void print_train_result(const TrainResult& r) {
  std::cout << "final_train_loss: " << r.final_train_loss << "\n";
  if (r.best_step >= 0)
    std::cout << "best_val_mae: " << r.best_val << " at step " << r.best_step << "\n";
  std::cout << "best_checkpoint: " << r.best_ckpt.string() << "\n"
            << "final_checkpoint: " << r.final_ckpt.string() << "\n";
}

// ---------------------------------------------------------------------------
// synth-gen

struct SynthGenArgs {
  std::string config;
  std::string out;
  std::string variants = "full,masked_bg,rendered,shuffled";
  std::int64_t seed = -1;
  bool force = false;
};

int run_synth_gen(const SynthGenArgs& a) {
  SynthConfig cfg;
  std::vector<std::string> config_paths;
  if (!a.config.empty()) {
    cfg = SynthConfig::from_file(a.config);
    config_paths.push_back(a.config);
  }
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  const auto names = split_csv(a.variants);
  if (names.empty()) throw ConfigError("--variants: empty list");
  const std::set<std::string> variants(names.begin(), names.end());

  prepare_out(a.out, a.force);
  make_dataset(cfg, variants, a.out);
  RunManifest::make("synth-gen", config_paths, cfg.seed).save(a.out);
  std::cout << "dataset written to " << a.out << " (" << variants.size() << " variants)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessArgs {
  std::string in;
  std::string out;
  bool dff = false;
  std::string crop;        // "X,Y,Z"
  std::string downsample;  // "fx,fy,fz"
  double percentile = 5.0;
  std::int64_t window = 0;
  double epsilon = 1e-3;
  double clamp_lo = -0.25;
  double clamp_hi = 1.5;
  bool force = false;
  std::vector<std::string> op_order;  // subset of {dff, crop, downsample}, argv order
};

// One atomic volume-to-volume transform step.
struct PpStep {
  std::string kind;  // "dff" | "crop" | "downsample"
  int axis = -1;     // crop
  std::int64_t size = 0;
  Vec3i factors{1, 1, 1};  // downsample
};

Vec4i step_out_dims(const PpStep& s, const Vec4i& dims) {
  if (s.kind == "crop") return cropped_dims(dims, s.axis, s.size);
  if (s.kind == "downsample") return downsampled_dims(dims, s.factors);
  return dims;
}

// Expands the flag-order op list into atomic steps given the running dims.
std::vector<PpStep> plan_steps(const PreprocessArgs& a, Vec4i dims) {
  std::vector<PpStep> steps;
  for (const auto& op : a.op_order) {
    if (op == "dff") {
      steps.push_back({"dff", -1, 0, {1, 1, 1}});
    } else if (op == "crop") {
      const Vec3i want = parse_vec3(a.crop, "--crop");
      for (int axis = 0; axis < 3; ++axis) {
        if (want[axis] == dims[axis]) continue;  // identity, skip the copy
        PpStep s{"crop", axis, want[axis], {1, 1, 1}};
        dims = step_out_dims(s, dims);
        steps.push_back(s);
      }
    } else if (op == "downsample") {
      PpStep s{"downsample", -1, 0, parse_vec3(a.downsample, "--downsample")};
      dims = step_out_dims(s, dims);
      steps.push_back(s);
    }
  }
  return steps;
}

VolumeMeta meta_for(const VolumeMeta& in, const Vec4i& dims) {
  VolumeMeta m = in;
  m.dims = dims;
  for (int a = 0; a < 4; ++a) m.chunk_shape[a] = std::min(in.chunk_shape[a], dims[a]);
  return m;
}

void run_chain(const std::vector<PpStep>& steps, const PreprocessArgs& a,
               const fs::path& in_movie, const fs::path& out_movie, const fs::path& tmp_root) {
  if (steps.empty()) {
    fs::copy(in_movie, out_movie, fs::copy_options::recursive);
    return;
  }
  fs::create_directories(tmp_root);
  ChunkedVolume cur = ChunkedVolume::open(in_movie);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const PpStep& s = steps[i];
    const bool last = i + 1 == steps.size();
    const fs::path dst = last ? out_movie : tmp_root / ("s" + std::to_string(i));
    ChunkedVolume out =
        ChunkedVolume::create(dst, meta_for(cur.meta(), step_out_dims(s, cur.meta().dims)));
    if (s.kind == "dff") {
      BaselineConfig bc;
      bc.percentile = a.percentile;
      bc.window = a.window;
      bc.epsilon = a.epsilon;
      dff_normalize(cur, bc, ClampRange{static_cast<float>(a.clamp_lo),
                                        static_cast<float>(a.clamp_hi)},
                    out);
    } else if (s.kind == "crop") {
      center_crop(cur, s.axis, s.size, out);
    } else {
      downsample_avg(cur, s.factors, out);
    }
    cur = ChunkedVolume::open(dst);
  }
}

SegmentationMask crop_mask_axis(const SegmentationMask& m, int axis, std::int64_t size) {
  if (size > m.dims[axis])
    throw DataError("crop size " + std::to_string(size) + " exceeds mask extent " +
                    std::to_string(m.dims[axis]) + " on axis " + std::to_string(axis));
  Vec3i lo{0, 0, 0};
  lo[axis] = center_crop_offset(m.dims[axis], size);
  Vec3i nd = m.dims;
  nd[axis] = size;
  SegmentationMask out;
  out.dims = nd;
  out.labels.resize(static_cast<std::size_t>(prod(nd)));
  for (std::int64_t x = 0; x < nd[0]; ++x)
    for (std::int64_t y = 0; y < nd[1]; ++y)
      for (std::int64_t z = 0; z < nd[2]; ++z)
        out.labels[static_cast<std::size_t>(out.index(x, y, z))] =
            m.at(x + lo[0], y + lo[1], z + lo[2]);
  return out;
}

int run_preprocess(const PreprocessArgs& a) {
  const fs::path in(a.in);
  if (!fs::is_directory(in)) throw DataError("input directory not found: " + in.string());
  const bool dataset_mode = fs::exists(in / "mask" / "meta.json");
  prepare_out(a.out, a.force);
  const fs::path out(a.out);
  const fs::path tmp_root = out / ".pp_tmp";

  std::vector<fs::path> movies;
  if (dataset_mode) {
    for (const auto& e : fs::directory_iterator(in)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("movie_", 0) == 0 && fs::exists(e.path() / "meta.json"))
        movies.push_back(e.path());
    }
    if (movies.empty()) throw DataError("no movie_* volumes under " + in.string());
  } else if (fs::exists(in / "meta.json")) {
    movies.push_back(in);
  } else {
    throw DataError(in.string() + " is neither a chunked volume nor a dataset directory");
  }

  const Vec4i in_dims = ChunkedVolume::open(movies.front()).meta().dims;
  const std::vector<PpStep> steps = plan_steps(a, in_dims);

  for (const auto& m : movies) {
    const fs::path dst = dataset_mode ? out / m.filename() : out;
    if (!dataset_mode && steps.empty()) {
      // out already exists (prepare_out); copy contents file by file
      for (const auto& e : fs::directory_iterator(m)) fs::copy(e.path(), dst / e.path().filename());
    } else {
      run_chain(steps, a, m, dst, tmp_root);
    }
  }
  fs::remove_all(tmp_root);

  if (dataset_mode) {
    SegmentationMask mask = SegmentationMask::load(in / "mask");
    for (const auto& s : steps) {
      if (s.kind == "crop")
        mask = crop_mask_axis(mask, s.axis, s.size);
      else if (s.kind == "downsample")
        mask = downsample_mask_stride(mask, s.factors);
    }
    mask.save(out / "mask");
    for (const char* f : {"splits.json", "synth_config.json", "traces.bin"})
      if (fs::exists(in / f)) fs::copy_file(in / f, out / f);
  }

  std::vector<std::string> config_paths;
  RunManifest::make("preprocess", config_paths, 0).save(out);
  std::cout << "preprocessed " << movies.size() << " volume(s) into " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / finetune

struct TrainArgs {
  std::string data;
  std::string variant = "full";
  std::string model_config;
  std::string train_config;
  std::string splits;
  std::string out;
  std::string resume;
  std::string from;  // finetune only
  std::int64_t steps = -1;
  std::int64_t seed = -1;
  std::int64_t val_every = -1;
  std::string loss;
  std::int64_t context = -1;
  std::int64_t horizon = -1;
  bool force = false;
};

TrainConfig load_train_config(const TrainArgs& a) {
  TrainConfig tc;
  if (!a.train_config.empty()) tc = TrainConfig::from_file(a.train_config);
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);
  if (a.val_every >= 0) tc.val_every = a.val_every;
  if (!a.loss.empty()) tc.loss_kind = a.loss;
  tc.validate();
  return tc;
}

int run_train(const TrainArgs& a, bool is_finetune) {
  const TrainConfig tc = load_train_config(a);
  const bool resuming = !a.resume.empty();
  prepare_out(a.out, a.force, /*allow_existing=*/resuming);
  const DatasetBundle ds = load_dataset(a.data, a.variant, a.splits);

  std::vector<std::string> config_paths;
  if (!a.model_config.empty()) config_paths.push_back(a.model_config);
  if (!a.train_config.empty()) config_paths.push_back(a.train_config);
  config_paths.push_back(ds.splits_file.string());

  TrainResult r;
  if (is_finetune) {
    RunManifest::make("finetune", config_paths, tc.seed).save(a.out);
    r = finetune(a.from, tc, ds.movie, ds.mask, ds.splits, a.out);
  } else {
    ModelConfig mc = ModelConfig::from_file(a.model_config);
    if (a.context >= 0) mc.context = a.context;
    if (a.horizon >= 0) mc.horizon = a.horizon;
    mc.validate();
    RunManifest::make("train", config_paths, tc.seed).save(a.out);
    r = train(mc, tc, ds.movie, ds.mask, ds.splits, a.out, a.resume);
  }
  print_train_result(r);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string variant = "full";
  std::string split = "test";
  std::string splits_file;
  std::string out;
  std::int64_t max_starts = 16;
  bool svg = false;
  bool force = false;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  UNet<float> model(ck.config);
  restore_params(model, ck);
  const DatasetBundle ds = load_dataset(a.data, a.variant, a.splits_file);
  const TraceMatrix traces = extract_traces(ds.movie, ds.idx);
  const std::int64_t C = ck.config.context;
  const std::int64_t H = ck.config.horizon;

  prepare_out(a.out, a.force);
  std::map<std::string, ConditionReport> conditions, baselines;
  for (const auto& name : split_csv(a.split)) {
    const auto& intervals = ds.splits.condition(name);
    const auto starts = eval_starts(intervals, C, H, a.max_starts);
    if (starts.empty())
      throw DataError("split '" + name + "' has no usable context endpoints for C=" +
                      std::to_string(C) + ", H=" + std::to_string(H));
    const SnippetGrid targets = recorded_grid(traces, starts, H);
    conditions[name] = summarize(name, model_grid(model, ck.config, ds.movie, ds.idx, starts),
                                 targets);
    baselines[name] = summarize(name, copy_last_grid(traces, starts, H), targets);
  }
  report(conditions, a.out, a.svg);
  report(baselines, fs::path(a.out) / "baseline", a.svg);
  RunManifest::make("eval", {a.checkpoint}, 0).save(a.out);

  for (const auto& [name, r] : conditions) {
    std::cout << name << ": mae(h=1) " << r.mae.front() << ", mae(h=" << H << ") "
              << r.mae.back() << ", corr_h " << r.corr_h << "\n";
  }
  std::cout << "report written to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rf-report / shard-plan

int run_rf_report(const std::string& model_config, const std::string& extent_s) {
  const ModelConfig mc = ModelConfig::from_file(model_config);
  const ReceptiveField rf = receptive_field(mc);
  const ReceptiveField rfn = receptive_field_native(mc);
  const Vec3i sr = stencil_radius(mc);
  const UNet<float> model(mc);
  const Vec3i extent = parse_vec3(extent_s, "--extent");
  const FlopsBreakdown fb = flops_estimate(mc, extent);
  std::cout << "receptive_field: " << rf.rf[0] << " " << rf.rf[1] << " " << rf.rf[2] << "\n"
            << "receptive_field_native: " << rfn.rf[0] << " " << rfn.rf[1] << " " << rfn.rf[2]
            << "\n"
            << "stencil_radius: " << sr[0] << " " << sr[1] << " " << sr[2] << "\n"
            << "parameters: " << model.param_count() << "\n"
            << "flops(extent=" << extent[0] << "," << extent[1] << "," << extent[2]
            << "): conv=" << fb.conv << " other=" << fb.other << " total=" << fb.total() << "\n";
  return 0;
}

int run_shard_plan(const std::string& model_config, const std::string& dims_s,
                   const std::string& grid_s, const std::string& out, bool force) {
  const ModelConfig mc = ModelConfig::from_file(model_config);
  const Vec3i dims = parse_vec3(dims_s, "--dims");
  const auto g = parse_ints(grid_s, 2, "--grid");
  const ShardPlan plan = make_plan(dims, {g[0], g[1]}, mc);
  std::cout << plan.to_json_text() << "\n";
  if (!out.empty()) {
    prepare_out(out, force);
    std::ofstream f(fs::path(out) / "shard_plan.json");
    f << plan.to_json_text() << "\n";
    if (!f) throw DataError("failed to write shard_plan.json");
    RunManifest::make("shard-plan", {model_config}, 0).save(out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volumetric activity forecasting pipeline"};
  app.require_subcommand(1);

  SynthGenArgs sg;
  auto* c_sg = app.add_subcommand("synth-gen", "generate a synthetic dataset");
  c_sg->add_option("--config", sg.config, "synthesis config JSON (defaults apply when omitted)");
  c_sg->add_option("--out", sg.out, "output dataset directory")->required();
  c_sg->add_option("--variants", sg.variants, "comma list: full,masked_bg,rendered,shuffled");
  c_sg->add_option("--seed", sg.seed, "override config seed");
  c_sg->add_flag("--force", sg.force, "overwrite existing output");

  PreprocessArgs pp;
  auto* c_pp = app.add_subcommand("preprocess", "normalize / crop / downsample a volume");
  c_pp->add_option("--in", pp.in, "input volume or dataset directory")->required();
  c_pp->add_option("--out", pp.out, "output directory")->required();
  c_pp->add_flag("--dff", pp.dff, "baseline-normalize intensities");
  c_pp->add_option("--crop", pp.crop, "center-crop spatial extents X,Y,Z");
  c_pp->add_option("--downsample", pp.downsample, "box-mean factors fx,fy,fz");
  c_pp->add_option("--percentile", pp.percentile, "baseline percentile (with --dff)");
  c_pp->add_option("--window", pp.window, "trailing baseline window, 0 = whole movie");
  c_pp->add_option("--epsilon", pp.epsilon, "baseline stabilizer (with --dff)");
  c_pp->add_option("--clamp-lo", pp.clamp_lo, "lower clamp after normalization");
  c_pp->add_option("--clamp-hi", pp.clamp_hi, "upper clamp after normalization");
  c_pp->add_flag("--force", pp.force, "overwrite existing output");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a model from scratch");
  c_tr->add_option("--data", tr.data, "dataset directory")->required();
  c_tr->add_option("--variant", tr.variant, "movie variant to train on");
  c_tr->add_option("--model-config", tr.model_config, "model config JSON")->required();
  c_tr->add_option("--train-config", tr.train_config, "training config JSON");
  c_tr->add_option("--splits", tr.splits, "split file (default <data>/splits.json)");
  c_tr->add_option("--out", tr.out, "run directory")->required();
  c_tr->add_option("--resume", tr.resume, "resume from a final-style checkpoint");
  c_tr->add_option("--steps", tr.steps, "override steps");
  c_tr->add_option("--seed", tr.seed, "override seed");
  c_tr->add_option("--val-every", tr.val_every, "override validation cadence");
  c_tr->add_option("--loss", tr.loss, "override loss kind");
  c_tr->add_option("--context", tr.context, "override model context length");
  c_tr->add_option("--horizon", tr.horizon, "override model horizon");
  c_tr->add_flag("--force", tr.force, "overwrite existing output");

  TrainArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "continue from a pretrained checkpoint");
  c_ft->add_option("--from", ft.from, "pretrained checkpoint")->required();
  c_ft->add_option("--data", ft.data, "dataset directory")->required();
  c_ft->add_option("--variant", ft.variant, "movie variant to train on");
  c_ft->add_option("--train-config", ft.train_config, "training config JSON");
  c_ft->add_option("--splits", ft.splits, "split file (default <data>/splits.json)");
  c_ft->add_option("--out", ft.out, "run directory")->required();
  c_ft->add_option("--steps", ft.steps, "override steps");
  c_ft->add_option("--seed", ft.seed, "override seed");
  c_ft->add_option("--val-every", ft.val_every, "override validation cadence");
  c_ft->add_option("--loss", ft.loss, "override loss kind");
  c_ft->add_flag("--force", ft.force, "overwrite existing output");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "trace-level evaluation report");
  c_ev->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--variant", ev.variant, "movie variant to evaluate on");
  c_ev->add_option("--split", ev.split, "comma list of split names");
  c_ev->add_option("--splits", ev.splits_file, "split file (default <data>/splits.json)");
  c_ev->add_option("--out", ev.out, "report directory")->required();
  c_ev->add_option("--max-starts", ev.max_starts, "cap on evaluated context endpoints");
  c_ev->add_flag("--svg", ev.svg, "also draw mae_vs_horizon.svg");
  c_ev->add_flag("--force", ev.force, "overwrite existing output");

  std::string rf_config, rf_extent = "64,48,8";
  auto* c_rf = app.add_subcommand("rf-report", "receptive field, parameters, flops");
  c_rf->add_option("--model-config", rf_config, "model config JSON")->required();
  c_rf->add_option("--extent", rf_extent, "input extent X,Y,Z for the flops estimate");

  std::string sp_config, sp_dims, sp_grid, sp_out;
  bool sp_force = false;
  auto* c_sp = app.add_subcommand("shard-plan", "spatial decomposition with halos");
  c_sp->add_option("--model-config", sp_config, "model config JSON")->required();
  c_sp->add_option("--dims", sp_dims, "volume spatial extents X,Y,Z")->required();
  c_sp->add_option("--grid", sp_grid, "shard grid GX,GY")->required();
  c_sp->add_option("--out", sp_out, "optional directory for shard_plan.json");
  c_sp->add_flag("--force", sp_force, "overwrite existing output");

  try {
    app.parse(argc, argv);
    // flag order defines the preprocess op chain
    for (int i = 1; i < argc; ++i) {
      const std::string t(argv[i]);
      if (t == "--dff" || t == "--crop" || t == "--downsample") pp.op_order.push_back(t.substr(2));
    }
    if (c_sg->parsed()) return run_synth_gen(sg);
    if (c_pp->parsed()) return run_preprocess(pp);
    if (c_tr->parsed()) return run_train(tr, false);
    if (c_ft->parsed()) return run_train(ft, true);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_rf->parsed()) return run_rf_report(rf_config, rf_extent);
    if (c_sp->parsed()) return run_shard_plan(sp_config, sp_dims, sp_grid, sp_out, sp_force);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
