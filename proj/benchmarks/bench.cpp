// Microbenchmarks for the hot paths: convolution kernels, a full model
// step, chunked reads, and trace extraction. GFLOPS counters let a config
// be sized against the host before long runs.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <filesystem>

#include "volcast/layers.hpp"
#include "volcast/model.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/synth.hpp"
#include "volcast/volstore.hpp"

using namespace volcast;

namespace {

Tensor4f random_tensor(const Vec4i& shape, std::uint64_t seed) {
  Tensor4f t(shape);
  Rng rng(seed);
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  Rng rng(seed);
  for (float& x : v) x = static_cast<float>(rng.normal() * 0.05);
  return v;
}

ModelConfig desk_config() {
  ModelConfig mc;
  mc.context = 2;
  mc.horizon = 8;
  mc.features = 16;
  mc.superres_features = 8;
  mc.groups = 8;
  mc.stages = {{2, 2, 1}, {2, 2, 2}};
  mc.blocks_low = 4;
  mc.blocks_other = 3;
  mc.embed_dim = 32;
  return mc;
}

void BM_Conv3dForward(benchmark::State& state) {
  const std::int64_t F = state.range(0);
  const Vec4i shape{32, 32, 8, F};
  const Tensor4f x = random_tensor(shape, 1);
  const auto k = random_vec(static_cast<std::size_t>(27 * F * F), 2);
  const auto b = random_vec(static_cast<std::size_t>(F), 3);
  Tensor4f y({32, 32, 8, F});
  for (auto _ : state) {
    conv3d(x, k, b, F, y);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(static_cast<double>(state.iterations()) *
                             static_cast<double>(conv3d_flops(F, F, 32 * 32 * 8)) * 1e-9,
                         benchmark::Counter::kIsRate);
}

void BM_Conv3dBackward(benchmark::State& state) {
  const std::int64_t F = state.range(0);
  const Vec4i shape{32, 32, 8, F};
  const Tensor4f x = random_tensor(shape, 1);
  const auto k = random_vec(static_cast<std::size_t>(27 * F * F), 2);
  const Tensor4f dy = random_tensor(shape, 4);
  Tensor4f dx(shape);
  std::vector<float> dk(k.size(), 0.0f), db(static_cast<std::size_t>(F), 0.0f);
  for (auto _ : state) {
    conv3d_backward(x, k, dy, dx, dk, db);
    benchmark::DoNotOptimize(dx.data.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(static_cast<double>(state.iterations()) * 2.0 *
                             static_cast<double>(conv3d_flops(F, F, 32 * 32 * 8)) * 1e-9,
                         benchmark::Counter::kIsRate);
}

void BM_ModelForward(benchmark::State& state) {
  const ModelConfig mc = desk_config();
  UNet<float> model(mc, 7);
  const Tensor4f ctx = random_tensor({32, 32, 8, mc.context}, 5);
  for (auto _ : state) {
    Tensor4f out = model.forward(ctx, 1);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      static_cast<double>(state.iterations()) *
          static_cast<double>(flops_estimate(mc, {32, 32, 8}).total()) * 1e-9,
      benchmark::Counter::kIsRate);
}

void BM_ModelTrainStep(benchmark::State& state) {
  const ModelConfig mc = desk_config();
  UNet<float> model(mc, 7);
  const Tensor4f ctx = random_tensor({32, 32, 8, mc.context}, 5);
  ForwardOpts opts;
  opts.train = true;
  for (auto _ : state) {
    Tensor4f out = model.forward(ctx, 1, opts);
    model.zero_grad();
    Tensor4f g(out.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = 1.0f / static_cast<float>(g.data.size());
    Tensor4f dx = model.backward(g);
    benchmark::DoNotOptimize(dx.data.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      static_cast<double>(state.iterations()) * 3.0 *
          static_cast<double>(flops_estimate(mc, {32, 32, 8}).total()) * 1e-9,
      benchmark::Counter::kIsRate);
}

void BM_VolstoreReadContext(benchmark::State& state) {
  const std::filesystem::path root =
      std::filesystem::temp_directory_path() / "volcast_bench_store";
  std::filesystem::remove_all(root);
  VolumeMeta meta;
  meta.dims = {32, 32, 8, 64};
  meta.chunk_shape = {32, 32, 8, 1};
  ChunkedVolume vol = ChunkedVolume::create(root, meta);
  const Tensor4f frame = random_tensor({32, 32, 8, 64}, 11);
  vol.write_subvolume(Box4::full(meta.dims), frame);
  std::int64_t t = 8;
  for (auto _ : state) {
    Tensor4f ctx = vol.read_subvolume<float>({{0, 0, 0, t - 8}, {32, 32, 8, t}}, PadMode::error);
    benchmark::DoNotOptimize(ctx.data.data());
    t = 8 + (t + 1) % 56;
  }
  state.SetBytesProcessed(state.iterations() * 32 * 32 * 8 * 8 * 4);
  std::filesystem::remove_all(root);
}

void BM_ExtractTraces(benchmark::State& state) {
  SynthConfig cfg;
  cfg.dims = {32, 32, 8, 64};
  cfg.n_cells = 20;
  const CellLayout layout = gen_cells(cfg);
  const NeuronIndex idx = build_index(layout.mask);
  const TraceMatrix tr = gen_traces_for(cfg, layout.centers);
  Tensor4f movie({32, 32, 8, 64});
  for (std::int64_t t = 0; t < 64; ++t) render_traces_frame(idx, tr, t, movie, t);
  for (auto _ : state) {
    TraceMatrix out = extract_traces(movie, idx);
    benchmark::DoNotOptimize(out.values.data());
  }
}

BENCHMARK(BM_Conv3dForward)->Arg(16)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_VolstoreReadContext)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractTraces)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
