#include "volcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "volcast/objectives.hpp"

namespace volcast {

SnippetGrid SnippetGrid::zeros(std::vector<std::int64_t> starts, std::int64_t horizon,
                               std::int64_t neurons) {
  SnippetGrid g;
  g.starts = std::move(starts);
  g.horizon = horizon;
  g.neurons = neurons;
  g.values.assign(static_cast<std::size_t>(static_cast<std::int64_t>(g.starts.size()) *
                                           horizon * neurons),
                  0.0);
  return g;
}

void SnippetGrid::check_compatible(const SnippetGrid& other) const {
  if (starts != other.starts || horizon != other.horizon || neurons != other.neurons)
    throw DataError("snippet grids disagree in starts, horizon, or neurons");
}

std::vector<double> mae_per_horizon(const SnippetGrid& preds, const SnippetGrid& targets) {
  preds.check_compatible(targets);
  const std::int64_t S = static_cast<std::int64_t>(preds.starts.size());
  if (S == 0 || preds.neurons == 0) throw DataError("mae_per_horizon: empty grid");
  std::vector<double> out(static_cast<std::size_t>(preds.horizon), 0.0);
  for (std::int64_t h = 1; h <= preds.horizon; ++h) {
    double acc = 0.0;
    for (std::int64_t s = 0; s < S; ++s)
      for (std::int64_t n = 0; n < preds.neurons; ++n)
        acc += std::abs(preds.at(s, h, n) - targets.at(s, h, n));
    out[static_cast<std::size_t>(h - 1)] = acc / static_cast<double>(S * preds.neurons);
  }
  return out;
}

namespace {

// Pearson correlation; either side constant -> 0 by convention.
double pearson(const double* a, const double* b, std::int64_t n, std::int64_t stride) {
  double ma = 0.0, mb = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    ma += a[i * stride];
    mb += b[i * stride];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double da = a[i * stride] - ma;
    const double db = b[i * stride] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double corr_h(const SnippetGrid& preds, const SnippetGrid& targets) {
  preds.check_compatible(targets);
  if (preds.horizon < 2) throw ConfigError("corr_h requires horizon >= 2");
  const std::int64_t S = static_cast<std::int64_t>(preds.starts.size());
  if (S == 0 || preds.neurons == 0) throw DataError("corr_h: empty grid");
  const std::int64_t N = preds.neurons, H = preds.horizon;
  double neuron_acc = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    double start_acc = 0.0;
    for (std::int64_t s = 0; s < S; ++s) {
      const double* p = &preds.values[static_cast<std::size_t>((s * H) * N + n)];
      const double* t = &targets.values[static_cast<std::size_t>((s * H) * N + n)];
      start_acc += pearson(p, t, H, N);
    }
    neuron_acc += start_acc / static_cast<double>(S);
  }
  return neuron_acc / static_cast<double>(N);
}

double corr_w(const SnippetGrid& preds, const SnippetGrid& targets, std::int64_t h) {
  preds.check_compatible(targets);
  if (h < 1 || h > preds.horizon) throw ConfigError("corr_w: lead time out of range");
  const std::int64_t S = static_cast<std::int64_t>(preds.starts.size());
  const std::int64_t H = preds.horizon, N = preds.neurons;
  if (S < H) throw DataError("corr_w: need at least horizon-many starts for one window");
  if (N == 0) throw DataError("corr_w: empty grid");
  for (std::int64_t s = 1; s < S; ++s)
    if (preds.starts[static_cast<std::size_t>(s)] !=
        preds.starts[static_cast<std::size_t>(s - 1)] + 1)
      throw DataError("corr_w: starts must be consecutive");
  const std::int64_t windows = S / H;
  double neuron_acc = 0.0;
  std::vector<double> p(static_cast<std::size_t>(H)), t(static_cast<std::size_t>(H));
  for (std::int64_t n = 0; n < N; ++n) {
    double win_acc = 0.0;
    for (std::int64_t w = 0; w < windows; ++w) {
      for (std::int64_t i = 0; i < H; ++i) {
        const std::int64_t s = w * H + i;
        p[static_cast<std::size_t>(i)] = preds.at(s, h, n);
        t[static_cast<std::size_t>(i)] = targets.at(s, h, n);
      }
      win_acc += pearson(p.data(), t.data(), H, 1);
    }
    neuron_acc += win_acc / static_cast<double>(windows);
  }
  return neuron_acc / static_cast<double>(N);
}

SnippetGrid recorded_grid(const TraceMatrix& traces, const std::vector<std::int64_t>& starts,
                          std::int64_t horizon) {
  SnippetGrid g = SnippetGrid::zeros(starts, horizon, traces.neurons);
  for (std::size_t s = 0; s < starts.size(); ++s)
    for (std::int64_t h = 1; h <= horizon; ++h) {
      const std::int64_t t = starts[s] + h;
      if (t < 0 || t >= traces.timesteps)
        throw DataError("recorded_grid: start " + std::to_string(starts[s]) +
                        " plus lead " + std::to_string(h) + " leaves the recording");
      for (std::int64_t n = 0; n < traces.neurons; ++n)
        g.at(static_cast<std::int64_t>(s), h, n) = traces.at(n, t);
    }
  return g;
}

SnippetGrid copy_last_grid(const TraceMatrix& traces, const std::vector<std::int64_t>& starts,
                           std::int64_t horizon) {
  SnippetGrid g = SnippetGrid::zeros(starts, horizon, traces.neurons);
  for (std::size_t s = 0; s < starts.size(); ++s) {
    if (starts[s] < 0 || starts[s] >= traces.timesteps)
      throw DataError("copy_last_grid: start outside the recording");
    for (std::int64_t h = 1; h <= horizon; ++h)
      for (std::int64_t n = 0; n < traces.neurons; ++n)
        g.at(static_cast<std::int64_t>(s), h, n) = traces.at(n, starts[s]);
  }
  return g;
}

SnippetGrid model_grid(UNet<float>& model, const ModelConfig& cfg, const Tensor4f& movie,
                       const NeuronIndex& idx, const std::vector<std::int64_t>& starts) {
  const std::int64_t C = cfg.context, H = cfg.horizon;
  const std::int64_t N = idx.n_neurons();
  SnippetGrid g = SnippetGrid::zeros(starts, H, N);
  const BinSpec bins = BinSpec::make(cfg.n_bins, ClampRange{});
  ForwardOpts opts;
  opts.train = false;
  opts.norm = NormMode::live;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const std::int64_t t = starts[s];
    if (t - C + 1 < 0 || t + H >= movie.shape[3])
      throw DataError("model_grid: start " + std::to_string(t) +
                      " does not leave room for context and horizon");
    const Tensor4f context = slice_channels(movie, t - C + 1, t + 1);
    if (cfg.head == "direct") {
      Tensor4f pred = model.forward(context, 1, opts);
      for (std::int64_t h = 1; h <= H; ++h) {
        const std::vector<double> means = mask_frame(pred, idx, h - 1);
        for (std::int64_t n = 0; n < N; ++n)
          g.at(static_cast<std::int64_t>(s), h, n) = means[static_cast<std::size_t>(n)];
      }
    } else if (cfg.head == "hl_gauss") {
      const std::int64_t B = cfg.n_bins;
      std::vector<double> logits(static_cast<std::size_t>(B));
      for (std::int64_t h = 1; h <= H; ++h) {
        Tensor4f pred = model.forward(context, h, opts);
        for (std::int64_t n = 0; n < N; ++n) {
          if (idx.voxels[static_cast<std::size_t>(n)].empty()) continue;
          std::fill(logits.begin(), logits.end(), 0.0);
          for (std::int64_t flat : idx.voxels[static_cast<std::size_t>(n)])
            for (std::int64_t b = 0; b < B; ++b)
              logits[static_cast<std::size_t>(b)] +=
                  pred.data[static_cast<std::size_t>(flat * B + b)];
          for (double& v : logits)
            v /= static_cast<double>(idx.voxels[static_cast<std::size_t>(n)].size());
          g.at(static_cast<std::int64_t>(s), h, n) = hl_gauss_decode(logits, bins);
        }
      }
    } else {
      for (std::int64_t h = 1; h <= H; ++h) {
        Tensor4f pred = model.forward(context, h, opts);
        const std::vector<double> means = mask_frame(pred, idx);
        for (std::int64_t n = 0; n < N; ++n)
          g.at(static_cast<std::int64_t>(s), h, n) = means[static_cast<std::size_t>(n)];
      }
    }
  }
  return g;
}

std::vector<std::int64_t> eval_starts(const std::vector<TimeInterval>& intervals,
                                      std::int64_t C, std::int64_t H, std::int64_t max_starts) {
  std::vector<std::int64_t> all;
  for (const auto& iv : intervals)
    for (std::int64_t t = iv[0] + C - 1; t + H < iv[1]; ++t) all.push_back(t);
  if (all.empty()) throw DataError("eval_starts: no interval admits context plus horizon");
  if (static_cast<std::int64_t>(all.size()) <= max_starts) return all;
  // Keep a contiguous block so corr_w windows stay valid.
  return std::vector<std::int64_t>(all.begin(), all.begin() + max_starts);
}

ConditionReport summarize(const std::string& name, const SnippetGrid& preds,
                          const SnippetGrid& targets) {
  ConditionReport r;
  r.name = name;
  r.mae = mae_per_horizon(preds, targets);
  r.corr_h = preds.horizon >= 2 ? corr_h(preds, targets) : 0.0;
  r.corr_w.assign(static_cast<std::size_t>(preds.horizon), 0.0);
  const bool windows_possible =
      static_cast<std::int64_t>(preds.starts.size()) >= preds.horizon;
  if (windows_possible) {
    bool consecutive = true;
    for (std::size_t s = 1; s < preds.starts.size(); ++s)
      if (preds.starts[s] != preds.starts[s - 1] + 1) consecutive = false;
    if (consecutive)
      for (std::int64_t h = 1; h <= preds.horizon; ++h)
        r.corr_w[static_cast<std::size_t>(h - 1)] = corr_w(preds, targets, h);
  }
  return r;
}

namespace {

void write_condition_csv(const std::filesystem::path& file, const ConditionReport& r) {
  std::ofstream f(file);
  f << "horizon,mae,corr_w\n";
  for (std::size_t h = 0; h < r.mae.size(); ++h)
    f << (h + 1) << "," << fmt_double(r.mae[h]) << "," << fmt_double(r.corr_w[h]) << "\n";
  if (!f) throw DataError("failed to write " + file.string());
}

void write_svg(const std::filesystem::path& file,
               const std::map<std::string, ConditionReport>& conditions,
               const std::vector<double>& aggregate) {
  const double W = 640, Hpx = 400, ml = 60, mr = 20, mt = 30, mb = 40;
  double ymax = 1e-9;
  for (const auto& [_, r] : conditions)
    for (double v : r.mae) ymax = std::max(ymax, v);
  for (double v : aggregate) ymax = std::max(ymax, v);
  const std::size_t H = aggregate.size();
  auto xpos = [&](std::size_t h) {
    return ml + (W - ml - mr) * (H == 1 ? 0.5
                                        : static_cast<double>(h) / static_cast<double>(H - 1));
  };
  auto ypos = [&](double v) { return Hpx - mb - (Hpx - mt - mb) * (v / ymax); };
  const char* palette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
  std::ofstream f(file);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hpx
    << "\" viewBox=\"0 0 " << W << " " << Hpx << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << (Hpx - mb) << "\" x2=\"" << (W - mr) << "\" y2=\""
    << (Hpx - mb) << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (Hpx - mb)
    << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (W / 2) << "\" y=\"" << (Hpx - 8)
    << "\" text-anchor=\"middle\" font-size=\"13\">lead time</text>\n";
  f << "<text x=\"14\" y=\"" << (Hpx / 2)
    << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 " << (Hpx / 2)
    << ")\">trace MAE</text>\n";
  f << "<text x=\"" << ml << "\" y=\"" << (mt - 10) << "\" font-size=\"11\">max "
    << fmt_double(ymax) << "</text>\n";
  int ci = 0;
  auto polyline = [&](const std::vector<double>& ys, const std::string& color,
                      const std::string& dash) {
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (!dash.empty()) f << " stroke-dasharray=\"" << dash << "\"";
    f << " points=\"";
    for (std::size_t h = 0; h < ys.size(); ++h) f << xpos(h) << "," << ypos(ys[h]) << " ";
    f << "\"/>\n";
  };
  double ly = mt + 6;
  for (const auto& [name, r] : conditions) {
    const std::string color = palette[ci % 6];
    polyline(r.mae, color, "");
    f << "<text x=\"" << (W - mr - 150) << "\" y=\"" << ly << "\" font-size=\"11\" fill=\""
      << color << "\">" << name << "</text>\n";
    ly += 14;
    ++ci;
  }
  if (conditions.size() > 1) {
    polyline(aggregate, "#000000", "4 3");
    f << "<text x=\"" << (W - mr - 150) << "\" y=\"" << ly
      << "\" font-size=\"11\" fill=\"#000000\">aggregate</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw DataError("failed to write " + file.string());
}

}  // namespace

void report(const std::map<std::string, ConditionReport>& conditions,
            const std::filesystem::path& out_dir, bool svg) {
  if (conditions.empty()) throw DataError("report: no conditions");
  std::size_t H = 0;
  for (const auto& [name, r] : conditions) {
    if (r.mae.empty()) throw DataError("report: condition '" + name + "' is empty");
    if (H == 0) H = r.mae.size();
    if (r.mae.size() != H) throw DataError("report: conditions disagree on horizon");
  }
  std::filesystem::create_directories(out_dir);
  for (const auto& [name, r] : conditions)
    write_condition_csv(out_dir / ("condition_" + name + ".csv"), r);

  std::vector<double> agg_mae(H, 0.0), agg_w(H, 0.0);
  for (const auto& [_, r] : conditions)
    for (std::size_t h = 0; h < H; ++h) {
      agg_mae[h] += r.mae[h] / static_cast<double>(conditions.size());
      agg_w[h] += r.corr_w[h] / static_cast<double>(conditions.size());
    }
  {
    std::ofstream f(out_dir / "aggregate.csv");
    f << "horizon,mae,corr_w\n";
    for (std::size_t h = 0; h < H; ++h)
      f << (h + 1) << "," << fmt_double(agg_mae[h]) << "," << fmt_double(agg_w[h]) << "\n";
    if (!f) throw DataError("failed to write aggregate.csv");
  }
  {
    std::ofstream f(out_dir / "summary.csv");
    f << "condition,corr_h,mean_mae\n";
    double agg_h = 0.0, agg_m = 0.0;
    for (const auto& [name, r] : conditions) {
      double mean_mae = 0.0;
      for (double v : r.mae) mean_mae += v / static_cast<double>(r.mae.size());
      f << name << "," << fmt_double(r.corr_h) << "," << fmt_double(mean_mae) << "\n";
      agg_h += r.corr_h / static_cast<double>(conditions.size());
      agg_m += mean_mae / static_cast<double>(conditions.size());
    }
    f << "aggregate," << fmt_double(agg_h) << "," << fmt_double(agg_m) << "\n";
    if (!f) throw DataError("failed to write summary.csv");
  }
  if (svg) write_svg(out_dir / "mae_vs_horizon.svg", conditions, agg_mae);
}

}  // namespace volcast
