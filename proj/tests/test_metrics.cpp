#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "volcast/metrics.hpp"

using namespace volcast;
using vtest::TempDir;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
  }
  if (sa <= 0.0 || sb <= 0.0) return 0.0;
  return sab / std::sqrt(sa * sb);
}

SnippetGrid random_grid(const std::vector<std::int64_t>& starts, std::int64_t H, std::int64_t N,
                        std::uint64_t seed) {
  SnippetGrid g = SnippetGrid::zeros(starts, H, N);
  Rng rng(seed);
  for (auto& v : g.values) v = rng.normal();
  return g;
}

TraceMatrix random_traces(std::int64_t N, std::int64_t T, std::uint64_t seed) {
  TraceMatrix t = TraceMatrix::zeros(N, T);
  Rng rng(seed);
  for (auto& v : t.values) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("mae per horizon against a brute-force mean") {
  const std::vector<std::int64_t> starts{3, 4, 5};
  const std::int64_t H = 4, N = 5;
  const SnippetGrid p = random_grid(starts, H, N, 1);
  const SnippetGrid t = random_grid(starts, H, N, 2);
  const std::vector<double> mae = mae_per_horizon(p, t);
  REQUIRE(static_cast<std::int64_t>(mae.size()) == H);
  for (std::int64_t h = 1; h <= H; ++h) {
    double want = 0.0;
    for (std::int64_t s = 0; s < 3; ++s)
      for (std::int64_t n = 0; n < N; ++n) want += std::abs(p.at(s, h, n) - t.at(s, h, n));
    want /= static_cast<double>(3 * N);
    CHECK(vtest::rel_err(mae[static_cast<std::size_t>(h - 1)], want) < 1e-12);
  }
  // identical grids score zero at every lead time
  const std::vector<double> z = mae_per_horizon(p, p);
  for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("grid compatibility is enforced") {
  const SnippetGrid a = random_grid({0, 1}, 3, 2, 3);
  const SnippetGrid b = random_grid({0, 1}, 3, 3, 4);
  CHECK_THROWS_AS(mae_per_horizon(a, b), DataError);
  const SnippetGrid c = random_grid({0, 2}, 3, 2, 5);
  CHECK_THROWS_AS(mae_per_horizon(a, c), DataError);
  CHECK_THROWS_AS(corr_h(a, b), DataError);
}

TEST_CASE("snippet correlation of identical grids is one") {
  const SnippetGrid p = random_grid({2, 7, 9}, 5, 4, 6);
  CHECK(corr_h(p, p) == doctest::Approx(1.0).epsilon(1e-9));
  // negated predictions correlate at -1
  SnippetGrid m = p;
  for (auto& v : m.values) v = -v;
  CHECK(corr_h(m, p) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("snippet correlation matches a per-snippet Pearson oracle") {
  const std::vector<std::int64_t> starts{1, 4};
  const std::int64_t H = 6, N = 3;
  const SnippetGrid p = random_grid(starts, H, N, 7);
  const SnippetGrid t = random_grid(starts, H, N, 8);
  double want = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    double per_neuron = 0.0;
    for (std::int64_t s = 0; s < 2; ++s) {
      std::vector<double> a, b;
      for (std::int64_t h = 1; h <= H; ++h) {
        a.push_back(p.at(s, h, n));
        b.push_back(t.at(s, h, n));
      }
      per_neuron += pearson(a, b);
    }
    want += per_neuron / 2.0;
  }
  want /= static_cast<double>(N);
  CHECK(vtest::rel_err(corr_h(p, t), want) < 1e-9);
}

TEST_CASE("snippet correlation is invariant to affine rescaling") {
  const SnippetGrid t = random_grid({0, 3, 6}, 4, 3, 9);
  SnippetGrid p = t;
  for (auto& v : p.values) v = 3.0 * v + 11.0;
  CHECK(corr_h(p, t) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero-variance snippets contribute zero") {
  SnippetGrid p = SnippetGrid::zeros({0, 1}, 3, 1);
  SnippetGrid t = random_grid({0, 1}, 3, 1, 10);
  p.values.assign(p.values.size(), 5.0);  // flat predictions
  CHECK(corr_h(p, t) == 0.0);
  CHECK(corr_h(p, p) == 0.0);
  // horizon 1 snippets carry no correlation signal
  const SnippetGrid h1 = random_grid({0, 1}, 1, 2, 11);
  CHECK_THROWS_AS(corr_h(h1, h1), ConfigError);
}

TEST_CASE("fixed-lead correlation assembles windows across starts") {
  // consecutive starts 10..17, horizon 3, one neuron; at h = 2 the assembled
  // series aligns predictions for times starts[s]+2
  const std::vector<std::int64_t> starts{10, 11, 12, 13, 14, 15, 16, 17};
  const std::int64_t H = 3;
  SnippetGrid p = SnippetGrid::zeros(starts, H, 1);
  SnippetGrid t = SnippetGrid::zeros(starts, H, 1);
  Rng rng(12);
  std::vector<double> ps, ts;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const double pv = rng.normal(), tv = rng.normal();
    for (std::int64_t h = 1; h <= H; ++h) {
      p.at(static_cast<std::int64_t>(s), h, 0) = pv + static_cast<double>(h);
      t.at(static_cast<std::int64_t>(s), h, 0) = tv + static_cast<double>(h);
    }
    ps.push_back(pv + 2.0);
    ts.push_back(tv + 2.0);
  }
  // oracle: windows of length H over the assembled series, averaged
  double want = 0.0;
  std::int64_t n_win = 0;
  for (std::size_t w = 0; w + H <= ps.size(); w += H) {
    std::vector<double> a(ps.begin() + static_cast<std::int64_t>(w),
                          ps.begin() + static_cast<std::int64_t>(w) + H);
    std::vector<double> b(ts.begin() + static_cast<std::int64_t>(w),
                          ts.begin() + static_cast<std::int64_t>(w) + H);
    want += pearson(a, b);
    ++n_win;
  }
  want /= static_cast<double>(n_win);
  CHECK(vtest::rel_err(corr_w(p, t, 2), want) < 1e-9);
  CHECK_THROWS_AS(corr_w(p, t, 4), ConfigError);  // h beyond horizon
}

TEST_CASE("recorded and copy-last grids read the trace matrix") {
  const TraceMatrix tr = random_traces(3, 30, 13);
  const std::vector<std::int64_t> starts{5, 6, 9};
  const std::int64_t H = 4;
  const SnippetGrid rec = recorded_grid(tr, starts, H);
  const SnippetGrid last = copy_last_grid(tr, starts, H);
  for (std::size_t s = 0; s < starts.size(); ++s)
    for (std::int64_t h = 1; h <= H; ++h)
      for (std::int64_t n = 0; n < 3; ++n) {
        CHECK(rec.at(static_cast<std::int64_t>(s), h, n) ==
              doctest::Approx(tr.at(n, starts[s] + h)).epsilon(1e-12));
        CHECK(last.at(static_cast<std::int64_t>(s), h, n) ==
              doctest::Approx(tr.at(n, starts[s])).epsilon(1e-12));
      }
  // grid out of range is rejected
  CHECK_THROWS_AS(recorded_grid(tr, {28}, H), DataError);
  CHECK_THROWS_AS(copy_last_grid(tr, {-1}, H), DataError);

  // the copy-last baseline is perfect at a constant trace
  TraceMatrix flat = TraceMatrix::zeros(1, 20);
  for (auto& v : flat.values) v = 2.0f;
  const SnippetGrid fr = recorded_grid(flat, {3, 4}, 3);
  const SnippetGrid fl = copy_last_grid(flat, {3, 4}, 3);
  const auto mae = mae_per_horizon(fl, fr);
  for (double v : mae) CHECK(v == 0.0);
}

TEST_CASE("eval starts are contiguous, in range, and capped") {
  const std::vector<TimeInterval> iv{{0, 40}};
  const std::int64_t C = 4, H = 8;
  // valid endpoints: t in [3, 31]
  const auto all = eval_starts(iv, C, H, 1000);
  REQUIRE(!all.empty());
  CHECK(all.front() == 3);
  CHECK(all.back() == 31);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i] == all[i - 1] + 1);

  const auto capped = eval_starts(iv, C, H, 6);
  CHECK(capped.size() == 6);
  for (std::size_t i = 1; i < capped.size(); ++i) CHECK(capped[i] == capped[i - 1] + 1);
  CHECK(capped.front() >= 3);
  CHECK(capped.back() <= 31);

  // too-short intervals admit no start at all
  CHECK_THROWS_AS(eval_starts({{0, 11}}, C, H, 10), DataError);
  CHECK(!eval_starts({{0, 12}}, C, H, 10).empty());
}

TEST_CASE("model grid agrees with direct forwards") {
  // tiny model, no downsampling; compare against doing the loops by hand
  ModelConfig c;
  c.context = 2;
  c.horizon = 2;
  c.features = 4;
  c.superres_features = 4;
  c.groups = 2;
  c.blocks_low = 1;
  c.blocks_other = 1;
  c.embed_dim = 4;

  SegmentationMask m;
  m.dims = {4, 4, 1};
  m.labels.assign(16, 0);
  m.labels[0] = 1u;
  m.labels[5] = 1u;
  m.labels[10] = 2u;
  const NeuronIndex idx = build_index(m);

  Tensor4f movie({4, 4, 1, 12});
  Rng rng(14);
  vtest::fill_normal(movie.data, rng);

  UNet<float> model(c, 15);
  const std::vector<std::int64_t> starts{2, 3, 4};
  const SnippetGrid g = model_grid(model, c, movie, idx, starts);
  CHECK(g.horizon == 2);
  CHECK(g.neurons == idx.n_neurons());

  for (std::size_t s = 0; s < starts.size(); ++s)
    for (std::int64_t h = 1; h <= 2; ++h) {
      const Tensor4f ctx = slice_channels(movie, starts[s] - 1, starts[s] + 1);
      Tensor4f pred = model.forward(ctx, h);
      const std::vector<double> want = mask_frame(pred, idx, 0);
      for (std::int64_t n = 0; n < g.neurons; ++n)
        CHECK(vtest::rel_err(g.at(static_cast<std::int64_t>(s), h, n),
                             want[static_cast<std::size_t>(n)]) < 1e-6);
    }
}

TEST_CASE("summaries and report files round trip through CSV") {
  const std::vector<std::int64_t> starts{0, 1, 2, 3};
  const SnippetGrid t = random_grid(starts, 3, 4, 16);
  SnippetGrid p = t;
  Rng rng(17);
  for (auto& v : p.values) v += 0.1 * rng.normal();

  const ConditionReport rep = summarize("test", p, t);
  CHECK(rep.name == "test");
  REQUIRE(rep.mae.size() == 3);
  REQUIRE(rep.corr_w.size() == 3);
  const auto mae = mae_per_horizon(p, t);
  for (std::size_t h = 0; h < 3; ++h) CHECK(rep.mae[h] == mae[h]);
  CHECK(rep.corr_h == corr_h(p, t));
  CHECK(rep.corr_h > 0.5);  // mild noise keeps correlation high

  TempDir td("metrics_report");
  std::map<std::string, ConditionReport> conditions;
  conditions["test"] = rep;
  conditions["holdout"] = summarize("holdout", t, t);
  report(conditions, td / "out", true);

  CHECK(std::filesystem::exists(td / "out" / "condition_test.csv"));
  CHECK(std::filesystem::exists(td / "out" / "condition_holdout.csv"));
  CHECK(std::filesystem::exists(td / "out" / "summary.csv"));
  CHECK(std::filesystem::exists(td / "out" / "aggregate.csv"));
  CHECK(std::filesystem::exists(td / "out" / "mae_vs_horizon.svg"));

  // parse condition_test.csv back and compare numbers
  std::istringstream csv(vtest::slurp(td / "out" / "condition_test.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "horizon,mae,corr_w");
  for (std::size_t h = 0; h < 3; ++h) {
    REQUIRE(std::getline(csv, line));
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    CHECK(std::stoll(field) == static_cast<std::int64_t>(h + 1));
    std::getline(row, field, ',');
    CHECK(std::stod(field) == doctest::Approx(rep.mae[h]).epsilon(1e-12));
    std::getline(row, field, ',');
    CHECK(std::stod(field) == doctest::Approx(rep.corr_w[h]).epsilon(1e-12));
  }

  // aggregate.csv rows equal the mean across the two conditions
  std::istringstream agg(vtest::slurp(td / "out" / "aggregate.csv"));
  std::getline(agg, line);
  CHECK(line == "horizon,mae,corr_w");
  const auto mae_hold = mae_per_horizon(t, t);
  for (std::size_t h = 0; h < 3; ++h) {
    REQUIRE(std::getline(agg, line));
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    std::getline(row, field, ',');
    const double want = 0.5 * (rep.mae[h] + mae_hold[h]);
    CHECK(std::stod(field) == doctest::Approx(want).epsilon(1e-9));
  }

  // svg is a plot, not a stub
  const std::string svg = vtest::slurp(td / "out" / "mae_vs_horizon.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);

  std::map<std::string, ConditionReport> empty;
  CHECK_THROWS_AS(report(empty, td / "none", false), DataError);
}

}  // TEST_SUITE
