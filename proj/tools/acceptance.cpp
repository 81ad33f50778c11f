// Acceptance harness: runs the release gate end to end and prints one
// PASS/FAIL line per criterion.
//
//   usage: acceptance [--out DIR] [criterion...]
//
// With no criterion numbers all ten run in order. Criteria 1-5 and 10 are
// property suites that finish in seconds; 6-9 train models at desk scale
// (roughly an hour in total on one core) and cache their checkpoints under
// --out, so re-runs and out-of-order subsets reuse earlier training. Delete
// the output directory to retrain from scratch. Exit code 0 iff every
// selected criterion passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "json.hpp"
#include "multipath/cli.hpp"
#include "multipath/evaluation.hpp"
#include "multipath/geometry.hpp"
#include "multipath/inference.hpp"
#include "multipath/network.hpp"
#include "multipath/synthdata.hpp"
#include "multipath/targets.hpp"
#include "multipath/trainer.hpp"

using namespace multipath;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Pinned experiment knobs and tolerances. Every numeric gate of the release
// criteria lives here, not in flags.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kTrainSeed = 1;   // trend models and their scenes
constexpr std::uint64_t kSecondSeed = 2;  // independent ensemble partner
constexpr std::uint64_t kEvalSeed = 99;   // held-out evaluation scenes

constexpr int kTrendIterations = 10000;   // criterion 6/9 training budget
// Every ablation row gets the same optimizer budget; rows with the integral
// loss cycle it across six classifier heads, so the budget must be large
// enough that a sixth of it still trains one head.
constexpr int kAblationIterations = 8000;
constexpr int kTrainImages = 400;
constexpr int kEvalImages = 100;
constexpr int kAblationEvalImages = 100;
// Proposal jitter for the trained-model experiments. Quality 1 would feed
// bitwise ground-truth boxes, collapsing every IoU-threshold labeling into
// one; 0.7 spreads proposal overlaps across the 50..95 band where the
// threshold comparisons are meaningful. The count keeps the per-image
// background pool large: score ranking only transfers to fresh boxes when
// training saw background in volume, and the trend evaluations rank against
// hundreds of background proposals per image.
constexpr double kProposalQuality = 0.7;
constexpr int kProposalCount = 400;

constexpr double kGradTol = 1e-4;         // max relative error, criterion 1
constexpr double kGradBudgetSecs = 120.0;
constexpr double kOracleApTol = 0.5;      // evaluator vs oracle, criterion 3
constexpr double kIntegralApMargin = 0.5; // criterion 6
constexpr double kTrendBudgetSecs = 7200.0;
constexpr double kProposalNoise = 0.5;    // criterion 7 monotonicity slack
constexpr double kQualityMargin = 1.0;    // quality-1@50 vs quality-0@400
constexpr double kSweepBudgetSecs = 900.0;
constexpr double kAblationNoise = 0.5;    // criterion 8
constexpr double kEnhancementNoise = 0.3; // criterion 9

std::string g_out = "acceptance-run";

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string fmt_secs(double s) {
  if (s < 120.0) return fmt("%.1fs", s);
  return fmt("%dm%02ds", static_cast<int>(s) / 60, static_cast<int>(s) % 60);
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed expectations; the first few become the FAIL detail.
struct Check {
  bool ok = true;
  std::vector<std::string> fails;
  void expect(bool cond, std::string what) {
    if (cond) return;
    ok = false;
    if (fails.size() < 4) fails.push_back(std::move(what));
  }
  std::string brief() const {
    std::string s;
    for (const auto& f : fails) s += (s.empty() ? "" : " | ") + f;
    return s;
  }
};

void note(const std::string& line) {
  std::cout << "  " << line << std::endl;  // flush: long steps follow
}

// Runs one CLI invocation in-process, echoing its output only on failure.
int run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) {
    std::string cmd = "multipath";
    for (const auto& a : args) cmd += " " + a;
    std::cout << "  command failed (exit " << code << "): " << cmd << "\n"
              << out.str() << err.str();
  }
  return code;
}

void must_run(const std::vector<std::string>& args) {
  if (run(args) != 0) {
    throw std::runtime_error("command failed: " +
                             (args.empty() ? "" : args[0]));
  }
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json_file(const std::string& path) {
  return nlohmann::json::parse(slurp(path));
}

// ---------------------------------------------------------------------------
// Deterministic random helpers (the harness keeps its own streams so the
// gate replays identically on every machine).
// ---------------------------------------------------------------------------

double unif(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * ((rng() >> 11) * 0x1.0p-53);
}

int unif_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

// Evenly spaced distinct values in (-1,1), randomly permuted: safe inputs
// for kinked ops (relu / max pools), whose finite differences break near
// ties or zero crossings.
std::vector<double> distinct_grid(std::mt19937_64& rng, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = -1.0 + (2.0 * i + 1.0) / n;
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

std::vector<double> smooth_values(std::mt19937_64& rng, int n, double lo,
                                  double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = unif(rng, lo, hi);
  return v;
}

Box random_box(std::mt19937_64& rng, double w, double h, double min_side,
               double max_side) {
  const double bw = unif(rng, min_side, max_side);
  const double bh = unif(rng, min_side, max_side);
  const double x = unif(rng, 0.0, w - bw);
  const double y = unif(rng, 0.0, h - bh);
  return Box{x, y, x + bw, y + bh};
}

// ---------------------------------------------------------------------------
// Criterion 1 — gradient integrity
// ---------------------------------------------------------------------------

struct GradStats {
  double max_err = 0.0;
  std::int64_t checked = 0;
  std::string worst;  // which op check produced max_err
  void fold(const char* name, const gradcheck::Report& r) {
    if (r.max_err > max_err) {
      max_err = r.max_err;
      worst = name;
    }
    checked += r.checked;
  }
};

void check_elementwise_ops(std::mt19937_64& rng, GradStats& st) {
  Tensor a = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1), true);
  Tensor b = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1), true);
  Tensor c = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1), true);
  Tensor s = Tensor::from({1}, {unif(rng, 0.5, 1.5)}, true);
  Tensor probe = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1));
  st.fold("elementwise", gradcheck::run({a, b, c, s}, [&] {
    Tensor mix = add_many({add(a, b), sub(a, c), scale(mul(b, c), 0.7)});
    return add(sum(mul(mix, probe)), mean(scale_by(a, s)));
  }));
}

void check_shape_ops(std::mt19937_64& rng, GradStats& st) {
  Tensor a = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1), true);
  Tensor b = Tensor::from({2, 3}, smooth_values(rng, 6, -1, 1), true);
  Tensor probe = Tensor::from({4, 3}, smooth_values(rng, 12, -1, 1));
  st.fold("concat", gradcheck::run({a, b}, [&] {
    return sum(mul(concat({a, b}, 0), probe));
  }));
  Tensor probe2 = Tensor::from({6}, smooth_values(rng, 6, -1, 1));
  st.fold("reshape", gradcheck::run({a}, [&] {
    return sum(mul(reshape(a, {6}), probe2));
  }));
}

void check_relu(std::mt19937_64& rng, GradStats& st) {
  Tensor x = Tensor::from({2, 3, 4}, distinct_grid(rng, 24), true);
  Tensor probe = Tensor::from({2, 3, 4}, smooth_values(rng, 24, -1, 1));
  st.fold("relu", gradcheck::run({x}, [&] { return sum(mul(relu(x), probe)); }));
}

void check_max_pool(std::mt19937_64& rng, GradStats& st) {
  Tensor x = Tensor::from({1, 2, 6, 6}, distinct_grid(rng, 72), true);
  Tensor probe = Tensor::from({1, 2, 3, 3}, smooth_values(rng, 18, -1, 1));
  st.fold("max_pool2d", 
      gradcheck::run({x}, [&] { return sum(mul(max_pool2d(x), probe)); }));
}

void check_conv2d(std::mt19937_64& rng, GradStats& st) {
  Tensor x = Tensor::from({1, 2, 5, 5}, smooth_values(rng, 50, -1, 1), true);
  Tensor w = Tensor::from({3, 2, 3, 3}, smooth_values(rng, 54, -0.5, 0.5), true);
  Tensor b = Tensor::from({3}, smooth_values(rng, 3, -0.5, 0.5), true);
  Tensor probe1 = Tensor::from({1, 3, 5, 5}, smooth_values(rng, 75, -1, 1));
  st.fold("conv2d_s1p1", gradcheck::run({x, w, b}, [&] {
    return sum(mul(conv2d(x, w, b, 1, 1), probe1));
  }));
  Tensor probe2 = Tensor::from({1, 3, 2, 2}, smooth_values(rng, 12, -1, 1));
  st.fold("conv2d_s2p0", gradcheck::run({x, w, b}, [&] {
    return sum(mul(conv2d(x, w, b, 2, 0), probe2));
  }));
}

void check_linear(std::mt19937_64& rng, GradStats& st) {
  Tensor x = Tensor::from({4}, smooth_values(rng, 4, -1, 1), true);
  Tensor w = Tensor::from({3, 4}, smooth_values(rng, 12, -1, 1), true);
  Tensor b = Tensor::from({3}, smooth_values(rng, 3, -1, 1), true);
  Tensor probe = Tensor::from({3}, smooth_values(rng, 3, -1, 1));
  st.fold("linear", gradcheck::run({x, w, b}, [&] {
    return sum(mul(linear(x, w, b), probe));
  }));
}

void check_softmax_nll(std::mt19937_64& rng, GradStats& st) {
  Tensor lg = Tensor::from({5}, smooth_values(rng, 5, -2, 2), true);
  const int k = unif_int(rng, 0, 4);
  st.fold("softmax_nll", gradcheck::run({lg}, [&] { return nll(softmax(lg), k); }));
  Tensor probe = Tensor::from({5}, smooth_values(rng, 5, -1, 1));
  st.fold("softmax", gradcheck::run({lg}, [&] { return sum(mul(softmax(lg), probe)); }));
}

void check_l2_normalize(std::mt19937_64& rng, GradStats& st) {
  Tensor x = Tensor::from({2, 3, 3}, smooth_values(rng, 18, 0.2, 1.0), true);
  Tensor gamma = Tensor::from({1}, {unif(rng, 0.5, 2.0)}, true);
  Tensor probe = Tensor::from({2, 3, 3}, smooth_values(rng, 18, -1, 1));
  st.fold("l2_normalize", gradcheck::run({x, gamma}, [&] {
    return sum(mul(l2_normalize_scaled(x, gamma, 1e-3), probe));
  }));
}

void check_smooth_l1(std::mt19937_64& rng, GradStats& st) {
  // Residuals placed away from the |r| == delta kink.
  const double delta = unif(rng, 0.5, 1.5);
  const double offsets[] = {-2.2, -1.5, -0.7, -0.3, 0.3, 0.7, 1.5, 2.2};
  std::vector<double> target = smooth_values(rng, 4, -1, 1);
  std::vector<double> pred(4);
  for (int i = 0; i < 4; ++i) {
    pred[i] = target[i] + offsets[unif_int(rng, 0, 7)] * delta;
  }
  Tensor p = Tensor::from({4}, pred, true);
  st.fold("smooth_l1", gradcheck::run({p}, [&] { return smooth_l1(p, target, delta); }));
}

void check_roi_pool(std::mt19937_64& rng, GradStats& st) {
  for (auto mode : {ModelConfig::Quantization::kFloorCeil,
                    ModelConfig::Quantization::kRound}) {
    Tensor map = Tensor::from({1, 2, 8, 8}, distinct_grid(rng, 128), true);
    Tensor probe = Tensor::from({2, 3, 3}, smooth_values(rng, 18, -1, 1));
    const Box region{unif(rng, 0, 3), unif(rng, 0, 3), unif(rng, 9, 15),
                     unif(rng, 9, 15)};
    st.fold("roi_pool", gradcheck::run({map}, [&] {
      return sum(mul(roi_pool(map, region, 2, 3, mode), probe));
    }));
  }
}

void check_full_graph(std::mt19937_64& rng, GradStats& st) {
  ModelConfig mc;
  mc.num_classes = 2;
  mc.image_channels = 1;
  mc.trunk_channels = {2, 2, 2, 2};
  mc.pool_size = 3;
  mc.reduce_channels = 4;
  mc.head_hidden_dim = 8;
  mc.integral_thresholds = {50, 75};
  mc.dropout = 0.0;
  Model m(mc, rng());
  // Check the gradient at a generic point, not at the initialization:
  // freshly initialized biases are exactly zero, and any conv window whose
  // incoming activations are all relu-killed then has its pre-activation
  // exactly equal to the bias — the evaluation point sits precisely on the
  // relu kink, where a central difference is invalid at every step size
  // (the analytic side correctly reports the subgradient). A small nudge on
  // every parameter moves all such coincidences to generic offsets.
  for (auto& [name, t] : m.parameters()) {
    for (auto& v : t.data()) v += unif(rng, -0.02, 0.02);
  }

  Tensor img = Tensor::from({1, 1, 32, 32}, smooth_values(rng, 32 * 32, 0, 1),
                            true);
  std::vector<GroundTruth> gts{
      {random_box(rng, 32, 32, 8, 18), 1},
      {random_box(rng, 32, 32, 8, 18), 2},
  };
  // One near-copy of a ground truth (guaranteed positive labels), one looser
  // overlap, one unrelated box.
  auto jitter = [&](const Box& b, double amp) {
    const Box j{b.x1 + unif(rng, -amp, amp), b.y1 + unif(rng, -amp, amp),
                b.x2 + unif(rng, -amp, amp), b.y2 + unif(rng, -amp, amp)};
    return clip_box(j, 32, 32).value_or(b);
  };
  std::vector<Box> props{jitter(gts[0].box, 1.0), jitter(gts[1].box, 4.0),
                         random_box(rng, 32, 32, 6, 16)};

  LossConfig lc;
  lc.thresholds = {50, 75};
  const auto labels = match_proposals(props, gts, lc.thresholds);

  std::vector<Tensor> params{img};
  for (auto& [name, t] : m.parameters()) params.push_back(t);
  // A tight step keeps the +-h windows clear of whatever relu/max-pool
  // kinks remain near (but, after the nudge above, never exactly at) the
  // evaluation point, while staying far above cancellation noise (~1e-8
  // relative at this h).
  st.fold("full_graph", gradcheck::run(params, [&] {
    const auto scores = m.forward(img, props);
    Tensor total = Tensor::scalar(0.0);
    for (const auto& s : scores) {
      total = add(total, integral_loss(s, labels[s.proposal_index], lc));
    }
    return total;
  }, 1e-7));
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  GradStats st;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    check_elementwise_ops(rng, st);
    check_shape_ops(rng, st);
    check_relu(rng, st);
    check_max_pool(rng, st);
    check_conv2d(rng, st);
    check_linear(rng, st);
    check_softmax_nll(rng, st);
    check_l2_normalize(rng, st);
    check_smooth_l1(rng, st);
    check_roi_pool(rng, st);
    check_full_graph(rng, st);
  }
  const double secs = elapsed(t0);
  Check ck;
  ck.expect(st.max_err < kGradTol,
            fmt("max relative error %.3g >= %.0e", st.max_err, kGradTol));
  ck.expect(secs < kGradBudgetSecs, fmt("runtime %s over budget", fmt_secs(secs).c_str()));
  const std::string detail =
      fmt("max rel err %.2e (%s) over %lld partials, 20 seeds, %s", st.max_err,
          st.worst.c_str(), static_cast<long long>(st.checked),
          fmt_secs(secs).c_str());
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 2 — label-assignment invariants
// ---------------------------------------------------------------------------

Outcome criterion2() {
  Check ck;
  std::mt19937_64 rng(2024);
  const std::vector<int> all_thr{50, 55, 60, 65, 70, 75, 80, 85, 90, 95};
  for (int trial = 0; trial < 1000 && ck.ok; ++trial) {
    const double w = unif(rng, 40, 120), h = unif(rng, 40, 120);
    std::vector<GroundTruth> gts;
    const int ngt = unif_int(rng, 0, 6);
    for (int i = 0; i < ngt; ++i) {
      gts.push_back({random_box(rng, w, h, 6, 40), unif_int(rng, 1, 3)});
    }
    std::vector<Box> props;
    const int np = unif_int(rng, 1, 12);
    for (int i = 0; i < np; ++i) {
      if (!gts.empty() && unif(rng, 0, 1) < 0.6) {
        // Jittered copy so interesting IoU bands actually occur.
        const Box& g = gts[static_cast<std::size_t>(rng() % gts.size())].box;
        const double amp = unif(rng, 0.0, 0.5) * std::min(g.width(), g.height());
        const Box j{g.x1 + unif(rng, -amp, amp), g.y1 + unif(rng, -amp, amp),
                    g.x2 + unif(rng, -amp, amp), g.y2 + unif(rng, -amp, amp)};
        if (auto c = clip_box(j, w, h); c && c->valid()) {
          props.push_back(*c);
          continue;
        }
      }
      props.push_back(random_box(rng, w, h, 5, 50));
    }
    // Random ascending threshold list.
    std::vector<int> thr;
    for (int t : all_thr) {
      if (unif(rng, 0, 1) < 0.4) thr.push_back(t);
    }
    if (thr.empty()) thr.push_back(50);

    const auto labels = match_proposals(props, gts, thr);
    for (std::size_t i = 0; i < props.size(); ++i) {
      // Independent matcher: max IoU, first index on ties.
      double best = 0.0;
      int cls = 0, idx = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = iou(props[i], gts[g].box);
        if (v > best) { best = v; cls = gts[g].cls; idx = static_cast<int>(g); }
      }
      const auto& lb = labels[i];
      ck.expect(lb.best_iou == best, fmt("trial %d: best_iou mismatch", trial));
      ck.expect((idx < 0 && !lb.best_gt_index) ||
                    (lb.best_gt_index && *lb.best_gt_index == idx),
                fmt("trial %d: matched index mismatch", trial));
      bool seen_bg = false;
      for (std::size_t u = 0; u < thr.size(); ++u) {
        const int want = best >= thr[u] ? cls : 0;
        ck.expect(lb.k_u[u] == want,
                  fmt("trial %d: k_u[%zu] = %d, want %d", trial, u, lb.k_u[u],
                      want));
        if (lb.k_u[u] == 0) seen_bg = true;
        ck.expect(!(seen_bg && lb.k_u[u] != 0),
                  fmt("trial %d: positive label after background", trial));
      }
      // n = 1 must reproduce the single-threshold (u = 50) rule exactly.
      const auto single = match_proposals({props[i]}, gts, {50});
      const int frcnn = best >= 50.0 ? cls : 0;
      ck.expect(single[0].k_u.size() == 1 && single[0].k_u[0] == frcnn,
                fmt("trial %d: n=1 label != max-IoU rule", trial));
      if (frcnn > 0) {
        const RegressionTarget want =
            encode_bbox(props[i], gts[static_cast<std::size_t>(idx)].box);
        ck.expect(single[0].t_star && single[0].t_star->tx == want.tx &&
                      single[0].t_star->ty == want.ty &&
                      single[0].t_star->tw == want.tw &&
                      single[0].t_star->th == want.th,
                  fmt("trial %d: n=1 regression target mismatch", trial));
      }
    }
  }
  return {ck.ok, ck.ok ? "1000 random configurations, prefix monotonicity + "
                         "n=1 equals single-threshold labeling"
                       : ck.brief()};
}

// ---------------------------------------------------------------------------
// Criterion 3 — evaluator oracle equivalence
// ---------------------------------------------------------------------------

Outcome criterion3() {
  Check ck;
  std::mt19937_64 rng(33);
  double max_gap = 0.0;
  for (int scene = 0; scene < 100; ++scene) {
    DetectionsByImage dets;
    GroundTruthByImage gts;
    const int images = unif_int(rng, 1, 4);
    bool any_gt = false;
    for (int id = 0; id < images; ++id) {
      auto& gt = gts[id];
      const int ngt = unif_int(rng, id == images - 1 && !any_gt ? 1 : 0, 6);
      for (int i = 0; i < ngt; ++i) {
        gt.push_back({random_box(rng, 100, 100, 8, 40), unif_int(rng, 1, 3)});
      }
      any_gt = any_gt || !gt.empty();
      auto& dv = dets[id];
      const int nd = unif_int(rng, 0, 12);
      for (int i = 0; i < nd; ++i) {
        Detection d;
        d.cls = unif_int(rng, 1, 3);
        d.score = unif(rng, 0.05, 1.0);
        if (!gt.empty() && unif(rng, 0, 1) < 0.6) {
          const Box& g = gt[static_cast<std::size_t>(rng() % gt.size())].box;
          const double amp = unif(rng, 0.0, 0.4) * g.width();
          d.box = Box{g.x1 + unif(rng, -amp, amp), g.y1 + unif(rng, -amp, amp),
                      g.x2 + unif(rng, -amp, amp), g.y2 + unif(rng, -amp, amp)};
          if (!d.box.valid()) d.box = g;
        } else {
          d.box = random_box(rng, 100, 100, 8, 40);
        }
        dv.push_back(d);
      }
    }
    const EvalResult fast = evaluate(dets, gts);
    const EvalResult slow = oracle_evaluate(dets, gts);
    const double gap = std::abs(fast.ap - slow.ap);
    max_gap = std::max(max_gap, gap);
    ck.expect(gap <= kOracleApTol,
              fmt("scene %d: |evaluate - oracle| = %.3f AP", scene, gap));
  }

  // Single-detection analytic cases; these are exact, not approximate.
  const Box g{0, 0, 10, 10};
  auto single = [&](const Box& det_box) {
    DetectionsByImage d{{0, {Detection{det_box, 1, 0.9}}}};
    GroundTruthByImage t{{0, {GroundTruth{g, 1}}}};
    return evaluate(d, t).ap;
  };
  const double perfect = single(Box{0, 0, 10, 10});       // IoU 100
  const double partial = single(Box{0, 0, 10, 6.2});      // IoU 62 -> 3/10
  const double miss = single(Box{0, 0, 10, 4});           // IoU 40 -> 0/10
  ck.expect(perfect == 100.0, fmt("analytic AP=100 case got %.6f", perfect));
  ck.expect(partial == 30.0, fmt("analytic AP=30 case got %.6f", partial));
  ck.expect(miss == 0.0, fmt("analytic AP=0 case got %.6f", miss));

  const std::string detail =
      fmt("100 scenes, max |evaluate-oracle| gap %.3f AP; analytic "
          "100/30/0 exact", max_gap);
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 4 — single-threshold reduction is the plain two-term loss
// ---------------------------------------------------------------------------

Outcome criterion4() {
  Check ck;
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = unif_int(rng, 1, 3);  // foreground classes
    std::vector<double> p(classes + 1);
    double norm = 0.0;
    for (auto& v : p) { v = std::exp(unif(rng, -3, 3)); norm += v; }
    for (auto& v : p) v /= norm;
    const int k = unif_int(rng, 0, classes);
    if (trial % 7 == 0) p[k] = 1e-15;  // exercise the probability clamp

    std::vector<double> t = smooth_values(rng, 4, -1.5, 1.5);
    const RegressionTarget ts{unif(rng, -1, 1), unif(rng, -1, 1),
                              unif(rng, -1, 1), unif(rng, -1, 1)};

    LossConfig cfg;
    cfg.thresholds = {50};
    cfg.lambda = (trial % 3 == 0) ? 1.0 : unif(rng, 0.25, 3.0);
    cfg.smooth_l1_delta = (trial % 2 == 0) ? 1.0 : unif(rng, 0.5, 2.0);

    HeadScores scores;
    scores.p_u.push_back(Tensor::from({classes + 1}, p));
    scores.t = Tensor::from({4}, t);
    TargetLabels labels;
    labels.k_u = {k};
    if (k >= 1 || trial % 5 == 0) labels.t_star = ts;

    const double got = integral_loss(scores, labels, cfg).item();

    // Reference: the two-term objective written out directly — negative log
    // probability of the labeled class plus, for foreground, the weighted
    // Huber distance between predicted and target deltas.
    const double cls = -std::log(std::max(p[k], 1e-12));
    double expected = cls;
    if (k >= 1) {
      const double tgt[4] = {ts.tx, ts.ty, ts.tw, ts.th};
      double loc = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double r = t[i] - tgt[i];
        const double a = std::abs(r);
        const double delta = cfg.smooth_l1_delta;
        loc += a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
      }
      expected = cls + loc * cfg.lambda;
    }
    ck.expect(got == expected,
              fmt("trial %d: integral %.17g != direct %.17g", trial, got,
                  expected));
  }
  return {ck.ok, ck.ok ? "100 random inputs, thresholds={50} bitwise equal "
                         "to the two-term objective"
                       : ck.brief()};
}

// ---------------------------------------------------------------------------
// Criterion 5 — NMS properties
// ---------------------------------------------------------------------------

bool same_detection(const Detection& a, const Detection& b) {
  return a.cls == b.cls && a.score == b.score && a.box.x1 == b.box.x1 &&
         a.box.y1 == b.box.y1 && a.box.x2 == b.box.x2 && a.box.y2 == b.box.y2;
}

Outcome criterion5() {
  Check ck;
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 1000 && ck.ok; ++trial) {
    const int n = unif_int(rng, 0, 40);
    std::vector<Detection> dets;
    dets.reserve(n);
    for (int i = 0; i < n; ++i) {
      Detection d;
      d.box = random_box(rng, 100, 100, 5, 50);
      d.cls = unif_int(rng, 1, 3);
      // Mix fresh scores with repeats so tie-breaking is exercised.
      d.score = (trial % 4 == 0) ? unif_int(rng, 1, 4) * 0.25
                                 : unif(rng, 0.0, 1.0);
      dets.push_back(d);
    }
    const double thr = unif(rng, 5, 80);
    const auto kept = nms(dets, thr);

    ck.expect(kept.size() <= dets.size(), fmt("trial %d: output grew", trial));
    for (const auto& k : kept) {
      const bool member =
          std::any_of(dets.begin(), dets.end(),
                      [&](const Detection& d) { return same_detection(d, k); });
      ck.expect(member, fmt("trial %d: output not a subset", trial));
    }
    for (std::size_t i = 0; i < kept.size(); ++i) {
      ck.expect(i == 0 || kept[i - 1].score >= kept[i].score,
                fmt("trial %d: output not score-sorted", trial));
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (kept[i].cls != kept[j].cls) continue;
        ck.expect(iou(kept[i].box, kept[j].box) <= thr,
                  fmt("trial %d: same-class pair above threshold", trial));
      }
    }
    const auto again = nms(kept, thr);
    bool idem = again.size() == kept.size();
    for (std::size_t i = 0; idem && i < kept.size(); ++i) {
      idem = same_detection(again[i], kept[i]);
    }
    ck.expect(idem, fmt("trial %d: not idempotent", trial));
  }
  return {ck.ok, ck.ok ? "1000 random sets: subset, separation, idempotence"
                       : ck.brief()};
}

// ---------------------------------------------------------------------------
// Desk-scale experiment plumbing for criteria 6-9
// ---------------------------------------------------------------------------

RunConfig trend_config(const std::vector<int>& thresholds, std::uint64_t seed,
                       const std::string& out_dir) {
  RunConfig cfg;
  cfg.apply_seed(seed);
  cfg.out = out_dir;
  cfg.model.dropout = 0.25;
  cfg.model.integral_thresholds = thresholds;
  cfg.loss.thresholds = thresholds;
  cfg.train.iterations = kTrendIterations;
  cfg.train.images_per_batch = 2;
  cfg.train.proposals_per_image = 32;
  cfg.train.lr_initial = 2e-3;
  cfg.train.lr_final = 2e-4;
  cfg.proposals.quality = kProposalQuality;
  cfg.proposals.count = kProposalCount;
  cfg.inference.proposals_per_image = 400;
  cfg.gen_images = kTrainImages;
  cfg.eval_images = kEvalImages;
  return cfg;
}

std::string write_config(const RunConfig& cfg, const std::string& name) {
  const std::string dir = g_out + "/cfg";
  fs::create_directories(dir);
  const std::string path = dir + "/" + name + ".json";
  std::ofstream os(path);
  os << cfg.to_json().dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write " + path);
  return path;
}

struct TrainedModel {
  std::string name;
  std::string config_path;
  std::string checkpoint;
  bool cached = false;
};

TrainedModel ensure_trend_model(const std::string& name,
                                const std::vector<int>& thresholds,
                                std::uint64_t seed) {
  const std::string dir = g_out + "/train_" + name;
  TrainedModel m{name, write_config(trend_config(thresholds, seed, dir), name),
                 dir + "/model.ckpt", false};
  if (fs::exists(m.checkpoint)) {
    m.cached = true;
    note(fmt("reusing trained model %s", m.checkpoint.c_str()));
    return m;
  }
  note(fmt("training %s (%d iterations)...", name.c_str(), kTrendIterations));
  const auto t0 = Clock::now();
  must_run({"train", "--config", m.config_path});
  note(fmt("trained %s in %s", name.c_str(), fmt_secs(elapsed(t0)).c_str()));
  return m;
}

// Held-out scenes shared by every trained-model criterion.
std::string ensure_evalset() {
  const std::string dir = g_out + "/evalset";
  const std::string ds = dir + "/dataset.json";
  if (!fs::exists(ds)) {
    RunConfig cfg = trend_config({50, 55, 60, 65, 70, 75}, kEvalSeed, dir);
    cfg.gen_images = kEvalImages;
    must_run({"gen", "--config", write_config(cfg, "evalset")});
  }
  return ds;
}

struct EvalNumbers {
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  std::map<int, double> curve;  // threshold -> AP
  double range() const {
    double lo = 1e9, hi = -1e9;
    for (const auto& [t, v] : curve) { lo = std::min(lo, v); hi = std::max(hi, v); }
    return hi - lo;
  }
};

EvalNumbers run_eval(const TrainedModel& m, const std::string& eval_ds,
                     const std::string& tag,
                     std::vector<std::string> extra = {}) {
  const std::string dir = g_out + "/" + tag;
  std::vector<std::string> args{"eval",         "--config", m.config_path,
                                "--checkpoint", m.checkpoint, "--dataset",
                                eval_ds,        "--out",    dir};
  args.insert(args.end(), extra.begin(), extra.end());
  must_run(args);

  EvalNumbers r;
  const auto j = read_json_file(dir + "/eval.json");
  r.ap = j.at("ap").get<double>();
  r.ap50 = j.at("ap50").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  std::ifstream cs(dir + "/ap_thresholds.csv");
  for (const auto& [thr, ap] : read_ap_csv(cs)) r.curve[thr] = ap;
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 6 — integral-loss trend
// ---------------------------------------------------------------------------

Outcome criterion6() {
  const auto t0 = Clock::now();
  const std::string eval_ds = ensure_evalset();
  const TrainedModel u50 = ensure_trend_model("u50", {50}, kTrainSeed);
  const TrainedModel u70 = ensure_trend_model("u70", {70}, kTrainSeed);
  const TrainedModel integral =
      ensure_trend_model("integral", {50, 55, 60, 65, 70, 75}, kTrainSeed);
  const bool cached = u50.cached && u70.cached && integral.cached;

  const EvalNumbers e50 = run_eval(u50, eval_ds, "c6_eval_u50");
  const EvalNumbers e70 = run_eval(u70, eval_ds, "c6_eval_u70");
  const EvalNumbers ein = run_eval(integral, eval_ds, "c6_eval_integral");
  const double secs = elapsed(t0);

  Check ck;
  ck.expect(e70.curve.at(70) >= e50.curve.at(70),
            fmt("AP70: u70 %.2f < u50 %.2f", e70.curve.at(70),
                e50.curve.at(70)));
  ck.expect(ein.ap >= std::max(e50.ap, e70.ap) - kIntegralApMargin,
            fmt("integral AP %.2f below singles (%.2f/%.2f) - %.1f", ein.ap,
                e50.ap, e70.ap, kIntegralApMargin));
  ck.expect(ein.range() < e50.range() && ein.range() < e70.range(),
            fmt("integral curve range %.2f not flattest (u50 %.2f, u70 %.2f)",
                ein.range(), e50.range(), e70.range()));
  ck.expect(cached || secs < kTrendBudgetSecs,
            fmt("runtime %s over budget", fmt_secs(secs).c_str()));

  const std::string detail = fmt(
      "AP70 u50 %.1f / u70 %.1f | AP u50 %.1f u70 %.1f integral %.1f | "
      "curve range u50 %.1f u70 %.1f integral %.1f | %s%s",
      e50.curve.at(70), e70.curve.at(70), e50.ap, e70.ap, ein.ap, e50.range(),
      e70.range(), ein.range(), fmt_secs(secs).c_str(),
      cached ? " (cached models)" : "");
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 7 — proposal count/quality sweep with a fixed model
// ---------------------------------------------------------------------------

Outcome criterion7() {
  const std::string eval_ds = ensure_evalset();
  const TrainedModel model =
      ensure_trend_model("integral", {50, 55, 60, 65, 70, 75}, kTrainSeed);

  const auto t0 = Clock::now();  // the budget covers the sweep itself
  const std::vector<int> counts{10, 50, 200, 400};
  std::vector<double> ap_q1;
  for (int c : counts) {
    note(fmt("sweep: quality 1, %d proposals per image", c));
    ap_q1.push_back(run_eval(model, eval_ds, fmt("c7_q1_c%d", c),
                             {"--proposals", std::to_string(c), "--quality",
                              "1"})
                        .ap);
  }
  note("sweep: quality 0, 400 proposals per image");
  const double ap_q0 =
      run_eval(model, eval_ds, "c7_q0_c400", {"--proposals", "400",
                                              "--quality", "0"})
          .ap;
  const double secs = elapsed(t0);

  Check ck;
  for (std::size_t i = 1; i < counts.size(); ++i) {
    ck.expect(ap_q1[i] >= ap_q1[i - 1] - kProposalNoise,
              fmt("AP dropped %d->%d proposals: %.2f -> %.2f", counts[i - 1],
                  counts[i], ap_q1[i - 1], ap_q1[i]));
  }
  ck.expect(ap_q1[1] >= ap_q0 - kQualityMargin,
            fmt("AP(q1,50)=%.2f < AP(q0,400)=%.2f - %.1f", ap_q1[1], ap_q0,
                kQualityMargin));
  ck.expect(secs < kSweepBudgetSecs,
            fmt("sweep runtime %s over budget", fmt_secs(secs).c_str()));

  const std::string detail =
      fmt("AP@q1 {10:%.1f, 50:%.1f, 200:%.1f, 400:%.1f} | AP(q0,400) %.1f | "
          "sweep %s",
          ap_q1[0], ap_q1[1], ap_q1[2], ap_q1[3], ap_q0,
          fmt_secs(secs).c_str());
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 8 — ablation direction
// ---------------------------------------------------------------------------

Outcome criterion8() {
  const std::string dir = g_out + "/c8";
  RunConfig cfg =
      trend_config({50, 55, 60, 65, 70, 75}, kTrainSeed, dir);
  cfg.train.iterations = kAblationIterations;
  cfg.eval_images = kAblationEvalImages;
  const std::string cfg_path = write_config(cfg, "ablate");

  const std::string csv_path = dir + "/ablation.csv";
  if (fs::exists(csv_path)) {
    note(fmt("reusing ablation table %s", csv_path.c_str()));
  } else {
    note(fmt("running ablation grid (6 rows x %d iterations)...",
             kAblationIterations));
    const auto t0 = Clock::now();
    must_run({"ablate", "--config", cfg_path});
    note(fmt("ablation finished in %s", fmt_secs(elapsed(t0)).c_str()));
  }

  struct Row { int integral, foveal, skip; double ap; };
  std::vector<Row> rows;
  std::ifstream is(csv_path);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    Row r;
    double ap50, ap75;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%lf", &r.integral,
                    &r.foveal, &r.skip, &r.ap, &ap50, &ap75) == 6) {
      rows.push_back(r);
    }
  }

  Check ck;
  ck.expect(rows.size() == 6, fmt("expected 6 rows, parsed %zu", rows.size()));
  auto find = [&](int i, int f, int s) -> const Row* {
    for (const auto& r : rows) {
      if (r.integral == i && r.foveal == f && r.skip == s) return &r;
    }
    return nullptr;
  };
  const Row* base = find(0, 0, 0);
  const Row* all = find(1, 1, 1);
  const Row* only_integral = find(1, 0, 0);
  const Row* only_foveal = find(0, 1, 0);
  ck.expect(base && all && only_integral && only_foveal, "grid rows missing");
  if (ck.ok) {
    ck.expect(all->ap >= base->ap, fmt("all-on AP %.2f < baseline %.2f",
                                       all->ap, base->ap));
    ck.expect(only_integral->ap >= base->ap - kAblationNoise,
              fmt("integral-only AP %.2f under baseline %.2f - %.1f",
                  only_integral->ap, base->ap, kAblationNoise));
    ck.expect(only_foveal->ap >= base->ap - kAblationNoise,
              fmt("foveal-only AP %.2f under baseline %.2f - %.1f",
                  only_foveal->ap, base->ap, kAblationNoise));
  }
  std::string table;
  for (const auto& r : rows) {
    table += fmt("%s%d%d%d:%.1f", table.empty() ? "" : " ", r.integral,
                 r.foveal, r.skip, r.ap);
  }
  const std::string detail = "rows(ifs:AP) " + table;
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 9 — augmentation and ensembling are no-worse
// ---------------------------------------------------------------------------

Outcome criterion9() {
  const std::string eval_ds = ensure_evalset();
  const TrainedModel first =
      ensure_trend_model("integral", {50, 55, 60, 65, 70, 75}, kTrainSeed);
  const TrainedModel second =
      ensure_trend_model("second", {50, 55, 60, 65, 70, 75}, kSecondSeed);

  const EvalNumbers base = run_eval(first, eval_ds, "c9_base");
  const EvalNumbers hflip = run_eval(first, eval_ds, "c9_hflip", {"--hflip"});
  const EvalNumbers fmp = run_eval(first, eval_ds, "c9_fmp", {"--fmp"});
  const EvalNumbers solo2 = run_eval(second, eval_ds, "c9_second");
  const EvalNumbers ens = run_eval(first, eval_ds, "c9_ensemble",
                                   {"--ensemble", second.checkpoint});
  const double best_single = std::max(base.ap, solo2.ap);

  Check ck;
  ck.expect(hflip.ap >= base.ap - kEnhancementNoise,
            fmt("hflip AP %.2f under base %.2f - %.1f", hflip.ap, base.ap,
                kEnhancementNoise));
  ck.expect(fmp.ap >= base.ap - kEnhancementNoise,
            fmt("fmp AP %.2f under base %.2f - %.1f", fmp.ap, base.ap,
                kEnhancementNoise));
  ck.expect(ens.ap >= best_single - kEnhancementNoise,
            fmt("ensemble AP %.2f under best single %.2f - %.1f", ens.ap,
                best_single, kEnhancementNoise));

  const std::string detail = fmt(
      "AP base %.1f hflip %.1f fmp %.1f | singles %.1f/%.1f ensemble %.1f",
      base.ap, hflip.ap, fmp.ap, base.ap, solo2.ap, ens.ap);
  return {ck.ok, ck.ok ? detail : ck.brief() + " | " + detail};
}

// ---------------------------------------------------------------------------
// Criterion 10 — byte-level determinism of gen and train
// ---------------------------------------------------------------------------

Outcome criterion10() {
  RunConfig cfg = trend_config({50, 55, 60, 65, 70, 75}, kTrainSeed,
                               g_out + "/c10_a");
  cfg.train.iterations = 60;
  cfg.gen_images = 24;
  const std::string cfg_path = write_config(cfg, "determinism");

  // Two fresh gen runs, then a train run on top of each generated dataset.
  for (const char* which : {"a", "b"}) {
    const std::string dir = g_out + "/c10_" + which;
    fs::remove_all(dir);
    must_run({"gen", "--config", cfg_path, "--out", dir});
  }
  for (const char* which : {"a", "b"}) {
    must_run({"train", "--config", cfg_path, "--out", g_out + "/c10_" + which});
  }

  Check ck;
  ck.expect(slurp(g_out + "/c10_a/dataset.json") ==
                slurp(g_out + "/c10_b/dataset.json"),
            "dataset.json differs between identical gen runs");
  ck.expect(slurp(g_out + "/c10_a/proposals.jsonl") ==
                slurp(g_out + "/c10_b/proposals.jsonl"),
            "proposals.jsonl differs between identical gen runs");
  ck.expect(slurp(g_out + "/c10_a/loss.csv") == slurp(g_out + "/c10_b/loss.csv"),
            "loss.csv differs between identical train runs");
  return {ck.ok, ck.ok ? "gen and train byte-identical across repeated runs"
                       : ck.brief()};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else if (arg == "--help" || arg == "-h") {
      std::cout << "usage: acceptance [--out DIR] [criterion...]\n";
      return 0;
    } else if (!arg.empty() &&
               std::all_of(arg.begin(), arg.end(),
                           [](char c) { return c >= '0' && c <= '9'; })) {
      const int n = std::stoi(arg);
      if (n < 1 || n > 10) {
        std::cerr << "no criterion " << n << " (valid: 1..10)\n";
        return 2;
      }
      which.push_back(n);
    } else {
      std::cerr << "unknown argument: " << arg << "\n";
      return 2;
    }
  }
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  fs::create_directories(g_out);

  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8},
      {9, criterion9}, {10, criterion10}};

  int passed = 0;
  for (int n : which) {
    Outcome o;
    try {
      o = criteria.at(n)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL")
              << " - " << o.detail << std::endl;
    passed += o.pass ? 1 : 0;
  }
  std::cout << passed << "/" << which.size() << " criteria passed"
            << std::endl;
  return passed == static_cast<int>(which.size()) ? 0 : 1;
}
