#include <algorithm>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "multipath/targets.hpp"

using namespace multipath;

namespace {

const std::vector<int> kSixHeads = {50, 55, 60, 65, 70, 75};

Box random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> coord(0.0, extent);
  std::uniform_real_distribution<double> size(2.0, extent / 2);
  Box b;
  b.x1 = coord(rng);
  b.y1 = coord(rng);
  b.x2 = b.x1 + size(rng);
  b.y2 = b.y1 + size(rng);
  return b;
}

}  // namespace

TEST_CASE("match_proposals labels by threshold prefix") {
  // inter 60, union 100 -> IoU exactly 60 against a class-3 object.
  const Box gt{0, 0, 10, 10};
  const Box prop{0, 0, 10, 6};
  const auto labels = match_proposals({prop}, {{gt, 3}}, kSixHeads);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].best_iou == doctest::Approx(60.0));
  REQUIRE(labels[0].best_gt_index.has_value());
  CHECK(*labels[0].best_gt_index == 0);
  CHECK(labels[0].k_u == std::vector<int>{3, 3, 3, 0, 0, 0});
  REQUIRE(labels[0].t_star.has_value());
  const auto direct = encode_bbox(prop, gt);
  CHECK(labels[0].t_star->tx == direct.tx);
  CHECK(labels[0].t_star->ty == direct.ty);
  CHECK(labels[0].t_star->tw == direct.tw);
  CHECK(labels[0].t_star->th == direct.th);
}

TEST_CASE("identity match is positive everywhere with zero target") {
  const Box b{5, 7, 20, 31};
  const auto labels = match_proposals({b}, {{b, 2}}, kSixHeads);
  CHECK(labels[0].best_iou == doctest::Approx(100.0));
  CHECK(labels[0].k_u == std::vector<int>{2, 2, 2, 2, 2, 2});
  REQUIRE(labels[0].t_star.has_value());
  CHECK(labels[0].t_star->tx == doctest::Approx(0.0));
  CHECK(labels[0].t_star->ty == doctest::Approx(0.0));
  CHECK(labels[0].t_star->tw == doctest::Approx(0.0));
  CHECK(labels[0].t_star->th == doctest::Approx(0.0));
}

TEST_CASE("IoU just below the minimum threshold is background") {
  const Box gt{0, 0, 10, 10};
  const Box prop{0, 0, 10, 4.99};  // IoU 49.9
  const auto labels = match_proposals({prop}, {{gt, 1}}, kSixHeads);
  CHECK(labels[0].best_iou == doctest::Approx(49.9));
  CHECK(labels[0].k_u == std::vector<int>(6, 0));
  CHECK_FALSE(labels[0].t_star.has_value());
  CHECK(labels[0].best_gt_index.has_value());  // matched, just not positive
}

TEST_CASE("empty ground truth gives all-background labels") {
  const auto labels =
      match_proposals({Box{0, 0, 4, 4}, Box{1, 1, 9, 9}}, {}, kSixHeads);
  for (const auto& tl : labels) {
    CHECK(tl.best_iou == 0.0);
    CHECK_FALSE(tl.best_gt_index.has_value());
    CHECK(tl.k_u == std::vector<int>(6, 0));
    CHECK_FALSE(tl.t_star.has_value());
  }
}

TEST_CASE("max-IoU ties go to the lowest ground-truth index") {
  const Box b{0, 0, 8, 8};
  const auto labels = match_proposals({b}, {{b, 2}, {b, 3}}, kSixHeads);
  REQUIRE(labels[0].best_gt_index.has_value());
  CHECK(*labels[0].best_gt_index == 0);
  CHECK(labels[0].k_u.front() == 2);
}

TEST_CASE("thresholds must strictly increase") {
  CHECK_THROWS_AS(match_proposals({}, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(match_proposals({}, {}, {50, 50}), std::invalid_argument);
  CHECK_THROWS_AS(match_proposals({}, {}, {60, 50}), std::invalid_argument);
}

TEST_CASE("monotonicity and single-threshold equivalence on random scenes") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> n_props(1, 12);
  std::uniform_int_distribution<int> n_gts(0, 5);
  std::uniform_int_distribution<int> cls(1, 4);
  for (int scene = 0; scene < 300; ++scene) {
    std::vector<Box> props(n_props(rng));
    for (auto& b : props) b = random_box(rng, 40.0);
    std::vector<GroundTruth> gts(n_gts(rng));
    for (auto& g : gts) g = {random_box(rng, 40.0), cls(rng)};

    const auto labels = match_proposals(props, gts, kSixHeads);
    const auto single = match_proposals(props, gts, {50});
    for (std::size_t i = 0; i < props.size(); ++i) {
      // Oracle: brute-force best IoU over ground truths.
      double best = 0.0;
      int best_cls = 0;
      for (const auto& g : gts) {
        const double v = iou(props[i], g.box);
        if (v > best) {
          best = v;
          best_cls = g.cls;
        }
      }
      CHECK(labels[i].best_iou == doctest::Approx(best));
      for (std::size_t u = 0; u < kSixHeads.size(); ++u) {
        const bool positive = labels[i].best_iou >= kSixHeads[u];
        CHECK((labels[i].k_u[u] > 0) == positive);
        if (positive) CHECK(labels[i].k_u[u] == best_cls);
        if (u > 0 && labels[i].k_u[u] > 0) {
          CHECK(labels[i].k_u[u - 1] == labels[i].k_u[u]);
        }
      }
      // n = 1 regime reproduces plain IoU-50 labeling exactly.
      const int plain = best >= 50.0 ? best_cls : 0;
      CHECK(single[i].k_u.size() == 1);
      CHECK(single[i].k_u[0] == plain);
      CHECK(single[i].t_star.has_value() == labels[i].t_star.has_value());
    }
  }
}

namespace {

// Labels with `pos` proposals at IoU `level` and `neg` at IoU 10.
std::vector<TargetLabels> synthetic_labels(int pos, int neg, double level) {
  std::vector<TargetLabels> labels(pos + neg);
  for (int i = 0; i < pos + neg; ++i) {
    labels[i].best_iou = i < pos ? level : 10.0;
    labels[i].k_u.assign(kSixHeads.size(), 0);
  }
  return labels;
}

}  // namespace

TEST_CASE("plan keeps the configured positive fraction") {
  const auto labels = synthetic_labels(30, 100, 90.0);
  std::mt19937_64 rng(3);
  const auto plan =
      plan_minibatch(labels, kSixHeads, 0, 64, 0.25, rng);
  CHECK(plan.head_index == 0);
  CHECK(plan.positive_count == 16);
  CHECK(plan.negative_count == 48);
  REQUIRE(plan.proposal_indices.size() == 64);
  for (int i = 0; i < plan.positive_count; ++i) {
    CHECK(labels[plan.proposal_indices[i]].best_iou >= 50.0);
  }
  for (std::size_t i = plan.positive_count; i < plan.proposal_indices.size();
       ++i) {
    CHECK(labels[plan.proposal_indices[i]].best_iou < 50.0);
  }
  // Ample pools: no index repeats.
  auto sorted = plan.proposal_indices;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("positives are head-specific") {
  // IoU 62: positive for u in {50,55,60}, negative for {65,70,75}.
  const auto labels = synthetic_labels(20, 100, 62.0);
  std::mt19937_64 rng(4);
  const auto low = plan_minibatch(labels, kSixHeads, 2, 16, 0.25, rng);
  CHECK(low.positive_count == 4);
  int warnings = 0;
  const auto high =
      plan_minibatch(labels, kSixHeads, 3, 16, 0.25, rng, &warnings);
  CHECK(high.positive_count == 0);
  CHECK(high.negative_count == 16);
  CHECK(warnings == 1);
  // For u=65 the IoU-62 proposals count as negatives and may be sampled.
  for (int idx : high.proposal_indices) CHECK(labels[idx].best_iou < 65.0);
}

TEST_CASE("scarce positives are sampled with replacement") {
  const auto labels = synthetic_labels(3, 100, 80.0);
  std::mt19937_64 rng(5);
  const auto plan = plan_minibatch(labels, kSixHeads, 0, 64, 0.25, rng);
  CHECK(plan.positive_count == 16);
  for (int i = 0; i < plan.positive_count; ++i) {
    CHECK(plan.proposal_indices[i] < 3);
  }
}

TEST_CASE("all-background input yields a warned all-negative plan") {
  const auto labels = synthetic_labels(0, 200, 0.0);
  std::mt19937_64 rng(6);
  int warnings = 0;
  const auto plan =
      plan_minibatch(labels, kSixHeads, 0, 64, 0.25, rng, &warnings);
  CHECK(plan.positive_count == 0);
  CHECK(plan.negative_count == 64);
  CHECK(warnings == 1);
}

TEST_CASE("plan validation rejects bad arguments") {
  const auto labels = synthetic_labels(4, 4, 90.0);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(plan_minibatch(labels, kSixHeads, -1, 64, 0.25, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(plan_minibatch(labels, kSixHeads, 6, 64, 0.25, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(plan_minibatch(labels, kSixHeads, 0, 1, 0.25, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(plan_minibatch(labels, kSixHeads, 0, 64, 0.0, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(plan_minibatch(labels, kSixHeads, 0, 64, 1.0, rng),
                  std::invalid_argument);
}

TEST_CASE("scheduler cycles heads in threshold order") {
  const auto labels = synthetic_labels(30, 100, 90.0);
  MinibatchScheduler sched(kSixHeads, 16, 0.25);
  std::mt19937_64 rng(8);
  std::vector<int> seen;
  for (int i = 0; i < 8; ++i) seen.push_back(sched.next(labels, rng).head_index);
  CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5, 0, 1});
  CHECK(sched.cursor() == 2);
  CHECK(sched.warnings() == 0);
}

TEST_CASE("scheduler resume reproduces the tail of a run") {
  const auto labels = synthetic_labels(10, 60, 70.0);
  MinibatchScheduler full(kSixHeads, 16, 0.25);
  std::mt19937_64 rng_a(11);
  for (int i = 0; i < 5; ++i) full.next(labels, rng_a);
  const auto rng_state = rng_a;  // checkpointable RNG state
  const int cursor = full.cursor();
  const auto want = full.next(labels, rng_a);

  MinibatchScheduler resumed(kSixHeads, 16, 0.25);
  resumed.set_cursor(cursor);
  auto rng_b = rng_state;
  const auto got = resumed.next(labels, rng_b);
  CHECK(got.head_index == want.head_index);
  CHECK(got.proposal_indices == want.proposal_indices);

  CHECK_THROWS_AS(resumed.set_cursor(6), std::invalid_argument);
  CHECK_THROWS_AS(resumed.set_cursor(-1), std::invalid_argument);
}

TEST_CASE("plans are reproducible per seed") {
  const auto labels = synthetic_labels(12, 80, 75.0);
  for (unsigned seed : {1u, 2u, 3u}) {
    std::mt19937_64 a(seed), b(seed);
    for (int head = 0; head < 6; ++head) {
      const auto p = plan_minibatch(labels, kSixHeads, head, 32, 0.25, a);
      const auto q = plan_minibatch(labels, kSixHeads, head, 32, 0.25, b);
      CHECK(p.proposal_indices == q.proposal_indices);
    }
  }
}
