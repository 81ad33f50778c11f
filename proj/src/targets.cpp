#include "multipath/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace multipath {

namespace {

void check_thresholds(const std::vector<int>& thresholds) {
  if (thresholds.empty()) {
    throw std::invalid_argument("targets: empty threshold list");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) {
      throw std::invalid_argument("targets: thresholds must strictly increase");
    }
  }
}

// k distinct picks when the pool suffices, otherwise k uniform draws with
// replacement.
std::vector<int> sample_k(const std::vector<int>& pool, int k,
                          std::mt19937_64& rng) {
  std::vector<int> out;
  out.reserve(k);
  if (static_cast<int>(pool.size()) >= k) {
    std::vector<int> shuffled(pool);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(
          i, static_cast<int>(shuffled.size()) - 1);
      std::swap(shuffled[i], shuffled[pick(rng)]);
      out.push_back(shuffled[i]);
    }
  } else if (!pool.empty()) {
    std::uniform_int_distribution<int> pick(0,
                                            static_cast<int>(pool.size()) - 1);
    for (int i = 0; i < k; ++i) out.push_back(pool[pick(rng)]);
  }
  return out;
}

}  // namespace

std::vector<TargetLabels> match_proposals(const std::vector<Box>& proposals,
                                          const std::vector<GroundTruth>& gts,
                                          const std::vector<int>& thresholds) {
  check_thresholds(thresholds);
  std::vector<TargetLabels> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    TargetLabels& tl = out[i];
    tl.k_u.assign(thresholds.size(), 0);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(proposals[i], gts[g].box);
      if (v > tl.best_iou) {  // strict: ties keep the lowest gt index
        tl.best_iou = v;
        tl.best_gt_index = static_cast<int>(g);
      }
    }
    if (!tl.best_gt_index) continue;
    const GroundTruth& match = gts[*tl.best_gt_index];
    for (std::size_t u = 0; u < thresholds.size(); ++u) {
      if (tl.best_iou >= thresholds[u]) tl.k_u[u] = match.cls;
    }
    if (tl.best_iou >= thresholds.front()) {
      tl.t_star = encode_bbox(proposals[i], match.box);
    }
  }
  return out;
}

MinibatchPlan plan_minibatch(const std::vector<TargetLabels>& labels,
                             const std::vector<int>& thresholds,
                             int head_index, int batch_size,
                             double pos_fraction, std::mt19937_64& rng,
                             int* warning_counter) {
  check_thresholds(thresholds);
  if (head_index < 0 || head_index >= static_cast<int>(thresholds.size())) {
    throw std::invalid_argument("plan_minibatch: head index out of range");
  }
  if (batch_size < 2) {
    throw std::invalid_argument("plan_minibatch: batch_size must be >= 2");
  }
  if (pos_fraction <= 0.0 || pos_fraction >= 1.0) {
    throw std::invalid_argument("plan_minibatch: pos_fraction must be in (0,1)");
  }
  const int u = thresholds[head_index];
  std::vector<int> positives, negatives;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].best_iou >= u) {
      positives.push_back(static_cast<int>(i));
    } else {
      negatives.push_back(static_cast<int>(i));
    }
  }

  MinibatchPlan plan;
  plan.head_index = head_index;
  int want_pos =
      static_cast<int>(std::ceil(pos_fraction * batch_size));
  if (positives.empty()) {
    want_pos = 0;
    if (warning_counter) ++(*warning_counter);
  }
  plan.proposal_indices = sample_k(positives, want_pos, rng);
  plan.positive_count = static_cast<int>(plan.proposal_indices.size());
  const auto negs = sample_k(negatives, batch_size - plan.positive_count, rng);
  plan.proposal_indices.insert(plan.proposal_indices.end(), negs.begin(),
                               negs.end());
  plan.negative_count =
      static_cast<int>(plan.proposal_indices.size()) - plan.positive_count;
  return plan;
}

MinibatchScheduler::MinibatchScheduler(std::vector<int> thresholds,
                                       int batch_size, double pos_fraction)
    : thresholds_(std::move(thresholds)),
      batch_size_(batch_size),
      pos_fraction_(pos_fraction) {
  check_thresholds(thresholds_);
}

MinibatchPlan MinibatchScheduler::next(const std::vector<TargetLabels>& labels,
                                       std::mt19937_64& rng) {
  MinibatchPlan plan = plan_minibatch(labels, thresholds_, cursor_,
                                      batch_size_, pos_fraction_, rng,
                                      &warnings_);
  cursor_ = (cursor_ + 1) % static_cast<int>(thresholds_.size());
  return plan;
}

void MinibatchScheduler::set_cursor(int c) {
  if (c < 0 || c >= static_cast<int>(thresholds_.size())) {
    throw std::invalid_argument("scheduler: cursor out of range");
  }
  cursor_ = c;
}

}  // namespace multipath
