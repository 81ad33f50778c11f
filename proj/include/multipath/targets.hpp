#pragma once

#include <optional>
#include <random>
#include <vector>

#include "multipath/geometry.hpp"

namespace multipath {

struct GroundTruth {
  Box box;
  int cls = 1;  // foreground classes start at 1; 0 means background
};

// Per-proposal matching result: the max-IoU ground truth, one class label per
// integral threshold, and a single regression target shared by every head.
struct TargetLabels {
  double best_iou = 0.0;
  std::optional<int> best_gt_index;
  std::vector<int> k_u;  // parallel to the threshold list; 0 = background
  std::optional<RegressionTarget> t_star;  // present iff best_iou >= min u
};

// Max-IoU matching with ties broken by the lowest ground-truth index.
// k_u = matched class iff best_iou >= u, else 0 — so labels are positive on a
// prefix of the ascending threshold list (monotonicity invariant).
std::vector<TargetLabels> match_proposals(const std::vector<Box>& proposals,
                                          const std::vector<GroundTruth>& gts,
                                          const std::vector<int>& thresholds);

struct MinibatchPlan {
  int head_index = 0;  // position in the threshold list
  std::vector<int> proposal_indices;  // positives first, then negatives
  int positive_count = 0;
  int negative_count = 0;
};

// One plan for one head: ceil(pos_fraction * batch_size) positives for that
// head's threshold (sampled with replacement when scarce), negatives filling
// the rest. With no positives at all the plan is all negatives and
// *warning_counter (when given) increments.
MinibatchPlan plan_minibatch(const std::vector<TargetLabels>& labels,
                             const std::vector<int>& thresholds,
                             int head_index, int batch_size,
                             double pos_fraction, std::mt19937_64& rng,
                             int* warning_counter = nullptr);

// Round-robin head scheduler: each call plans the next head in threshold
// order, matching the one-head-per-minibatch training regime.
class MinibatchScheduler {
 public:
  MinibatchScheduler(std::vector<int> thresholds, int batch_size,
                     double pos_fraction);

  MinibatchPlan next(const std::vector<TargetLabels>& labels,
                     std::mt19937_64& rng);

  int cursor() const { return cursor_; }
  void set_cursor(int c);  // for resuming mid-cycle
  int warnings() const { return warnings_; }

 private:
  std::vector<int> thresholds_;
  int batch_size_;
  double pos_fraction_;
  int cursor_ = 0;
  int warnings_ = 0;
};

}  // namespace multipath
