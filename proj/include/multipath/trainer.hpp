#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "multipath/network.hpp"
#include "multipath/targets.hpp"

namespace multipath {

struct LossConfig {
  double lambda = 1.0;  // localization weight
  std::vector<int> thresholds{50, 55, 60, 65, 70, 75};
  double smooth_l1_delta = 1.0;

  void validate() const;  // throws std::invalid_argument
};

struct TrainConfig {
  // Published schedule; desk profiles scale iterations/batch down via config.
  int iterations = 200000;
  int images_per_batch = 4;
  int proposals_per_image = 64;
  double lr_initial = 1e-3;
  double lr_final = 1e-4;
  double lr_drop_fraction = 0.8;  // switch to lr_final at this point
  double momentum = 0.9;
  double weight_decay = 0.0;
  double pos_fraction = 0.25;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;     // extra saves every N iterations; 0 = final only
  std::string checkpoint_path;  // empty = no checkpoint files

  void validate() const;  // throws std::invalid_argument
};

// -log p_k with p clamped at 1e-12.
Tensor cls_loss(const Tensor& p, int k);

// Sum of per-component smooth-L1 terms of (t - t_star).
Tensor loc_loss(const Tensor& t, const RegressionTarget& t_star, double delta);

// Mean over thresholds u of cls_loss(p_u, k_u) + lambda*[k_u >= 1]*loc_loss,
// with one shared regression output t in every gated term. Throws
// std::logic_error when a positive label arrives without a regression target.
Tensor integral_loss(const HeadScores& scores, const TargetLabels& labels,
                     const LossConfig& cfg);

// Single-head restriction used for one optimizer step: that head's
// classification loss plus its own gated localization term.
Tensor head_loss(const HeadScores& scores, const TargetLabels& labels,
                 int head_index, const LossConfig& cfg);

struct TrainingExample {
  Tensor image;  // [1,C,H,W]
  std::vector<Box> proposals;
  std::vector<GroundTruth> gts;
};

// One CSV row per optimizer step. loss_cls and loss_loc are minibatch means
// (loc averaged over all sampled proposals, gated terms only contributing),
// so loss_cls + loss_loc is the stepped objective.
struct LossRecord {
  int iteration = 0;
  int head_u = 0;
  double loss_cls = 0.0;
  double loss_loc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  int warnings = 0;  // minibatches that had no positives for their head
  bool aborted = false;
  std::string abort_reason;  // set when a non-finite loss stopped the run
};

// SGD with momentum over the single-head objective, heads cycling per step.
// Deterministic per cfg.seed: every random draw comes from a per-iteration
// generator derived from (seed, iteration), so a resumed run replays the
// exact tail of an unbroken one. Parameters and velocities are rounded to
// 32-bit float values after every step, which is what makes checkpoints
// lossless. `csv` (when given) receives a header plus one row per step.
// `resume_from` loads a checkpoint written by this function; its config must
// match the model's. Returns early with `aborted` set if the loss goes
// non-finite.
TrainResult train(Model& model, const std::vector<TrainingExample>& dataset,
                  const TrainConfig& tcfg, const LossConfig& lcfg,
                  std::ostream* csv = nullptr,
                  const std::string& resume_from = {});

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& curve);
std::vector<LossRecord> read_loss_csv(std::istream& is);

}  // namespace multipath
