#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "multipath/network.hpp"

namespace multipath {

struct Detection {
  Box box;
  int cls = 1;  // foreground classes only; background never emits
  double score = 0.0;
};

struct InferenceOptions {
  double nms_threshold = 30.0;  // IoU on the 0..100 scale
  int max_detections = 100;
  int proposals_per_image = 1000;  // extra proposals beyond this are ignored
  bool hflip = false;
  bool fmp = false;  // also pool with rounded region corners and average
  // Extra checkpoints joining the primary model (CLI plumbing; detect()
  // receives the loaded models).
  std::vector<std::string> ensemble;

  void validate() const;  // throws std::invalid_argument
};

// Greedy class-wise suppression: sort by score descending (ties: lower x1,
// then y1), keep a detection iff its IoU with every kept detection of the
// same class is <= threshold. Output stays score-descending. Throws
// std::invalid_argument on non-finite scores.
std::vector<Detection> nms(std::vector<Detection> dets, double threshold);

// Averaged per-proposal outputs before any class thresholding: softmax
// scores averaged over every enabled variant (identity/hflip x pooling modes
// x ensemble members, each head-averaged first) and the decoded box averaged
// coordinate-wise across the hflip variants of the first model only.
struct ProposalOutput {
  int proposal_index = -1;    // into the caller's proposal list
  std::vector<double> p;      // size K+1, background at index 0, sums to 1
  Box box;                    // decoded location shared by all classes
};

std::vector<ProposalOutput> score_proposals(
    const Tensor& image, const std::vector<Box>& proposals,
    const std::vector<const Model*>& models, const InferenceOptions& opts);

// Full pipeline: score_proposals, one candidate per foreground class per
// proposal, NMS, then truncation to max_detections.
std::vector<Detection> detect(const Tensor& image,
                              const std::vector<Box>& proposals,
                              const std::vector<const Model*>& models,
                              const InferenceOptions& opts);

// One JSON object per line: {"image_id":..,"class":..,"score":..,
// "box":[x1,y1,x2,y2]}.
void write_detections_jsonl(std::ostream& os, int image_id,
                            const std::vector<Detection>& dets);
std::vector<std::pair<int, Detection>> read_detections_jsonl(std::istream& is);

}  // namespace multipath
