#pragma once

#include <iosfwd>
#include <map>
#include <vector>

#include "json.hpp"
#include "multipath/inference.hpp"
#include "multipath/targets.hpp"

namespace multipath {

// IoU thresholds 50:5:95, the averaging range behind the headline metric.
const std::vector<int>& coco_thresholds();

struct EvalResult {
  double ap = 0.0;    // mean over classes present, then over thresholds
  double ap50 = 0.0;  // at IoU 50 only
  double ap75 = 0.0;
  double ap_small = 0.0;   // gts with area < 32^2
  double ap_medium = 0.0;  // 32^2 <= area <= 96^2
  double ap_large = 0.0;   // area > 96^2
  double ar1 = 0.0;   // recall with the top-1 detection per image
  double ar10 = 0.0;
  double ar100 = 0.0;
  std::map<int, double> per_class_ap;  // class id -> AP over all thresholds

  nlohmann::json to_json() const;
};

using DetectionsByImage = std::map<int, std::vector<Detection>>;
using GroundTruthByImage = std::map<int, std::vector<GroundTruth>>;

// Greedy evaluator: per class and threshold, detections ranked by score
// (descending) match the unmatched same-class ground truth of highest IoU
// >= threshold; AP comes from the 101-point interpolated precision envelope;
// class means cover only classes present in the ground truth. Size-bracket
// APs ignore (rather than penalize) out-of-bracket ground truths and the
// detections absorbed by or sized like them. Detections for an image id
// absent from `gts` raise std::invalid_argument.
EvalResult evaluate(const DetectionsByImage& dets,
                    const GroundTruthByImage& gts,
                    const std::vector<int>& iou_thresholds = coco_thresholds());

// Brute-force re-implementation used to cross-check `evaluate`: exact
// integral of the precision envelope, no grid interpolation, simple loops.
// Refuses instances with more than 20 detections or 10 ground truths in any
// single image.
EvalResult oracle_evaluate(
    const DetectionsByImage& dets, const GroundTruthByImage& gts,
    const std::vector<int>& iou_thresholds = coco_thresholds());

// AP at each threshold (class means), the data behind the AP-vs-threshold
// sweep.
std::vector<std::pair<int, double>> ap_curve(
    const DetectionsByImage& dets, const GroundTruthByImage& gts,
    const std::vector<int>& iou_thresholds = coco_thresholds());

void write_ap_csv(std::ostream& os,
                  const std::vector<std::pair<int, double>>& curve);
std::vector<std::pair<int, double>> read_ap_csv(std::istream& is);

}  // namespace multipath
