#include "multipath/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace multipath {

const std::vector<int>& coco_thresholds() {
  static const std::vector<int> t{50, 55, 60, 65, 70, 75, 80, 85, 90, 95};
  return t;
}

namespace {

enum Bracket { kAll = 0, kSmall, kMedium, kLarge };
constexpr double kSmallMax = 32.0 * 32.0;
constexpr double kLargeMin = 96.0 * 96.0;

bool in_bracket(double area, int b) {
  switch (b) {
    case kSmall: return area < kSmallMax;
    case kMedium: return area >= kSmallMax && area <= kLargeMin;
    case kLarge: return area > kLargeMin;
    default: return true;
  }
}

void validate_inputs(const DetectionsByImage& dets,
                     const GroundTruthByImage& gts,
                     const std::vector<int>& thresholds) {
  if (thresholds.empty()) {
    throw std::invalid_argument("evaluate: empty threshold list");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) {
      throw std::invalid_argument("evaluate: thresholds must increase");
    }
  }
  for (const auto& [img, _] : dets) {
    if (!gts.count(img)) {
      throw std::invalid_argument("evaluate: detections reference image " +
                                  std::to_string(img) +
                                  " absent from the ground truth");
    }
  }
  for (const auto& [img, list] : gts) {
    for (const auto& g : list) {
      if (g.cls < 1) {
        throw std::invalid_argument("evaluate: ground-truth class must be >= 1");
      }
    }
  }
}

std::set<int> classes_present(const GroundTruthByImage& gts) {
  std::set<int> classes;
  for (const auto& [img, list] : gts) {
    for (const auto& g : list) classes.insert(g.cls);
  }
  return classes;
}

// ---- interpolated evaluator -------------------------------------------------

struct RankedDet {
  int image = 0;
  double score = 0.0;
  Box box;
};

bool det_order(const RankedDet& a, const RankedDet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image != b.image) return a.image < b.image;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  return a.box.y1 < b.box.y1;
}

struct ClassData {
  std::vector<RankedDet> dets;             // score-descending
  std::map<int, std::vector<Box>> gt;      // per image
};

std::map<int, ClassData> group_by_class(const DetectionsByImage& dets,
                                        const GroundTruthByImage& gts) {
  std::map<int, ClassData> out;
  for (const auto& [img, list] : gts) {
    for (const auto& g : list) out[g.cls].gt[img].push_back(g.box);
  }
  for (const auto& [img, list] : dets) {
    for (const auto& d : list) {
      out[d.cls].dets.push_back(RankedDet{img, d.score, d.box});
    }
  }
  for (auto& [cls, cd] : out) {
    std::stable_sort(cd.dets.begin(), cd.dets.end(), det_order);
  }
  return out;
}

// Outcome per ranked detection: +1 matched, 0 false positive, -1 ignored.
struct MatchResult {
  std::vector<int> outcomes;
  int n_gt = 0;  // ground truths inside the bracket
};

MatchResult match_class(const ClassData& cd, double u, int bracket) {
  MatchResult res;
  std::map<int, std::vector<char>> used;
  for (const auto& [img, boxes] : cd.gt) {
    used[img].assign(boxes.size(), 0);
    for (const auto& b : boxes) {
      if (in_bracket(b.area(), bracket)) ++res.n_gt;
    }
  }
  res.outcomes.reserve(cd.dets.size());
  for (const auto& d : cd.dets) {
    const auto it = cd.gt.find(d.image);
    int best = -1;
    double best_iou = -1.0;
    bool best_ignored = false;
    if (it != cd.gt.end()) {
      auto& flags = used[d.image];
      // Non-ignored ground truths take priority; ignored ones only absorb.
      for (int pass = 0; pass < 2 && best < 0; ++pass) {
        const bool want_ignored = pass == 1;
        for (std::size_t g = 0; g < it->second.size(); ++g) {
          if (flags[g]) continue;
          const bool ignored = !in_bracket(it->second[g].area(), bracket);
          if (ignored != want_ignored) continue;
          const double v = iou(d.box, it->second[g]);
          if (v >= u && v > best_iou) {
            best_iou = v;
            best = static_cast<int>(g);
            best_ignored = ignored;
          }
        }
      }
      if (best >= 0) flags[best] = 1;
    }
    if (best >= 0) {
      res.outcomes.push_back(best_ignored ? -1 : 1);
    } else {
      res.outcomes.push_back(in_bracket(d.box.area(), bracket) ? 0 : -1);
    }
  }
  return res;
}

// 101-point interpolated AP (percent) from ranked outcomes.
double ap101(const std::vector<int>& outcomes, int n_gt) {
  std::vector<double> recall, prec;
  int tp = 0, fp = 0;
  for (int o : outcomes) {
    if (o < 0) continue;
    o == 1 ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / n_gt);
    prec.push_back(static_cast<double>(tp) / (tp + fp));
  }
  for (int i = static_cast<int>(prec.size()) - 2; i >= 0; --i) {
    prec[i] = std::max(prec[i], prec[i + 1]);
  }
  double acc = 0.0;
  std::size_t j = 0;
  for (int g = 0; g <= 100; ++g) {
    const double r = g / 100.0;
    while (j < recall.size() && recall[j] < r) ++j;
    if (j < recall.size()) acc += prec[j];
  }
  return acc / 101.0 * 100.0;
}

int matched_count(const std::vector<int>& outcomes) {
  int tp = 0;
  for (int o : outcomes) tp += o == 1;
  return tp;
}

// Detections truncated to the k best per image (across classes).
DetectionsByImage top_k(const DetectionsByImage& dets, int k) {
  DetectionsByImage out;
  for (const auto& [img, list] : dets) {
    auto copy = list;
    std::stable_sort(copy.begin(), copy.end(),
                     [](const Detection& a, const Detection& b) {
                       if (a.score != b.score) return a.score > b.score;
                       if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
                       if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
                       return a.cls < b.cls;
                     });
    if (static_cast<int>(copy.size()) > k) copy.resize(k);
    out[img] = std::move(copy);
  }
  return out;
}

double ar_at_k(const DetectionsByImage& dets, const GroundTruthByImage& gts,
               const std::vector<int>& thresholds, int k) {
  const auto grouped = group_by_class(top_k(dets, k), gts);
  double sum = 0.0;
  int terms = 0;
  for (const auto& [cls, cd] : grouped) {
    for (int u : thresholds) {
      const auto m = match_class(cd, u, kAll);
      if (m.n_gt == 0) continue;
      sum += 100.0 * matched_count(m.outcomes) / m.n_gt;
      ++terms;
    }
  }
  return terms ? sum / terms : 0.0;
}

}  // namespace

EvalResult evaluate(const DetectionsByImage& dets,
                    const GroundTruthByImage& gts,
                    const std::vector<int>& iou_thresholds) {
  validate_inputs(dets, gts, iou_thresholds);
  const auto grouped = group_by_class(dets, gts);

  EvalResult res;
  double bracket_sums[4] = {0, 0, 0, 0};
  int bracket_terms[4] = {0, 0, 0, 0};
  std::map<int, double> ap_by_threshold;  // for ap50/ap75
  std::map<int, int> terms_by_threshold;

  for (const auto& [cls, cd] : grouped) {
    double class_sum = 0.0;
    int class_terms = 0;
    for (int u : iou_thresholds) {
      for (int b = kAll; b <= kLarge; ++b) {
        const auto m = match_class(cd, u, b);
        if (m.n_gt == 0) continue;
        const double ap = ap101(m.outcomes, m.n_gt);
        bracket_sums[b] += ap;
        ++bracket_terms[b];
        if (b == kAll) {
          class_sum += ap;
          ++class_terms;
          ap_by_threshold[u] += ap;
          ++terms_by_threshold[u];
        }
      }
    }
    if (class_terms > 0) res.per_class_ap[cls] = class_sum / class_terms;
  }

  res.ap = bracket_terms[kAll] ? bracket_sums[kAll] / bracket_terms[kAll] : 0.0;
  res.ap_small =
      bracket_terms[kSmall] ? bracket_sums[kSmall] / bracket_terms[kSmall] : 0.0;
  res.ap_medium = bracket_terms[kMedium]
                      ? bracket_sums[kMedium] / bracket_terms[kMedium]
                      : 0.0;
  res.ap_large =
      bracket_terms[kLarge] ? bracket_sums[kLarge] / bracket_terms[kLarge] : 0.0;
  if (terms_by_threshold.count(50)) {
    res.ap50 = ap_by_threshold[50] / terms_by_threshold[50];
  }
  if (terms_by_threshold.count(75)) {
    res.ap75 = ap_by_threshold[75] / terms_by_threshold[75];
  }
  res.ar1 = ar_at_k(dets, gts, iou_thresholds, 1);
  res.ar10 = ar_at_k(dets, gts, iou_thresholds, 10);
  res.ar100 = ar_at_k(dets, gts, iou_thresholds, 100);
  return res;
}

std::vector<std::pair<int, double>> ap_curve(
    const DetectionsByImage& dets, const GroundTruthByImage& gts,
    const std::vector<int>& iou_thresholds) {
  validate_inputs(dets, gts, iou_thresholds);
  const auto grouped = group_by_class(dets, gts);
  std::vector<std::pair<int, double>> curve;
  curve.reserve(iou_thresholds.size());
  for (int u : iou_thresholds) {
    double sum = 0.0;
    int terms = 0;
    for (const auto& [cls, cd] : grouped) {
      const auto m = match_class(cd, u, kAll);
      if (m.n_gt == 0) continue;
      sum += ap101(m.outcomes, m.n_gt);
      ++terms;
    }
    curve.emplace_back(u, terms ? sum / terms : 0.0);
  }
  return curve;
}

// ---- brute-force oracle -----------------------------------------------------
//
// Everything below re-derives the metrics with plain loops and the exact
// envelope integral instead of the 101-point grid. It deliberately shares no
// matching/accumulation code with the evaluator above.

namespace {

struct FlatDet {
  int image = 0;
  Detection det;
};

// Exact AP (percent) for one class at one threshold and bracket.
double oracle_ap(const std::vector<FlatDet>& ranked,
                 const GroundTruthByImage& gts, int cls, double u,
                 int bracket) {
  // Count bracket ground truths and set up matched flags.
  std::map<int, std::vector<int>> taken;
  int n_gt = 0;
  for (const auto& [img, list] : gts) {
    taken[img].assign(list.size(), 0);
    for (const auto& g : list) {
      if (g.cls == cls && in_bracket(g.box.area(), bracket)) ++n_gt;
    }
  }
  if (n_gt == 0) return -1.0;  // class absent in this bracket

  std::vector<double> precision_at_tp;
  int tp = 0, counted = 0;
  for (const auto& fd : ranked) {
    if (fd.det.cls != cls) continue;
    const auto git = gts.find(fd.image);
    int pick = -1;
    double pick_iou = -1.0;
    bool pick_in = false;
    if (git != gts.end()) {
      // First look among in-bracket ground truths, then ignored ones.
      for (int want_in = 1; want_in >= 0 && pick < 0; --want_in) {
        for (std::size_t g = 0; g < git->second.size(); ++g) {
          const auto& gt = git->second[g];
          if (gt.cls != cls || taken[fd.image][g]) continue;
          const bool in = in_bracket(gt.box.area(), bracket);
          if (static_cast<int>(in) != want_in) continue;
          const double v = iou(fd.det.box, gt.box);
          if (v >= u && v > pick_iou) {
            pick_iou = v;
            pick = static_cast<int>(g);
            pick_in = in;
          }
        }
      }
    }
    if (pick >= 0) {
      taken[fd.image][pick] = 1;
      if (pick_in) {
        ++tp;
        ++counted;
        precision_at_tp.push_back(static_cast<double>(tp) / counted);
      }
      // matches to an out-of-bracket ground truth vanish from the ranking
    } else if (in_bracket(fd.det.box.area(), bracket)) {
      ++counted;  // false positive
    }
  }

  // Integral of the precision envelope: each matched ground truth adds a
  // recall step of 1/n_gt at the best precision seen from there on.
  double ap = 0.0;
  for (std::size_t i = 0; i < precision_at_tp.size(); ++i) {
    double env = 0.0;
    for (std::size_t j = i; j < precision_at_tp.size(); ++j) {
      env = std::max(env, precision_at_tp[j]);
    }
    ap += env / n_gt;
  }
  return ap * 100.0;
}

double oracle_recall(const std::vector<FlatDet>& ranked,
                     const GroundTruthByImage& gts, int cls, double u) {
  std::map<int, std::vector<int>> taken;
  int n_gt = 0;
  for (const auto& [img, list] : gts) {
    taken[img].assign(list.size(), 0);
    for (const auto& g : list) n_gt += g.cls == cls;
  }
  if (n_gt == 0) return -1.0;
  int tp = 0;
  for (const auto& fd : ranked) {
    if (fd.det.cls != cls) continue;
    const auto git = gts.find(fd.image);
    if (git == gts.end()) continue;
    int pick = -1;
    double pick_iou = -1.0;
    for (std::size_t g = 0; g < git->second.size(); ++g) {
      if (git->second[g].cls != cls || taken[fd.image][g]) continue;
      const double v = iou(fd.det.box, git->second[g].box);
      if (v >= u && v > pick_iou) {
        pick_iou = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      taken[fd.image][pick] = 1;
      ++tp;
    }
  }
  return 100.0 * tp / n_gt;
}

}  // namespace

EvalResult oracle_evaluate(const DetectionsByImage& dets,
                           const GroundTruthByImage& gts,
                           const std::vector<int>& iou_thresholds) {
  validate_inputs(dets, gts, iou_thresholds);
  for (const auto& [img, list] : dets) {
    if (list.size() > 20) {
      throw std::invalid_argument("oracle: too many detections in image " +
                                  std::to_string(img));
    }
  }
  for (const auto& [img, list] : gts) {
    if (list.size() > 10) {
      throw std::invalid_argument("oracle: too many ground truths in image " +
                                  std::to_string(img));
    }
  }

  std::vector<FlatDet> ranked;
  for (const auto& [img, list] : dets) {
    for (const auto& d : list) ranked.push_back(FlatDet{img, d});
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const FlatDet& a, const FlatDet& b) {
              if (a.det.score != b.det.score) return a.det.score > b.det.score;
              if (a.image != b.image) return a.image < b.image;
              if (a.det.box.x1 != b.det.box.x1) {
                return a.det.box.x1 < b.det.box.x1;
              }
              return a.det.box.y1 < b.det.box.y1;
            });

  EvalResult res;
  double sums[4] = {0, 0, 0, 0};
  int terms[4] = {0, 0, 0, 0};
  double sum50 = 0, sum75 = 0;
  int n50 = 0, n75 = 0;

  for (int cls : classes_present(gts)) {
    double class_sum = 0.0;
    int class_terms = 0;
    for (int u : iou_thresholds) {
      for (int b = kAll; b <= kLarge; ++b) {
        const double ap = oracle_ap(ranked, gts, cls, u, b);
        if (ap < 0.0) continue;
        sums[b] += ap;
        ++terms[b];
        if (b == kAll) {
          class_sum += ap;
          ++class_terms;
          if (u == 50) {
            sum50 += ap;
            ++n50;
          }
          if (u == 75) {
            sum75 += ap;
            ++n75;
          }
        }
      }
    }
    if (class_terms) res.per_class_ap[cls] = class_sum / class_terms;
  }
  res.ap = terms[kAll] ? sums[kAll] / terms[kAll] : 0.0;
  res.ap_small = terms[kSmall] ? sums[kSmall] / terms[kSmall] : 0.0;
  res.ap_medium = terms[kMedium] ? sums[kMedium] / terms[kMedium] : 0.0;
  res.ap_large = terms[kLarge] ? sums[kLarge] / terms[kLarge] : 0.0;
  res.ap50 = n50 ? sum50 / n50 : 0.0;
  res.ap75 = n75 ? sum75 / n75 : 0.0;

  for (int k : {1, 10, 100}) {
    // Rebuild the ranking with just the k best detections of each image.
    std::map<int, std::vector<FlatDet>> per_image;
    for (const auto& fd : ranked) per_image[fd.image].push_back(fd);
    std::vector<FlatDet> capped;
    for (auto& [img, list] : per_image) {
      for (std::size_t i = 0; i < list.size() && i < static_cast<std::size_t>(k);
           ++i) {
        capped.push_back(list[i]);
      }
    }
    double sum = 0.0;
    int n = 0;
    for (int cls : classes_present(gts)) {
      for (int u : iou_thresholds) {
        const double r = oracle_recall(capped, gts, cls, u);
        if (r < 0.0) continue;
        sum += r;
        ++n;
      }
    }
    const double ar = n ? sum / n : 0.0;
    if (k == 1) res.ar1 = ar;
    if (k == 10) res.ar10 = ar;
    if (k == 100) res.ar100 = ar;
  }
  return res;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json j;
  j["ap"] = ap;
  j["ap50"] = ap50;
  j["ap75"] = ap75;
  j["ap_small"] = ap_small;
  j["ap_medium"] = ap_medium;
  j["ap_large"] = ap_large;
  j["ar1"] = ar1;
  j["ar10"] = ar10;
  j["ar100"] = ar100;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, v] : per_class_ap) {
    per_class[std::to_string(cls)] = v;
  }
  j["per_class_ap"] = per_class;
  return j;
}

void write_ap_csv(std::ostream& os,
                  const std::vector<std::pair<int, double>>& curve) {
  os << "iou_threshold,ap\n" << std::setprecision(17);
  for (const auto& [u, ap] : curve) os << u << ',' << ap << '\n';
}

std::vector<std::pair<int, double>> read_ap_csv(std::istream& is) {
  std::vector<std::pair<int, double>> curve;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.rfind("iou_threshold", 0) == 0) continue;
    std::istringstream ss(line);
    int u;
    double ap;
    char c;
    if (!(ss >> u >> c >> ap) || c != ',') {
      throw std::runtime_error("ap csv: malformed line " +
                               std::to_string(line_no));
    }
    curve.emplace_back(u, ap);
  }
  return curve;
}

}  // namespace multipath
