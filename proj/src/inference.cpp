#include "multipath/inference.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace multipath {

void InferenceOptions::validate() const {
  if (nms_threshold < 0.0 || nms_threshold > 100.0) {
    throw std::invalid_argument("inference: nms_threshold must be in [0,100]");
  }
  if (max_detections < 1) {
    throw std::invalid_argument("inference: max_detections must be >= 1");
  }
  if (proposals_per_image < 1) {
    throw std::invalid_argument(
        "inference: proposals_per_image must be >= 1");
  }
}

namespace {

// Deterministic ranking: score descending, then lower x1, lower y1, class.
bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
  return a.cls < b.cls;
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double threshold) {
  for (const auto& d : dets) {
    if (!std::isfinite(d.score)) {
      throw std::invalid_argument("nms: non-finite score");
    }
  }
  std::stable_sort(dets.begin(), dets.end(), ranks_before);
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.cls == d.cls && iou(k.box, d.box) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {

Tensor hflip_image(const Tensor& image) {
  const auto& s = image.shape();  // [1,C,H,W]
  const int c = s[1], h = s[2], w = s[3];
  const auto& src = image.data();
  std::vector<double> out(src.size());
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      const std::size_t row = (static_cast<std::size_t>(ci) * h + y) * w;
      for (int x = 0; x < w; ++x) out[row + x] = src[row + (w - 1 - x)];
    }
  }
  return Tensor::from(s, std::move(out));
}

RegressionTarget as_target(const Tensor& t) {
  const auto& d = t.data();
  return RegressionTarget{d[0], d[1], d[2], d[3]};
}

}  // namespace

std::vector<ProposalOutput> score_proposals(
    const Tensor& image, const std::vector<Box>& proposals,
    const std::vector<const Model*>& models, const InferenceOptions& opts) {
  opts.validate();
  if (models.empty()) {
    throw std::invalid_argument("inference: need at least one model");
  }
  if (proposals.empty()) {
    throw std::invalid_argument("inference: no proposals");
  }
  const int num_classes = models[0]->config().num_classes;
  for (const Model* m : models) {
    if (!m) throw std::invalid_argument("inference: null model");
    if (m->config().num_classes != num_classes) {
      throw std::invalid_argument(
          "inference: ensemble members disagree on the class count");
    }
  }

  std::vector<Box> props = proposals;
  if (static_cast<int>(props.size()) > opts.proposals_per_image) {
    props.resize(opts.proposals_per_image);
  }
  const double img_w = static_cast<double>(image.shape()[3]);
  const Tensor flipped = opts.hflip ? hflip_image(image) : Tensor();
  std::vector<Box> flipped_props;
  if (opts.hflip) {
    flipped_props.reserve(props.size());
    for (const auto& b : props) flipped_props.push_back(hflip_box(b, img_w));
  }

  const std::vector<bool> flips = opts.hflip ? std::vector<bool>{false, true}
                                             : std::vector<bool>{false};
  using Quant = ModelConfig::Quantization;
  const std::vector<Quant> quants =
      opts.fmp ? std::vector<Quant>{Quant::kFloorCeil, Quant::kRound}
               : std::vector<Quant>{models[0]->config().quantization};

  // acc[i]: running probability sum for proposal i across all variants, plus
  // the box sum taken only from the first model's default-mode hflip pair.
  struct Acc {
    std::vector<double> p;
    double bx1 = 0, by1 = 0, bx2 = 0, by2 = 0;
    int p_variants = 0;
    int box_variants = 0;
  };
  std::vector<std::optional<Acc>> acc(props.size());
  const Quant default_quant = models[0]->config().quantization;

  for (bool flip : flips) {
    const Tensor& img = flip ? flipped : image;
    const std::vector<Box>& batch = flip ? flipped_props : props;
    for (Quant q : quants) {
      for (const Model* m : models) {
        ForwardOptions fwd;
        fwd.quantization = q;
        const auto scores = m->forward(img, batch, fwd);
        for (const auto& s : scores) {
          auto& slot = acc[s.proposal_index];
          if (!slot) {
            slot.emplace();
            slot->p.assign(static_cast<std::size_t>(num_classes) + 1, 0.0);
          }
          const auto p = average_heads(s);
          for (std::size_t c = 0; c < p.size(); ++c) slot->p[c] += p[c];
          ++slot->p_variants;
          // Boxes average across the hflip axis only (scores-only axes:
          // pooling modes and extra ensemble members).
          if (m == models[0] && q == default_quant) {
            Box b = decode_bbox(batch[s.proposal_index], as_target(s.t));
            if (flip) b = hflip_box(b, img_w);
            slot->bx1 += b.x1;
            slot->by1 += b.y1;
            slot->bx2 += b.x2;
            slot->by2 += b.y2;
            ++slot->box_variants;
          }
        }
      }
    }
  }

  std::vector<ProposalOutput> out;
  out.reserve(props.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!acc[i]) continue;  // proposal off the image in every variant
    const Acc& a = *acc[i];
    ProposalOutput po;
    po.proposal_index = static_cast<int>(i);
    po.p = a.p;
    for (auto& v : po.p) v /= a.p_variants;
    const double inv = 1.0 / a.box_variants;
    po.box = Box{a.bx1 * inv, a.by1 * inv, a.bx2 * inv, a.by2 * inv};
    out.push_back(std::move(po));
  }
  return out;
}

std::vector<Detection> detect(const Tensor& image,
                              const std::vector<Box>& proposals,
                              const std::vector<const Model*>& models,
                              const InferenceOptions& opts) {
  const auto scored = score_proposals(image, proposals, models, opts);
  std::vector<Detection> candidates;
  candidates.reserve(scored.size() *
                     (models.empty() ? 0 : models[0]->config().num_classes));
  for (const auto& po : scored) {
    for (std::size_t c = 1; c < po.p.size(); ++c) {
      candidates.push_back(
          Detection{po.box, static_cast<int>(c), po.p[c]});
    }
  }
  auto kept = nms(std::move(candidates), opts.nms_threshold);
  if (static_cast<int>(kept.size()) > opts.max_detections) {
    kept.resize(opts.max_detections);
  }
  return kept;
}

void write_detections_jsonl(std::ostream& os, int image_id,
                            const std::vector<Detection>& dets) {
  for (const auto& d : dets) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["class"] = d.cls;
    j["score"] = d.score;
    j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
    os << j.dump() << '\n';
  }
}

std::vector<std::pair<int, Detection>> read_detections_jsonl(
    std::istream& is) {
  std::vector<std::pair<int, Detection>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Detection d;
      d.cls = j.at("class").get<int>();
      d.score = j.at("score").get<double>();
      const auto& b = j.at("box");
      d.box = Box{b.at(0).get<double>(), b.at(1).get<double>(),
                  b.at(2).get<double>(), b.at(3).get<double>()};
      out.emplace_back(j.at("image_id").get<int>(), d);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("detections: bad record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace multipath
