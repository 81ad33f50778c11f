#include "multipath/network.hpp"

#include "multipath/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace multipath {

using Quant = ModelConfig::Quantization;

// --- config -----------------------------------------------------------------

std::vector<std::vector<int>> ModelConfig::default_wiring_for(
    std::size_t heads) {
  if (heads == 4) {
    return {{0, 1, 2}, {1, 2}, {1, 2}, {2}};
  }
  return std::vector<std::vector<int>>(heads, std::vector<int>{2});
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("config: num_classes < 1");
  if (image_channels < 1) {
    throw std::invalid_argument("config: image_channels < 1");
  }
  if (pool_size < 1) throw std::invalid_argument("config: pool_size < 1");
  if (foveal_factors.empty() || foveal_factors.front() != 1.0) {
    throw std::invalid_argument("config: foveal_factors must start at 1");
  }
  for (std::size_t i = 0; i < foveal_factors.size(); ++i) {
    if (foveal_factors[i] < 1.0 ||
        (i > 0 && foveal_factors[i] <= foveal_factors[i - 1])) {
      throw std::invalid_argument("config: foveal_factors must ascend from 1");
    }
  }
  if (integral_thresholds.empty()) {
    throw std::invalid_argument("config: no integral thresholds");
  }
  for (std::size_t i = 0; i < integral_thresholds.size(); ++i) {
    const int u = integral_thresholds[i];
    if (u < 50 || u > 95) {
      throw std::invalid_argument("config: thresholds must lie in [50,95]");
    }
    if (i > 0 && u <= integral_thresholds[i - 1]) {
      throw std::invalid_argument("config: thresholds must strictly increase");
    }
  }
  if (trunk_channels.size() != 4) {
    throw std::invalid_argument("config: trunk_channels needs stem + 3 stages");
  }
  for (int c : trunk_channels) {
    if (c < 1) throw std::invalid_argument("config: trunk channels < 1");
  }
  if (reduce_channels < 1 || head_hidden_dim < 1) {
    throw std::invalid_argument("config: head dims must be >= 1");
  }
  if (skip_wiring.size() != foveal_factors.size()) {
    throw std::invalid_argument("config: one wiring entry per foveal head");
  }
  for (const auto& taps : skip_wiring) {
    if (taps.empty()) throw std::invalid_argument("config: head with no taps");
    for (int t : taps) {
      if (t < 0 || t > 2) {
        throw std::invalid_argument("config: wiring references missing stage");
      }
    }
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("config: dropout must lie in [0,1)");
  }
}

namespace {

std::string quant_name(Quant q) {
  return q == Quant::kFloorCeil ? "floor_ceil" : "round";
}

Quant quant_from_name(const std::string& s) {
  if (s == "floor_ceil") return Quant::kFloorCeil;
  if (s == "round") return Quant::kRound;
  throw std::invalid_argument("config: unknown quantization mode: " + s);
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"num_classes", num_classes},
                        {"image_channels", image_channels},
                        {"foveal_factors", foveal_factors},
                        {"integral_thresholds", integral_thresholds},
                        {"pool_size", pool_size},
                        {"trunk_channels", trunk_channels},
                        {"reduce_channels", reduce_channels},
                        {"head_hidden_dim", head_hidden_dim},
                        {"skip_wiring", skip_wiring},
                        {"quantization", quant_name(quantization)},
                        {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.image_channels = j.value("image_channels", cfg.image_channels);
  if (j.contains("foveal_factors")) {
    cfg.foveal_factors = j.at("foveal_factors").get<std::vector<double>>();
  }
  if (j.contains("integral_thresholds")) {
    cfg.integral_thresholds =
        j.at("integral_thresholds").get<std::vector<int>>();
  }
  cfg.pool_size = j.value("pool_size", cfg.pool_size);
  if (j.contains("trunk_channels")) {
    cfg.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
  }
  cfg.reduce_channels = j.value("reduce_channels", cfg.reduce_channels);
  cfg.head_hidden_dim = j.value("head_hidden_dim", cfg.head_hidden_dim);
  if (j.contains("skip_wiring")) {
    cfg.skip_wiring =
        j.at("skip_wiring").get<std::vector<std::vector<int>>>();
  } else {
    cfg.skip_wiring = default_wiring_for(cfg.foveal_factors.size());
  }
  if (j.contains("quantization")) {
    cfg.quantization = quant_from_name(j.at("quantization").get<std::string>());
  }
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.validate();
  return cfg;
}

// --- roi pooling ------------------------------------------------------------

namespace {

struct CellRange {
  int lo, hi;  // [lo, hi)
};

CellRange quantize_extent(double f1, double f2, int cells, Quant mode) {
  int lo, hi;
  if (mode == Quant::kFloorCeil) {
    lo = static_cast<int>(std::floor(f1));
    hi = static_cast<int>(std::ceil(f2));
  } else {
    lo = static_cast<int>(std::llround(f1));
    hi = static_cast<int>(std::llround(f2));
  }
  lo = std::clamp(lo, 0, cells);
  hi = std::clamp(hi, 0, cells);
  if (hi <= lo) {
    // Degenerate region: fall back to the single nearest cell.
    const int c = std::clamp(static_cast<int>(std::floor(0.5 * (f1 + f2))), 0,
                             cells - 1);
    lo = c;
    hi = c + 1;
  }
  return {lo, hi};
}

}  // namespace

Tensor roi_pool(const Tensor& map, const Box& box, int stride, int out_size,
                Quant mode) {
  const auto& ms = map.shape();
  if (ms.size() != 4 || ms[0] != 1) {
    throw std::invalid_argument("roi_pool: expected a [1,C,h,w] feature map");
  }
  if (stride < 1 || out_size < 1) {
    throw std::invalid_argument("roi_pool: stride and out_size must be >= 1");
  }
  if (!box.valid()) throw std::invalid_argument("roi_pool: degenerate box");
  const int C = ms[1], H = ms[2], W = ms[3];
  const double inv = 1.0 / stride;
  const CellRange xs = quantize_extent(box.x1 * inv, box.x2 * inv, W, mode);
  const CellRange ys = quantize_extent(box.y1 * inv, box.y2 * inv, H, mode);
  const int rw = xs.hi - xs.lo, rh = ys.hi - ys.lo;

  const auto& md = map.data();
  const int P = out_size;
  std::vector<double> out(static_cast<size_t>(C) * P * P);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (int c = 0; c < C; ++c) {
    const double* plane = md.data() + static_cast<size_t>(c) * H * W;
    for (int by = 0; by < P; ++by) {
      const int y0 = ys.lo + (by * rh) / P;
      const int y1 = ys.lo + ((by + 1) * rh + P - 1) / P;
      for (int bx = 0; bx < P; ++bx) {
        const int x0 = xs.lo + (bx * rw) / P;
        const int x1 = xs.lo + ((bx + 1) * rw + P - 1) / P;
        std::int64_t best = static_cast<std::int64_t>(y0) * W + x0;
        double bv = plane[best];
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const std::int64_t idx = static_cast<std::int64_t>(y) * W + x;
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        }
        const size_t o = (static_cast<size_t>(c) * P + by) * P + bx;
        out[o] = bv;
        (*argmax)[o] = static_cast<std::int64_t>(c) * H * W + best;
      }
    }
  }

  Tensor mv = map;
  return custom_op({C, P, P}, std::move(out), {map},
                   [mv, argmax](const std::vector<double>& g) mutable {
                     if (!mv.requires_grad()) return;
                     auto& gm = mv.grad();
                     for (size_t i = 0; i < g.size(); ++i) {
                       gm[(*argmax)[i]] += g[i];
                     }
                   });
}

// --- model ------------------------------------------------------------------

namespace {

Tensor gaussian_param(std::vector<int> shape, double stddev,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor he_param(std::vector<int> shape, std::int64_t fan_in,
                std::mt19937_64& rng) {
  return gaussian_param(std::move(shape),
                        std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Tensor dropout_mask(std::int64_t n, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 - p;
  std::vector<double> mask(n);
  for (auto& v : mask) v = u(rng) < keep ? 1.0 / keep : 0.0;
  return Tensor::from({static_cast<int>(n)}, std::move(mask), false);
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto track = [this](const std::string& name, Tensor t) {
    params_.emplace_back(name, t);
    return t;
  };

  int in_c = cfg_.image_channels;
  for (int s = 0; s < 4; ++s) {
    const int out_c = cfg_.trunk_channels[s];
    trunk_w_.push_back(track("trunk.conv" + std::to_string(s) + ".w",
                             he_param({out_c, in_c, 3, 3},
                                      static_cast<std::int64_t>(in_c) * 9,
                                      rng)));
    trunk_b_.push_back(track("trunk.conv" + std::to_string(s) + ".b",
                             Tensor::zeros({out_c}, true)));
    in_c = out_c;
  }

  const int P = cfg_.pool_size;
  const int hidden = cfg_.head_hidden_dim;
  for (std::size_t h = 0; h < cfg_.foveal_factors.size(); ++h) {
    const std::string prefix = "fov" + std::to_string(h) + ".";
    HeadParams hp;
    int concat_c = 0;
    for (std::size_t j = 0; j < cfg_.skip_wiring[h].size(); ++j) {
      hp.gammas.push_back(track(prefix + "gamma" + std::to_string(j),
                                Tensor::full({1}, 1.0, true)));
      concat_c += cfg_.trunk_channels[1 + cfg_.skip_wiring[h][j]];
    }
    hp.reduce_w = track(prefix + "reduce.w",
                        he_param({cfg_.reduce_channels, concat_c, 1, 1},
                                 concat_c, rng));
    hp.reduce_b =
        track(prefix + "reduce.b", Tensor::zeros({cfg_.reduce_channels}, true));
    const int flat = cfg_.reduce_channels * P * P;
    hp.fc1_w = track(prefix + "fc1.w", he_param({hidden, flat}, flat, rng));
    hp.fc1_b = track(prefix + "fc1.b", Tensor::zeros({hidden}, true));
    hp.fc2_w = track(prefix + "fc2.w", he_param({hidden, hidden}, hidden, rng));
    hp.fc2_b = track(prefix + "fc2.b", Tensor::zeros({hidden}, true));
    heads_.push_back(std::move(hp));
  }

  const int feat_dim = static_cast<int>(cfg_.foveal_factors.size()) * hidden;
  for (int u : cfg_.integral_thresholds) {
    const std::string prefix = "cls" + std::to_string(u) + ".";
    cls_w_.push_back(track(prefix + "w",
                           gaussian_param({cfg_.num_classes + 1, feat_dim},
                                          0.01, rng)));
    cls_b_.push_back(
        track(prefix + "b", Tensor::zeros({cfg_.num_classes + 1}, true)));
  }
  reg_w_ = track("reg.w", gaussian_param({4, feat_dim}, 0.001, rng));
  reg_b_ = track("reg.b", Tensor::zeros({4}, true));

  quantize_f32();
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("model: unknown parameter " + name);
}

void Model::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Model::quantize_f32() {
  for (auto& [name, t] : params_) {
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

FeaturePyramid Model::trunk_forward(const Tensor& image) const {
  const auto& is = image.shape();
  if (is.size() != 4 || is[0] != 1 || is[1] != cfg_.image_channels) {
    throw std::invalid_argument("trunk: expected image [1,C,H,W]");
  }
  if (is[2] % 16 != 0 || is[3] % 16 != 0) {
    throw std::invalid_argument("trunk: image sides must be divisible by 16");
  }
  FeaturePyramid pyr;
  Tensor x = image;
  for (int s = 0; s < 4; ++s) {
    x = max_pool2d(relu(conv2d(x, trunk_w_[s], trunk_b_[s], 1, 1)));
    if (s >= 1) {
      pyr.maps.push_back(x);
      pyr.strides.push_back(1 << (s + 1));
    }
  }
  return pyr;
}

Tensor Model::aggregate_skip(const FeaturePyramid& pyr, const Box& region,
                             int head_index,
                             std::optional<Quant> quant) const {
  const Quant mode = quant.value_or(cfg_.quantization);
  const auto& hp = heads_.at(head_index);
  const auto& taps = cfg_.skip_wiring.at(head_index);
  std::vector<Tensor> parts;
  parts.reserve(taps.size());
  for (std::size_t j = 0; j < taps.size(); ++j) {
    Tensor pooled = roi_pool(pyr.maps.at(taps[j]), region,
                             pyr.strides.at(taps[j]), cfg_.pool_size, mode);
    parts.push_back(l2_normalize_scaled(pooled, hp.gammas[j], kNormEps));
  }
  Tensor cat = parts.size() == 1 ? parts[0] : concat(parts, 0);
  const auto& cs = cat.shape();
  Tensor batched = reshape(cat, {1, cs[0], cs[1], cs[2]});
  Tensor reduced = conv2d(batched, hp.reduce_w, hp.reduce_b, 1, 0);
  return reshape(reduced, {cfg_.reduce_channels, cs[1], cs[2]});
}

Tensor Model::head_feature(const FeaturePyramid& pyr, const Box& proposal,
                           int head_index, const ForwardOptions& opts) const {
  const double img_w =
      static_cast<double>(pyr.maps[0].shape()[3] * pyr.strides[0]);
  const double img_h =
      static_cast<double>(pyr.maps[0].shape()[2] * pyr.strides[0]);
  const Box expanded =
      foveal_expand(proposal, cfg_.foveal_factors[head_index]);
  const auto region = clip_box(expanded, img_w, img_h);
  if (!region) {
    // Cannot happen for a proposal that itself intersects the image: the
    // expansion contains the proposal.
    throw std::invalid_argument("forward: foveal region off image");
  }
  const auto& hp = heads_[head_index];
  Tensor agg = aggregate_skip(pyr, *region, head_index, opts.quantization);
  Tensor flat = reshape(
      agg, {cfg_.reduce_channels * cfg_.pool_size * cfg_.pool_size});
  Tensor h1 = relu(linear(flat, hp.fc1_w, hp.fc1_b));
  const bool drop = opts.train && cfg_.dropout > 0.0;
  if (drop) {
    if (!opts.rng) {
      throw std::invalid_argument("forward: training mode needs an rng");
    }
    h1 = mul(h1, dropout_mask(h1.numel(), cfg_.dropout, *opts.rng));
  }
  Tensor h2 = relu(linear(h1, hp.fc2_w, hp.fc2_b));
  if (drop) {
    h2 = mul(h2, dropout_mask(h2.numel(), cfg_.dropout, *opts.rng));
  }
  return h2;
}

std::vector<HeadScores> Model::forward(const Tensor& image,
                                       const std::vector<Box>& proposals,
                                       const ForwardOptions& opts) const {
  const FeaturePyramid pyr = trunk_forward(image);
  const double img_h = static_cast<double>(image.shape()[2]);
  const double img_w = static_cast<double>(image.shape()[3]);

  std::vector<HeadScores> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto clipped = clip_box(proposals[i], img_w, img_h);
    if (!clipped) continue;  // off-image proposal: dropped, not an error
    std::vector<Tensor> feats;
    feats.reserve(heads_.size());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      feats.push_back(head_feature(pyr, *clipped, static_cast<int>(h), opts));
    }
    Tensor cat = feats.size() == 1 ? feats[0] : concat(feats, 0);
    HeadScores hs;
    hs.proposal_index = static_cast<int>(i);
    for (std::size_t u = 0; u < cls_w_.size(); ++u) {
      hs.p_u.push_back(softmax(linear(cat, cls_w_[u], cls_b_[u])));
    }
    hs.t = linear(cat, reg_w_, reg_b_);
    out.push_back(std::move(hs));
  }
  return out;
}

std::vector<double> average_heads(const HeadScores& s) {
  if (s.p_u.empty()) throw std::invalid_argument("average_heads: no heads");
  std::vector<double> p(s.p_u[0].data());
  for (std::size_t u = 1; u < s.p_u.size(); ++u) {
    const auto& d = s.p_u[u].data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += d[i];
  }
  const double inv = 1.0 / static_cast<double>(s.p_u.size());
  for (auto& v : p) v *= inv;
  return p;
}

void save_model(const Model& m, const std::string& path,
                const nlohmann::json& extra_meta) {
  nlohmann::json meta = extra_meta;
  meta["model_config"] = m.config().to_json();
  save_checkpoint(path, m.parameters(), meta);
}

Model load_model(const std::string& path) {
  const LoadedCheckpoint cp = load_checkpoint(path);
  if (!cp.meta.contains("model_config")) {
    throw std::runtime_error("checkpoint: missing model_config: " + path);
  }
  Model m(ModelConfig::from_json(cp.meta.at("model_config")), 0);
  for (auto& [name, t] : m.parameters()) {
    const Tensor* stored = cp.find(name);
    if (!stored || stored->shape() != t.shape()) {
      throw std::runtime_error("checkpoint: parameter mismatch for " + name);
    }
    t.data() = stored->data();
  }
  return m;
}

}  // namespace multipath
