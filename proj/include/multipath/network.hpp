#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "multipath/autograd.hpp"
#include "multipath/geometry.hpp"

namespace multipath {

struct ModelConfig {
  enum class Quantization { kFloorCeil, kRound };

  int num_classes = 3;  // foreground classes; softmax adds background at 0
  int image_channels = 3;
  std::vector<double> foveal_factors{1.0, 1.5, 2.0, 4.0};
  std::vector<int> integral_thresholds{50, 55, 60, 65, 70, 75};
  int pool_size = 7;
  // Stem + three tap stages; taps sit at strides 4, 8, 16.
  std::vector<int> trunk_channels{8, 8, 16, 32};
  int reduce_channels = 24;
  int head_hidden_dim = 64;
  // Per foveal head: which pyramid taps feed it (0 = stride 4, 1 = stride 8,
  // 2 = stride 16).
  std::vector<std::vector<int>> skip_wiring = default_wiring_for(4);
  Quantization quantization = Quantization::kFloorCeil;
  double dropout = 0.5;

  // Four heads get the published wiring (shallow taps only for tight crops);
  // any other head count wires every head to the deepest tap.
  static std::vector<std::vector<int>> default_wiring_for(std::size_t heads);

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct FeaturePyramid {
  std::vector<Tensor> maps;  // each [1,C,h,w]
  std::vector<int> strides;  // {4, 8, 16}
};

// Network outputs for one proposal: one probability vector per integral
// threshold plus a single shared box delta.
struct HeadScores {
  int proposal_index = -1;
  std::vector<Tensor> p_u;  // each [K+1], softmax output
  Tensor t;                 // [4] regression deltas
};

struct ForwardOptions {
  bool train = false;              // enables dropout
  std::mt19937_64* rng = nullptr;  // required when train and dropout > 0
  std::optional<ModelConfig::Quantization> quantization;  // override cfg
};

// Max-pools the feature-map region covered by `box` (image coordinates) into
// a fixed out_size x out_size grid. The region is quantized to whole feature
// cells per `mode`; bins subdivide it with floor/ceil boundaries. A region
// that quantizes to zero cells falls back to the single nearest cell.
// Differentiable towards `map` via argmax routing.
Tensor roi_pool(const Tensor& map, const Box& box, int stride, int out_size,
                ModelConfig::Quantization mode);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  Tensor parameter(const std::string& name) const;  // throws on unknown name

  void zero_grads();
  // Rounds every parameter to its nearest 32-bit float value, the invariant
  // the checkpoint format relies on for lossless round trips.
  void quantize_f32();

  FeaturePyramid trunk_forward(const Tensor& image) const;

  // `region` must already be foveal-expanded and clipped to the image.
  Tensor aggregate_skip(const FeaturePyramid& pyr, const Box& region,
                        int head_index,
                        std::optional<ModelConfig::Quantization> quant = {}) const;

  // Runs the full model on an image and its proposals. Proposals that do not
  // intersect the image are dropped; surviving entries carry their original
  // index in HeadScores::proposal_index.
  std::vector<HeadScores> forward(const Tensor& image,
                                  const std::vector<Box>& proposals,
                                  const ForwardOptions& opts = {}) const;

  static constexpr double kNormEps = 1e-4;

 private:
  struct HeadParams {
    std::vector<Tensor> gammas;  // one per wired tap
    Tensor reduce_w, reduce_b;
    Tensor fc1_w, fc1_b;
    Tensor fc2_w, fc2_b;
  };

  Tensor head_feature(const FeaturePyramid& pyr, const Box& proposal,
                      int head_index, const ForwardOptions& opts) const;

  ModelConfig cfg_;
  std::vector<Tensor> trunk_w_, trunk_b_;  // stem + 3 stages
  std::vector<HeadParams> heads_;
  std::vector<Tensor> cls_w_, cls_b_;  // one pair per integral threshold
  Tensor reg_w_, reg_b_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Mean of the per-threshold probability vectors.
std::vector<double> average_heads(const HeadScores& s);

// Persist config + parameters via the checkpoint format. `extra_meta` merges
// into the header metadata next to "model_config".
void save_model(const Model& m, const std::string& path,
                const nlohmann::json& extra_meta = nlohmann::json::object());
// Rebuilds a model with bitwise-identical parameters. Extra tensors in the
// file (e.g. optimizer state) are ignored here.
Model load_model(const std::string& path);

}  // namespace multipath
