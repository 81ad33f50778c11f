#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "multipath/autograd.hpp"
#include "multipath/targets.hpp"

namespace multipath {

// Scene generator configuration. The size law is piecewise log-uniform over
// the box scale sqrt(area) with calibrated mass below the two breakpoints,
// matching the published small-object statistics (40% under 32x32, 20%
// under 16x16) by construction.
struct SceneConfig {
  int width = 128;
  int height = 128;
  int channels = 3;  // 1 or 3
  int num_classes = 3;
  double objects_mean = 7.0;    // Poisson mean objects per image
  double clutter_mean = 8.0;    // Poisson mean unannotated distractors
  double occlusion_prob = 0.3;  // chance an object is placed onto another
  double size_min = 8.0;
  double size_small = 16.0;  // first breakpoint (box scale, pixels)
  double size_mid = 32.0;    // second breakpoint
  double size_max = 80.0;
  double frac_below_small = 0.2;  // mass with scale < size_small
  double frac_below_mid = 0.4;    // mass with scale < size_mid
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

struct Scene {
  Tensor image;  // [1,C,H,W], values in [0,1]
  std::vector<GroundTruth> objects;
};

// Renders one scene deterministically from (cfg, scene_seed): noisy
// background, faint clutter, then the annotated objects (disks, blocks and
// wedges in class-specific colors). Every annotation is the analytic tight
// box of its shape, kept fully inside the image; occluded objects keep their
// full box.
Scene generate_scene(const SceneConfig& cfg, std::uint64_t scene_seed);

struct ProposalQuality {
  double quality = 1.0;  // 0 = sloppy, 1 = jitter-free
  int count = 100;       // proposals per image

  void validate() const;
};

// Mixture of jittered ground-truth boxes (center noise scaled by
// (1-quality)*size, log-size noise scaled by (1-quality)) and uniform
// background boxes. The foreground picks cycle through the objects, so at
// quality 1 with enough proposals every ground truth appears exactly.
// Without objects every proposal is background. All results are valid boxes
// inside the image.
std::vector<Box> simulate_proposals(const std::vector<GroundTruth>& objects,
                                    int width, int height,
                                    const ProposalQuality& q,
                                    std::mt19937_64& rng);

// Fraction (percent) of ground truths whose best proposal IoU reaches the
// threshold.
double proposal_recall(const std::vector<GroundTruth>& objects,
                       const std::vector<Box>& proposals, double iou_threshold);

// Dataset = config + per-image regeneration seeds + annotations. Pixels are
// never stored; scene_for re-renders them bitwise identically.
struct Dataset {
  struct Image {
    int id = 0;
    int width = 0;
    int height = 0;
    std::uint64_t seed = 0;
  };

  SceneConfig config;
  std::vector<Image> images;
  std::map<int, std::vector<GroundTruth>> annotations;  // by image id

  nlohmann::json to_json() const;
  static Dataset from_json(const nlohmann::json& j);
};

Dataset build_dataset(const SceneConfig& cfg, int num_images);
Scene scene_for(const Dataset& ds, int image_id);  // throws on unknown id

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);  // throws std::runtime_error

// One JSON object per line: {"image_id":..,"box":[x1,y1,x2,y2]}.
void write_proposals_jsonl(std::ostream& os, int image_id,
                           const std::vector<Box>& proposals);
std::map<int, std::vector<Box>> read_proposals_jsonl(std::istream& is);

// Binary PPM (P6) dump for eyeballing scenes; single-channel images write as
// gray RGB.
void write_ppm(const std::string& path, const Tensor& image);

}  // namespace multipath
