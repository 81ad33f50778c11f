#include "multipath/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "multipath/geometry.hpp"

namespace multipath {

namespace {

// Hand-rolled draws: keeping the sample streams explicit means bitwise
// reproducibility depends only on mt19937_64, not on library distribution
// internals.
double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double a, double b) {
  return a + (b - a) * u01(rng);
}

int uniform_int(std::mt19937_64& rng, int n) {  // [0, n)
  const int v = static_cast<int>(u01(rng) * n);
  return v >= n ? n - 1 : v;
}

double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - u01(rng);  // avoid log(0)
  const double u2 = u01(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

int poisson(std::mt19937_64& rng, double lambda) {
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= u01(rng);
  } while (p > limit);
  return k - 1;
}

std::uint64_t mix64(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// ---- shapes ------------------------------------------------------------------

enum Kind { kDisk = 0, kBlock, kWedge };

const char* kKindNames[3] = {"disk", "block", "wedge"};

const double kPalette[6][3] = {{0.85, 0.25, 0.20}, {0.20, 0.75, 0.30},
                               {0.25, 0.35, 0.85}, {0.85, 0.75, 0.20},
                               {0.75, 0.25, 0.80}, {0.20, 0.75, 0.80}};

struct Shape {
  int kind = kBlock;
  Box box;
  double apex_t = 0.5;  // wedge apex position along the top edge

  bool contains(double x, double y) const {
    if (x < box.x1 || x > box.x2 || y < box.y1 || y > box.y2) return false;
    switch (kind) {
      case kBlock:
        return true;
      case kDisk: {
        const double dx = (x - box.cx()) / (0.5 * box.width());
        const double dy = (y - box.cy()) / (0.5 * box.height());
        return dx * dx + dy * dy <= 1.0;
      }
      default: {  // wedge: apex on the top edge, base spanning the bottom
        const double apex_x = box.x1 + apex_t * box.width();
        const double f = (y - box.y1) / box.height();
        const double left = apex_x + (box.x1 - apex_x) * f;
        const double right = apex_x + (box.x2 - apex_x) * f;
        return x >= left && x <= right;
      }
    }
  }
};

void draw_shape(std::vector<double>& data, int channels, int width, int height,
                const Shape& s, const double color[3]) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(s.box.x1)));
  const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(s.box.x2)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(s.box.y1)));
  const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(s.box.y2)));
  const double gray = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      if (!s.contains(x + 0.5, y + 0.5)) continue;
      if (channels == 1) {
        data[static_cast<std::size_t>(y) * width + x] = gray;
      } else {
        for (int c = 0; c < 3; ++c) {
          data[(static_cast<std::size_t>(c) * height + y) * width + x] =
              color[c];
        }
      }
    }
  }
}

double sample_scale(std::mt19937_64& rng, const SceneConfig& cfg) {
  const double u = u01(rng);
  double lo = cfg.size_mid, hi = cfg.size_max;
  if (u < cfg.frac_below_small) {
    lo = cfg.size_min;
    hi = cfg.size_small;
  } else if (u < cfg.frac_below_mid) {
    lo = cfg.size_small;
    hi = cfg.size_mid;
  }
  return std::exp(uniform(rng, std::log(lo), std::log(hi)));
}

std::string category_name(int cls) {
  std::string name = kKindNames[(cls - 1) % 3];
  if (cls > 3) name += "_" + std::to_string((cls - 1) / 3 + 1);
  return name;
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 16 || height < 16 || width % 16 || height % 16) {
    throw std::invalid_argument(
        "scene: image sides must be positive multiples of 16");
  }
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("scene: channels must be 1 or 3");
  }
  if (num_classes < 1) {
    throw std::invalid_argument("scene: need at least one class");
  }
  if (objects_mean < 0.0 || clutter_mean < 0.0) {
    throw std::invalid_argument("scene: means must be >= 0");
  }
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0) {
    throw std::invalid_argument("scene: occlusion_prob must be in [0,1]");
  }
  if (!(size_min >= 2.0 && size_min < size_small && size_small < size_mid &&
        size_mid < size_max)) {
    throw std::invalid_argument("scene: size breakpoints must increase");
  }
  if (size_max * 1.3 > std::min(width, height) - 2) {
    throw std::invalid_argument("scene: size_max too large for the image");
  }
  if (frac_below_small < 0.0 || frac_below_small > frac_below_mid ||
      frac_below_mid > 1.0) {
    throw std::invalid_argument("scene: size fractions must be ordered");
  }
}

nlohmann::json SceneConfig::to_json() const {
  return nlohmann::json{{"width", width},
                        {"height", height},
                        {"channels", channels},
                        {"num_classes", num_classes},
                        {"objects_mean", objects_mean},
                        {"clutter_mean", clutter_mean},
                        {"occlusion_prob", occlusion_prob},
                        {"size_min", size_min},
                        {"size_small", size_small},
                        {"size_mid", size_mid},
                        {"size_max", size_max},
                        {"frac_below_small", frac_below_small},
                        {"frac_below_mid", frac_below_mid},
                        {"seed", seed}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig cfg;
  cfg.width = j.at("width").get<int>();
  cfg.height = j.at("height").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.objects_mean = j.at("objects_mean").get<double>();
  cfg.clutter_mean = j.at("clutter_mean").get<double>();
  cfg.occlusion_prob = j.at("occlusion_prob").get<double>();
  cfg.size_min = j.at("size_min").get<double>();
  cfg.size_small = j.at("size_small").get<double>();
  cfg.size_mid = j.at("size_mid").get<double>();
  cfg.size_max = j.at("size_max").get<double>();
  cfg.frac_below_small = j.at("frac_below_small").get<double>();
  cfg.frac_below_mid = j.at("frac_below_mid").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

Scene generate_scene(const SceneConfig& cfg, std::uint64_t scene_seed) {
  cfg.validate();
  std::mt19937_64 rng(scene_seed);
  const int W = cfg.width, H = cfg.height, C = cfg.channels;

  // Background: per-channel base, gentle gradient, shared gray noise.
  double base[3];
  for (double& b : base) b = uniform(rng, 0.08, 0.30);
  const double gx = uniform(rng, -0.10, 0.10);
  const double gy = uniform(rng, -0.10, 0.10);
  std::vector<double> data(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double noise = uniform(rng, -0.04, 0.04);
      const double drift =
          gx * (static_cast<double>(x) / W) + gy * (static_cast<double>(y) / H);
      if (C == 1) {
        data[static_cast<std::size_t>(y) * W + x] =
            clamp01(base[0] + drift + noise);
      } else {
        for (int c = 0; c < 3; ++c) {
          data[(static_cast<std::size_t>(c) * H + y) * W + x] =
              clamp01(base[c] + drift + noise);
        }
      }
    }
  }

  // Faint unannotated clutter under the objects.
  const int n_clutter = poisson(rng, cfg.clutter_mean);
  for (int i = 0; i < n_clutter; ++i) {
    Shape s;
    s.kind = uniform_int(rng, 3);
    const double scale = uniform(rng, 4.0, 18.0);
    const double aspect = uniform(rng, 0.65, 1.55);
    const double w = scale * std::sqrt(aspect);
    const double h = scale / std::sqrt(aspect);
    const double cx = uniform(rng, 0.0, W);
    const double cy = uniform(rng, 0.0, H);
    s.box = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    s.apex_t = uniform(rng, 0.25, 0.75);
    double color[3];
    for (int c = 0; c < 3; ++c) {
      color[c] = clamp01(base[c] + uniform(rng, -0.12, 0.12));
    }
    draw_shape(data, C, W, H, s, color);
  }

  // Annotated objects; occluders are placed onto an earlier object.
  Scene scene;
  const int n_objects = poisson(rng, cfg.objects_mean);
  for (int i = 0; i < n_objects; ++i) {
    const int cls = 1 + uniform_int(rng, cfg.num_classes);
    const double scale = sample_scale(rng, cfg);
    const double aspect = uniform(rng, 0.65, 1.55);
    double w = std::min(scale * std::sqrt(aspect), W - 2.0);
    double h = std::min(scale / std::sqrt(aspect), H - 2.0);
    double cx, cy;
    if (!scene.objects.empty() && u01(rng) < cfg.occlusion_prob) {
      const auto& prev =
          scene.objects[uniform_int(rng, static_cast<int>(scene.objects.size()))]
              .box;
      cx = prev.cx() + normal(rng) * prev.width() / 3.0;
      cy = prev.cy() + normal(rng) * prev.height() / 3.0;
    } else {
      cx = uniform(rng, w / 2, W - w / 2);
      cy = uniform(rng, h / 2, H - h / 2);
    }
    cx = std::min(W - w / 2, std::max(w / 2, cx));
    cy = std::min(H - h / 2, std::max(h / 2, cy));

    Shape s;
    s.kind = (cls - 1) % 3;
    s.box = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    s.apex_t = uniform(rng, 0.25, 0.75);
    const double* pal = kPalette[(cls - 1) % 6];
    double color[3];
    for (int c = 0; c < 3; ++c) {
      color[c] = clamp01(pal[c] + uniform(rng, -0.08, 0.08));
    }
    draw_shape(data, C, W, H, s, color);
    scene.objects.push_back(GroundTruth{s.box, cls});
  }

  scene.image = Tensor::from({1, C, H, W}, std::move(data));
  return scene;
}

void ProposalQuality::validate() const {
  if (count < 1) throw std::invalid_argument("proposals: count must be >= 1");
  if (quality < 0.0 || quality > 1.0) {
    throw std::invalid_argument("proposals: quality must be in [0,1]");
  }
}

std::vector<Box> simulate_proposals(const std::vector<GroundTruth>& objects,
                                    int width, int height,
                                    const ProposalQuality& q,
                                    std::mt19937_64& rng) {
  q.validate();
  if (width < 1 || height < 1) {
    throw std::invalid_argument("proposals: bad image size");
  }
  // Real proposal generators emit mostly background; keeping foreground
  // boxes the minority also gives a classifier trained on these proposals
  // enough background variety for its scoring to transfer to fresh boxes.
  constexpr double kForegroundFraction = 0.25;
  std::vector<Box> out;
  out.reserve(q.count);
  std::size_t cursor = 0;
  for (int i = 0; i < q.count; ++i) {
    std::optional<Box> box;
    if (!objects.empty() && u01(rng) < kForegroundFraction) {
      const Box& g = objects[cursor++ % objects.size()].box;
      const double w = g.width(), h = g.height();
      const double size = std::sqrt(w * h);
      const double center_sigma = 0.35 * (1.0 - q.quality) * size;
      const double log_sigma = 0.5 * (1.0 - q.quality);
      const double dx = normal(rng) * center_sigma;
      const double dy = normal(rng) * center_sigma;
      const double nw = w * std::exp(normal(rng) * log_sigma);
      const double nh = h * std::exp(normal(rng) * log_sigma);
      // Zero jitter passes the annotation through bitwise; rebuilding from
      // center and size would reintroduce rounding.
      const Box jittered =
          center_sigma == 0.0 && log_sigma == 0.0
              ? g
              : Box{g.cx() + dx - nw / 2, g.cy() + dy - nh / 2,
                    g.cx() + dx + nw / 2, g.cy() + dy + nh / 2};
      box = clip_box(jittered, width, height);
    }
    if (!box) {  // background proposal, fully inside the image
      const double w = uniform(rng, 6.0, width * 0.5);
      const double h = uniform(rng, 6.0, height * 0.5);
      const double x = uniform(rng, 0.0, width - w);
      const double y = uniform(rng, 0.0, height - h);
      box = Box{x, y, x + w, y + h};
    }
    out.push_back(*box);
  }
  return out;
}

double proposal_recall(const std::vector<GroundTruth>& objects,
                       const std::vector<Box>& proposals,
                       double iou_threshold) {
  if (objects.empty()) return 100.0;
  int hit = 0;
  for (const auto& g : objects) {
    double best = 0.0;
    for (const auto& p : proposals) best = std::max(best, iou(p, g.box));
    hit += best >= iou_threshold;
  }
  return 100.0 * hit / static_cast<double>(objects.size());
}

Dataset build_dataset(const SceneConfig& cfg, int num_images) {
  cfg.validate();
  if (num_images < 1) {
    throw std::invalid_argument("dataset: need at least one image");
  }
  Dataset ds;
  ds.config = cfg;
  for (int id = 0; id < num_images; ++id) {
    const std::uint64_t scene_seed = mix64(cfg.seed, id);
    const Scene scene = generate_scene(cfg, scene_seed);
    ds.images.push_back(Dataset::Image{id, cfg.width, cfg.height, scene_seed});
    ds.annotations[id] = scene.objects;
  }
  return ds;
}

Scene scene_for(const Dataset& ds, int image_id) {
  for (const auto& img : ds.images) {
    if (img.id == image_id) return generate_scene(ds.config, img.seed);
  }
  throw std::invalid_argument("dataset: unknown image id " +
                              std::to_string(image_id));
}

nlohmann::json Dataset::to_json() const {
  nlohmann::json j;
  j["config"] = config.to_json();
  j["images"] = nlohmann::json::array();
  for (const auto& img : images) {
    j["images"].push_back({{"id", img.id},
                           {"width", img.width},
                           {"height", img.height},
                           {"seed", img.seed}});
  }
  j["annotations"] = nlohmann::json::array();
  for (const auto& [image_id, list] : annotations) {
    for (const auto& g : list) {
      j["annotations"].push_back(
          {{"image_id", image_id},
           {"class", g.cls},
           {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}});
    }
  }
  j["categories"] = nlohmann::json::array();
  for (int c = 1; c <= config.num_classes; ++c) {
    j["categories"].push_back({{"id", c}, {"name", category_name(c)}});
  }
  return j;
}

Dataset Dataset::from_json(const nlohmann::json& j) {
  Dataset ds;
  ds.config = SceneConfig::from_json(j.at("config"));
  for (const auto& img : j.at("images")) {
    Dataset::Image rec;
    rec.id = img.at("id").get<int>();
    rec.width = img.at("width").get<int>();
    rec.height = img.at("height").get<int>();
    rec.seed = img.at("seed").get<std::uint64_t>();
    ds.images.push_back(rec);
    ds.annotations[rec.id];  // images without objects keep an entry
  }
  for (const auto& ann : j.at("annotations")) {
    const auto& b = ann.at("box");
    Box box{b.at(0).get<double>(), b.at(1).get<double>(),
            b.at(2).get<double>(), b.at(3).get<double>()};
    if (!box.valid()) {
      throw std::runtime_error("dataset: invalid annotation box");
    }
    ds.annotations[ann.at("image_id").get<int>()].push_back(
        GroundTruth{box, ann.at("class").get<int>()});
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("dataset: cannot write " + path);
  os << ds.to_json().dump(2) << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot read " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("dataset: bad JSON in " + path + ": " + e.what());
  }
  return Dataset::from_json(j);
}

void write_proposals_jsonl(std::ostream& os, int image_id,
                           const std::vector<Box>& proposals) {
  for (const auto& b : proposals) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["box"] = {b.x1, b.y1, b.x2, b.y2};
    os << j.dump() << '\n';
  }
}

std::map<int, std::vector<Box>> read_proposals_jsonl(std::istream& is) {
  std::map<int, std::vector<Box>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      const auto& b = j.at("box");
      out[j.at("image_id").get<int>()].push_back(
          Box{b.at(0).get<double>(), b.at(1).get<double>(),
              b.at(2).get<double>(), b.at(3).get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("proposals: bad record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  const auto& s = image.shape();
  if (s.size() != 4 || s[0] != 1 || (s[1] != 1 && s[1] != 3)) {
    throw std::invalid_argument("ppm: expected a [1,{1|3},H,W] image");
  }
  const int C = s[1], H = s[2], W = s[3];
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot write " + path);
  os << "P6\n" << W << ' ' << H << "\n255\n";
  const auto& d = image.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = C == 1 ? 0 : c;
        const double v = d[(static_cast<std::size_t>(src) * H + y) * W + x];
        const long byte = std::lround(clamp01(v) * 255.0);
        os.put(static_cast<char>(byte));
      }
    }
  }
}

}  // namespace multipath
