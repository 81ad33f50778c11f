#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "multipath/geometry.hpp"
#include "multipath/synthdata.hpp"

using namespace multipath;

namespace {

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name)
      : path("/tmp/multipath_test_" + name) {}
  ~TempPath() { std::remove(path.c_str()); }
};

bool inside_image(const Box& b, int w, int h) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h;
}

double pixel(const Tensor& img, int c, int y, int x) {
  const auto& s = img.shape();
  return img.data()[(static_cast<std::size_t>(c) * s[2] + y) * s[3] + x];
}

}  // namespace

TEST_CASE("scene generation is bitwise deterministic") {
  SceneConfig cfg;
  cfg.seed = 11;
  const Scene a = generate_scene(cfg, 1234);
  const Scene b = generate_scene(cfg, 1234);
  REQUIRE(a.image.shape() == std::vector<int>{1, 3, 128, 128});
  CHECK(a.image.data() == b.image.data());
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].cls == b.objects[i].cls);
    CHECK(a.objects[i].box.x1 == b.objects[i].box.x1);
    CHECK(a.objects[i].box.y1 == b.objects[i].box.y1);
    CHECK(a.objects[i].box.x2 == b.objects[i].box.x2);
    CHECK(a.objects[i].box.y2 == b.objects[i].box.y2);
  }

  const Scene c = generate_scene(cfg, 1235);
  CHECK(a.image.data() != c.image.data());
}

TEST_CASE("annotations are valid boxes fully inside the image") {
  SceneConfig cfg;
  cfg.seed = 7;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Scene scene = generate_scene(cfg, s);
    for (const auto& g : scene.objects) {
      CHECK(g.box.valid());
      CHECK(inside_image(g.box, cfg.width, cfg.height));
      CHECK(g.cls >= 1);
      CHECK(g.cls <= cfg.num_classes);
    }
    for (double v : scene.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("annotation boxes are tight around the drawn pixels") {
  // One large object alone in the scene: its painted extent, measured by
  // scanning for pixels that differ from the background rendering, must match
  // the annotation box to raster resolution on all four sides.
  SceneConfig cfg;
  cfg.objects_mean = 1.0;
  cfg.clutter_mean = 0.0;
  cfg.occlusion_prob = 0.0;
  cfg.size_min = 48.0;
  cfg.size_small = 56.0;
  cfg.size_mid = 64.0;
  cfg.size_max = 80.0;

  SceneConfig empty_cfg = cfg;
  empty_cfg.objects_mean = 0.0;

  int checked = 0;
  for (std::uint64_t s = 0; s < 60 && checked < 12; ++s) {
    const Scene scene = generate_scene(cfg, s);
    if (scene.objects.size() != 1) continue;
    // The object stream follows the same background/clutter draws, so the
    // object-free rendering of the same seed is the exact background.
    const Scene plain = generate_scene(empty_cfg, s);
    const Box& gt = scene.objects[0].box;

    double x_lo = 1e9, x_hi = -1e9, y_lo = 1e9, y_hi = -1e9;
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        bool differs = false;
        for (int c = 0; c < 3 && !differs; ++c) {
          differs = pixel(scene.image, c, y, x) != pixel(plain.image, c, y, x);
        }
        if (!differs) continue;
        x_lo = std::min(x_lo, x + 0.5);
        x_hi = std::max(x_hi, x + 0.5);
        y_lo = std::min(y_lo, y + 0.5);
        y_hi = std::max(y_hi, y + 0.5);
      }
    }
    REQUIRE(x_lo <= x_hi);  // something was painted
    // Pixel centers sit up to a pixel inside the analytic boundary, and the
    // wedge apex/base corners taper thinner than a pixel for another ~1.5.
    CHECK(std::abs(x_lo - gt.x1) <= 2.5);
    CHECK(std::abs(x_hi - gt.x2) <= 2.5);
    CHECK(std::abs(y_lo - gt.y1) <= 2.5);
    CHECK(std::abs(y_hi - gt.y2) <= 2.5);
    // Nothing painted outside the annotation.
    CHECK(x_lo >= gt.x1 - 0.5);
    CHECK(x_hi <= gt.x2 + 0.5);
    CHECK(y_lo >= gt.y1 - 0.5);
    CHECK(y_hi <= gt.y2 + 0.5);
    ++checked;
  }
  CHECK(checked >= 8);
}

TEST_CASE("size law hits the calibrated small-object fractions") {
  SceneConfig cfg;
  cfg.seed = 3;
  int total = 0, below_16 = 0, below_32 = 0;
  double object_sum = 0.0;
  const int kScenes = 1000;
  for (std::uint64_t s = 0; s < kScenes; ++s) {
    const Scene scene = generate_scene(cfg, 900000 + s);
    object_sum += static_cast<double>(scene.objects.size());
    for (const auto& g : scene.objects) {
      const double scale = std::sqrt(g.box.area());
      ++total;
      below_16 += scale < 16.0;
      below_32 += scale < 32.0;
    }
  }
  const double mean_objects = object_sum / kScenes;
  CHECK(mean_objects == doctest::Approx(7.0).epsilon(0.05));
  REQUIRE(total > 5000);
  const double pct_16 = 100.0 * below_16 / total;
  const double pct_32 = 100.0 * below_32 / total;
  // Calibrated to 20% / 40%; clamping at image borders only affects large
  // boxes, so the tolerance is the Monte-Carlo noise band.
  CHECK(pct_16 > 15.0);
  CHECK(pct_16 < 25.0);
  CHECK(pct_32 > 35.0);
  CHECK(pct_32 < 45.0);
}

TEST_CASE("perfect proposals reproduce every ground truth box exactly") {
  SceneConfig cfg;
  cfg.seed = 21;
  const Scene scene = generate_scene(cfg, 77);
  REQUIRE(!scene.objects.empty());

  std::mt19937_64 rng(5);
  ProposalQuality q;
  q.quality = 1.0;
  q.count = 200;
  const auto props =
      simulate_proposals(scene.objects, cfg.width, cfg.height, q, rng);
  REQUIRE(static_cast<int>(props.size()) == q.count);

  for (const auto& g : scene.objects) {
    const bool found = std::any_of(props.begin(), props.end(), [&](const Box& p) {
      return p.x1 == g.box.x1 && p.y1 == g.box.y1 && p.x2 == g.box.x2 &&
             p.y2 == g.box.y2;
    });
    CHECK(found);
  }
  CHECK(proposal_recall(scene.objects, props, 50.0) == 100.0);
  for (const auto& p : props) {
    CHECK(p.valid());
    CHECK(inside_image(p, cfg.width, cfg.height));
  }
}

TEST_CASE("lower proposal quality lowers the best overlap") {
  SceneConfig cfg;
  cfg.seed = 30;
  int sharper = 0, trials = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Scene scene = generate_scene(cfg, 4000 + s);
    if (scene.objects.empty()) continue;
    ++trials;

    auto mean_best_iou = [&](double quality) {
      std::mt19937_64 rng(s);
      ProposalQuality q;
      q.quality = quality;
      q.count = 64;
      const auto props =
          simulate_proposals(scene.objects, cfg.width, cfg.height, q, rng);
      double sum = 0.0;
      for (const auto& g : scene.objects) {
        double best = 0.0;
        for (const auto& p : props) best = std::max(best, iou(p, g.box));
        sum += best;
      }
      return sum / static_cast<double>(scene.objects.size());
    };

    sharper += mean_best_iou(1.0) > mean_best_iou(0.0);
  }
  REQUIRE(trials >= 80);
  CHECK(sharper == trials);
}

TEST_CASE("proposal recall rises with the proposal budget") {
  SceneConfig cfg;
  cfg.seed = 44;
  double recall_small = 0.0, recall_large = 0.0;
  int trials = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const Scene scene = generate_scene(cfg, 6000 + s);
    if (scene.objects.size() < 3) continue;
    ++trials;
    ProposalQuality q;
    q.quality = 0.4;
    std::mt19937_64 rng_a(s), rng_b(s);
    q.count = 4;
    recall_small += proposal_recall(
        scene.objects,
        simulate_proposals(scene.objects, cfg.width, cfg.height, q, rng_a),
        50.0);
    q.count = 256;
    recall_large += proposal_recall(
        scene.objects,
        simulate_proposals(scene.objects, cfg.width, cfg.height, q, rng_b),
        50.0);
  }
  REQUIRE(trials >= 30);
  CHECK(recall_large / trials > recall_small / trials + 10.0);
  // A single proposal cannot cover several objects.
  const Scene scene = generate_scene(cfg, 6001);
  REQUIRE(scene.objects.size() >= 2);
  std::mt19937_64 rng(9);
  ProposalQuality one;
  one.count = 1;
  one.quality = 1.0;
  const auto props =
      simulate_proposals(scene.objects, cfg.width, cfg.height, one, rng);
  CHECK(proposal_recall(scene.objects, props, 50.0) < 100.0);
}

TEST_CASE("proposals without objects are all background and recall is vacuous") {
  std::mt19937_64 rng(1);
  ProposalQuality q;
  q.count = 32;
  const auto props = simulate_proposals({}, 128, 128, q, rng);
  REQUIRE(props.size() == 32);
  for (const auto& p : props) {
    CHECK(p.valid());
    CHECK(inside_image(p, 128, 128));
  }
  CHECK(proposal_recall({}, props, 50.0) == 100.0);
}

TEST_CASE("config and quality validation") {
  SceneConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SceneConfig bad = cfg;
  bad.width = 100;  // not a multiple of 16
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.channels = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.size_small = 40.0;  // breaks the ordering against size_mid
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.size_max = 120.0;  // cannot fit inside 128 with margin
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.frac_below_small = 0.6;  // above frac_below_mid
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.occlusion_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  ProposalQuality pq;
  pq.count = 0;
  CHECK_THROWS_AS(pq.validate(), std::invalid_argument);
  pq.count = 10;
  pq.quality = -0.1;
  CHECK_THROWS_AS(pq.validate(), std::invalid_argument);
}

TEST_CASE("dataset roundtrips through JSON and regenerates scenes bitwise") {
  SceneConfig cfg;
  cfg.seed = 99;
  const Dataset ds = build_dataset(cfg, 5);
  REQUIRE(ds.images.size() == 5);
  REQUIRE(ds.annotations.size() == 5);

  TempPath file("dataset.json");
  save_dataset(ds, file.path);
  const Dataset back = load_dataset(file.path);

  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].id == ds.images[i].id);
    CHECK(back.images[i].seed == ds.images[i].seed);
  }
  for (const auto& [id, anns] : ds.annotations) {
    const auto& loaded = back.annotations.at(id);
    REQUIRE(loaded.size() == anns.size());
    for (std::size_t i = 0; i < anns.size(); ++i) {
      CHECK(loaded[i].cls == anns[i].cls);
      CHECK(loaded[i].box.x1 == anns[i].box.x1);
      CHECK(loaded[i].box.y2 == anns[i].box.y2);
    }
  }

  // Pixels are regenerated from the stored seed, not stored.
  const Scene direct = generate_scene(cfg, ds.images[2].seed);
  const Scene via_dataset = scene_for(back, 2);
  CHECK(direct.image.data() == via_dataset.image.data());
  CHECK(back.annotations.at(2).size() == via_dataset.objects.size());

  CHECK_THROWS_AS(scene_for(back, 17), std::invalid_argument);
  CHECK_THROWS_AS(load_dataset("/nonexistent/ds.json"), std::runtime_error);
  CHECK_THROWS_AS(build_dataset(cfg, 0), std::invalid_argument);
}

TEST_CASE("distinct images get distinct seeds and contents") {
  SceneConfig cfg;
  cfg.seed = 5;
  const Dataset ds = build_dataset(cfg, 8);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.images.size(); ++j) {
      CHECK(ds.images[i].seed != ds.images[j].seed);
    }
  }
  const Scene a = scene_for(ds, 0);
  const Scene b = scene_for(ds, 1);
  CHECK(a.image.data() != b.image.data());
}

TEST_CASE("proposals JSONL roundtrip") {
  std::ostringstream os;
  write_proposals_jsonl(os, 0, {Box{1, 2, 3, 4}, Box{5, 6, 9, 8}});
  write_proposals_jsonl(os, 3, {Box{0.25, 0.5, 10.75, 20.125}});
  std::istringstream is(os.str());
  const auto by_image = read_proposals_jsonl(is);
  REQUIRE(by_image.size() == 2);
  REQUIRE(by_image.at(0).size() == 2);
  CHECK(by_image.at(0)[1].x2 == 9.0);
  CHECK(by_image.at(3)[0].y2 == 20.125);

  std::istringstream bad("{\"image_id\":0,\"box\":[1,2,3,4]}\nnot json\n");
  try {
    read_proposals_jsonl(bad);
    FAIL("expected a parse failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("single channel scenes and PPM dumps") {
  SceneConfig cfg;
  cfg.channels = 1;
  const Scene scene = generate_scene(cfg, 42);
  REQUIRE(scene.image.shape() == std::vector<int>{1, 1, 128, 128});

  TempPath file("scene.ppm");
  write_ppm(file.path, scene.image);
  std::ifstream in(file.path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P6");
  CHECK(w == 128);
  CHECK(h == 128);
  CHECK(maxval == 255);
  in.get();  // single whitespace after the header
  std::vector<char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK(in.gcount() == static_cast<std::streamsize>(bytes.size()));
}

TEST_CASE("scene config JSON roundtrip") {
  SceneConfig cfg;
  cfg.width = 64;
  cfg.height = 96;
  cfg.num_classes = 5;
  cfg.size_max = 40.0;
  cfg.seed = 1234567;
  const SceneConfig back = SceneConfig::from_json(cfg.to_json());
  CHECK(back.width == 64);
  CHECK(back.height == 96);
  CHECK(back.num_classes == 5);
  CHECK(back.size_max == 40.0);
  CHECK(back.seed == 1234567);
  CHECK(back.frac_below_mid == cfg.frac_below_mid);
}
