#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "multipath/cli.hpp"

using namespace multipath;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::path("/tmp") / ("multipath_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const {
    return (path / leaf).string();
  }
};

struct RunOutcome {
  int code = 0;
  std::string out;
  std::string err;
};

RunOutcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Tiny profile: 32x32 single-channel scenes, two heads, seconds to train.
std::string write_tiny_config(const TempDir& dir, int iterations = 8,
                              double lr = 0.001) {
  nlohmann::json j = {
      {"seed", 1},
      {"scene",
       {{"width", 32},
        {"height", 32},
        {"channels", 1},
        {"num_classes", 2},
        {"objects_mean", 2.0},
        {"clutter_mean", 1.0},
        {"size_min", 4.0},
        {"size_small", 8.0},
        {"size_mid", 12.0},
        {"size_max", 20.0}}},
      {"model",
       {{"image_channels", 1},
        {"num_classes", 2},
        {"trunk_channels", {2, 2, 3, 4}},
        {"reduce_channels", 4},
        {"head_hidden_dim", 8},
        {"pool_size", 3},
        {"foveal_factors", {1.0, 2.0}},
        {"integral_thresholds", {50, 75}},
        {"dropout", 0.0}}},
      {"loss", {{"thresholds", {50, 75}}}},
      // lr_final == lr_initial so a shortened --iters run (used to fake an
      // interrupted schedule in the resume test) steps identically to the
      // full-length one; the drop schedule itself is covered by the trainer
      // suite.
      {"train",
       {{"iterations", iterations},
        {"images_per_batch", 1},
        {"proposals_per_image", 8},
        {"lr_initial", lr},
        {"lr_final", lr}}},
      {"proposals", {{"count", 12}}},
      {"images", 4},
      {"eval_images", 3},
      {"inference", {{"max_detections", 20}}}};
  const std::string path = dir / "config.json";
  std::ofstream os(path);
  os << j.dump(2);
  return path;
}

}  // namespace

TEST_CASE("help and argument errors") {
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("Subcommands") != std::string::npos);

  CHECK(run({}).code == 1);                        // a subcommand is required
  CHECK(run({"frobnicate"}).code == 1);            // unknown subcommand
  CHECK(run({"plot"}).code == 1);                  // missing required inputs
  CHECK(run({"gen", "--config", "/nope.json"}).code == 2);
}

TEST_CASE("gen is deterministic and reports statistics") {
  TempDir dir("gen");
  const std::string cfg = write_tiny_config(dir);

  const auto a = run({"gen", "--config", cfg, "--out", dir / "a"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("images: 4") != std::string::npos);
  CHECK(a.out.find("proposal recall@50") != std::string::npos);

  const auto b = run({"gen", "--config", cfg, "--out", dir / "b"});
  REQUIRE(b.code == 0);
  CHECK(read_file(dir / "a/dataset.json") == read_file(dir / "b/dataset.json"));
  CHECK(read_file(dir / "a/proposals.jsonl") ==
        read_file(dir / "b/proposals.jsonl"));

  const auto c =
      run({"gen", "--config", cfg, "--out", dir / "c", "--seed", "2"});
  REQUIRE(c.code == 0);
  CHECK(read_file(dir / "a/dataset.json") != read_file(dir / "c/dataset.json"));
}

TEST_CASE("gen validation and IO failures") {
  TempDir dir("gen_err");
  const std::string cfg = write_tiny_config(dir);
  CHECK(run({"gen", "--config", cfg, "--out", dir / "x", "--images", "0"})
            .code == 1);

  std::ofstream(dir / "blocker") << "file";  // out dir below a regular file
  const auto r =
      run({"gen", "--config", cfg, "--out", dir / "blocker/sub"});
  CHECK(r.code == 2);
}

TEST_CASE("train writes a loss curve and checkpoint, deterministically") {
  TempDir dir("train");
  const std::string cfg = write_tiny_config(dir);

  const auto a = run({"train", "--config", cfg, "--out", dir / "a"});
  REQUIRE(a.code == 0);
  CHECK(fs::exists(dir / "a/model.ckpt"));
  const std::string csv_a = read_file(dir / "a/loss.csv");
  CHECK(count_lines(csv_a) == 9);  // header + 8 iterations

  const auto b = run({"train", "--config", cfg, "--out", dir / "b"});
  REQUIRE(b.code == 0);
  CHECK(csv_a == read_file(dir / "b/loss.csv"));
}

TEST_CASE("train resume matches the unbroken run") {
  TempDir dir("resume");
  const std::string cfg = write_tiny_config(dir);

  REQUIRE(run({"train", "--config", cfg, "--out", dir / "full"}).code == 0);
  REQUIRE(run({"train", "--config", cfg, "--out", dir / "part", "--iters",
               "4"})
              .code == 0);
  const auto resumed =
      run({"train", "--config", cfg, "--out", dir / "tail", "--resume",
           dir / "part/model.ckpt"});
  REQUIRE(resumed.code == 0);
  CHECK(resumed.out.find("resumed") != std::string::npos);

  // The resumed curve holds iterations 4..7; the unbroken run's last four
  // rows must match byte for byte.
  std::istringstream full(read_file(dir / "full/loss.csv"));
  std::istringstream tail(read_file(dir / "tail/loss.csv"));
  std::vector<std::string> full_rows, tail_rows;
  for (std::string line; std::getline(full, line);) full_rows.push_back(line);
  for (std::string line; std::getline(tail, line);) tail_rows.push_back(line);
  REQUIRE(full_rows.size() == 9);
  REQUIRE(tail_rows.size() == 5);  // header + 4 rows
  for (int i = 0; i < 4; ++i) {
    CHECK(tail_rows[1 + i] == full_rows[5 + i]);
  }
}

TEST_CASE("train exits 3 on numerical failure") {
  TempDir dir("nan");
  const std::string cfg = write_tiny_config(dir, 6, 1e30);
  const auto r = run({"train", "--config", cfg, "--out", dir / "x"});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("eval scores a perfect detections file at AP 100") {
  TempDir dir("eval_perfect");
  const std::string cfg = write_tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg, "--out", dir / "run"}).code == 0);

  // Ground truth replayed as detections.
  const Dataset ds = load_dataset(dir / "run/dataset.json");
  std::ofstream det(dir / "perfect.jsonl");
  for (const auto& [image_id, gts] : ds.annotations) {
    for (const auto& g : gts) {
      nlohmann::json j = {{"image_id", image_id},
                          {"class", g.cls},
                          {"score", 1.0},
                          {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}};
      det << j.dump() << "\n";
    }
  }
  det.close();

  const auto r = run({"eval", "--config", cfg, "--out", dir / "run",
                      "--detections", dir / "perfect.jsonl"});
  REQUIRE(r.code == 0);
  const auto result = nlohmann::json::parse(read_file(dir / "run/eval.json"));
  CHECK(result.at("ap").get<double>() == doctest::Approx(100.0));
  CHECK(fs::exists(dir / "run/ap_thresholds.csv"));
}

TEST_CASE("eval inference round trip with augmentation flags and ensemble") {
  TempDir dir("eval_full");
  const std::string cfg = write_tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg, "--out", dir / "run"}).code == 0);
  REQUIRE(run({"train", "--config", cfg, "--out", dir / "run"}).code == 0);

  const auto base = run({"eval", "--config", cfg, "--out", dir / "run"});
  REQUIRE(base.code == 0);
  CHECK(fs::exists(dir / "run/detections.jsonl"));
  const auto result = nlohmann::json::parse(read_file(dir / "run/eval.json"));
  const double ap = result.at("ap").get<double>();
  CHECK(ap >= 0.0);
  CHECK(ap <= 100.0);

  // Determinism, including under a thread cap.
  const std::string first = read_file(dir / "run/detections.jsonl");
  setenv("MULTIPATH_THREADS", "2", 1);
  const auto again = run({"eval", "--config", cfg, "--out", dir / "run"});
  unsetenv("MULTIPATH_THREADS");
  REQUIRE(again.code == 0);
  CHECK(first == read_file(dir / "run/detections.jsonl"));

  const auto augmented =
      run({"eval", "--config", cfg, "--out", dir / "aug", "--dataset",
           dir / "run/dataset.json", "--checkpoint", dir / "run/model.ckpt",
           "--ensemble", dir / "run/model.ckpt", "--hflip", "--fmp",
           "--nms-threshold", "40", "--proposals", "16", "--quality", "0.7"});
  REQUIRE(augmented.code == 0);
}

TEST_CASE("eval IO failures exit 2") {
  TempDir dir("eval_err");
  const std::string cfg = write_tiny_config(dir);
  // No dataset generated yet.
  CHECK(run({"eval", "--config", cfg, "--out", dir / "none"}).code == 2);

  REQUIRE(run({"gen", "--config", cfg, "--out", dir / "run"}).code == 0);
  CHECK(run({"eval", "--config", cfg, "--out", dir / "run", "--checkpoint",
             dir / "missing.ckpt"})
            .code == 2);
}

TEST_CASE("ablate emits exactly six deterministic rows") {
  TempDir dir("ablate");
  const std::string cfg = write_tiny_config(dir);

  const auto a = run({"ablate", "--config", cfg, "--out", dir / "a",
                      "--iters", "2"});
  REQUIRE(a.code == 0);
  const std::string csv = read_file(dir / "a/ablation.csv");
  CHECK(count_lines(csv) == 7);  // header + 6 rows
  std::istringstream is(csv);
  std::string header, row1;
  std::getline(is, header);
  std::getline(is, row1);
  CHECK(header == "integral,foveal,skip,ap,ap50,ap75");
  CHECK(row1.rfind("0,0,0,", 0) == 0);  // baseline row first

  const auto b = run({"ablate", "--config", cfg, "--out", dir / "b",
                      "--iters", "2"});
  REQUIRE(b.code == 0);
  CHECK(csv == read_file(dir / "b/ablation.csv"));
}

TEST_CASE("plot renders one SVG per metric and matches the golden file") {
  TempDir dir("plot");
  const std::string src = std::string(MP_SOURCE_DIR) + "/tests/data";

  const auto r =
      run({"plot", "--out", dir / "svg", src + "/monotone.csv"});
  REQUIRE(r.code == 0);
  CHECK(read_file(dir / "svg/monotone_ap.svg") ==
        read_file(src + "/monotone_ap.golden.svg"));

  // Three columns: x plus two metrics, one chart each.
  std::ofstream(dir / "two.csv") << "iter,ap,ap50\n0,1,2\n1,2,3\n";
  REQUIRE(run({"plot", "--out", dir / "svg", dir / "two.csv"}).code == 0);
  CHECK(fs::exists(dir / "svg/two_ap.svg"));
  CHECK(fs::exists(dir / "svg/two_ap50.svg"));

  std::ofstream(dir / "bad.csv") << "x,y\n1,2\n3,oops\n";
  const auto bad = run({"plot", "--out", dir / "svg", dir / "bad.csv"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("line 3") != std::string::npos);

  std::ofstream(dir / "empty.csv") << "x,y\n";
  CHECK(run({"plot", "--out", dir / "svg", dir / "empty.csv"}).code == 1);

  CHECK(run({"plot", "--out", dir / "svg", dir / "missing.csv"}).code == 2);
}

TEST_CASE("run config parsing: partial sections, seed plumbing, roundtrip") {
  TempDir dir("cfg");
  {
    std::ofstream os(dir / "partial.json");
    os << R"({"seed": 9, "train": {"iterations": 17}})";
  }
  const RunConfig cfg = load_run_config(dir / "partial.json");
  CHECK(cfg.seed == 9);
  CHECK(cfg.scene.seed == 9);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.iterations == 17);
  CHECK(cfg.scene.width == 128);                  // untouched default
  CHECK(cfg.model.foveal_factors.size() == 4);    // untouched default

  const RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  {
    std::ofstream os(dir / "broken.json");
    os << "{ not json";
  }
  std::ostringstream out, err;
  CHECK(run_cli({"gen", "--config", dir / "broken.json"}, out, err) == 1);

  // Inconsistent channel counts are caught before any work happens.
  {
    std::ofstream os(dir / "mismatch.json");
    os << R"({"scene": {"channels": 1}})";
  }
  CHECK(run_cli({"gen", "--config", dir / "mismatch.json", "--out",
                 dir / "x"},
                out, err) == 1);
}
