#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "multipath/inference.hpp"
#include "multipath/network.hpp"
#include "multipath/synthdata.hpp"
#include "multipath/trainer.hpp"

namespace multipath {

// One JSON file wiring every pipeline stage. Any section or field may be
// omitted; missing values keep these defaults. File paths default to
// locations inside the output directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/out";
  SceneConfig scene;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  InferenceOptions inference;
  ProposalQuality proposals;
  int gen_images = 200;   // scenes written by `gen` / used for training
  int eval_images = 50;   // held-out scenes for the ablation sweep

  // Empty means "<out>/dataset.json", "<out>/proposals.jsonl",
  // "<out>/model.ckpt".
  std::string dataset_path;
  std::string proposals_path;
  std::string checkpoint_path;
  // When set, `eval` scores this detections file instead of running a model.
  std::string detections_path;

  // Points the scene and trainer seeds at `s` so one value reproduces the
  // whole run.
  void apply_seed(std::uint64_t s);

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::string& path);

// Resolved artifact locations.
std::string dataset_file(const RunConfig& cfg);
std::string proposals_file(const RunConfig& cfg);
std::string checkpoint_file(const RunConfig& cfg);

// Full command-line entry point (args exclude the program name). Returns the
// process exit code: 0 success, 1 validation error, 2 IO error, 3 numerical
// failure. All human-readable output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace multipath
