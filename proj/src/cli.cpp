#include "multipath/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "multipath/evaluation.hpp"
#include "multipath/svgplot.hpp"

namespace multipath {

namespace {

std::uint64_t mix64(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream salts keeping the independent random streams apart.
constexpr std::uint64_t kProposalSalt = 0x70726F70ULL;   // proposal jitter
constexpr std::uint64_t kModelSalt = 0x6D6F64656CULL;    // weight init
constexpr std::uint64_t kHoldoutSalt = 0x6576616CULL;    // ablation eval set

std::string fmt1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir);
  }
}

int thread_budget(std::size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("MULTIPATH_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<unsigned>(n, cap);
    else n = 1;
  }
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs fn(i) for i in [0, jobs) across the thread budget. fn must be pure
// per index; results land in caller-owned slots so ordering is preserved.
template <typename Fn>
void parallel_for(std::size_t jobs, const Fn& fn) {
  const int threads = thread_budget(jobs);
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---- config (de)serialization --------------------------------------------

nlohmann::json merge_shallow(nlohmann::json base, const nlohmann::json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    base[it.key()] = it.value();
  }
  return base;
}

nlohmann::json loss_to_json(const LossConfig& c) {
  return {{"lambda", c.lambda},
          {"thresholds", c.thresholds},
          {"smooth_l1_delta", c.smooth_l1_delta}};
}

LossConfig loss_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.thresholds = j.value("thresholds", c.thresholds);
  c.smooth_l1_delta = j.value("smooth_l1_delta", c.smooth_l1_delta);
  return c;
}

nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"images_per_batch", c.images_per_batch},
          {"proposals_per_image", c.proposals_per_image},
          {"lr_initial", c.lr_initial},
          {"lr_final", c.lr_final},
          {"lr_drop_fraction", c.lr_drop_fraction},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"pos_fraction", c.pos_fraction},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.images_per_batch = j.value("images_per_batch", c.images_per_batch);
  c.proposals_per_image = j.value("proposals_per_image", c.proposals_per_image);
  c.lr_initial = j.value("lr_initial", c.lr_initial);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.lr_drop_fraction = j.value("lr_drop_fraction", c.lr_drop_fraction);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.pos_fraction = j.value("pos_fraction", c.pos_fraction);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  return c;
}

nlohmann::json inference_to_json(const InferenceOptions& c) {
  return {{"nms_threshold", c.nms_threshold},
          {"max_detections", c.max_detections},
          {"proposals_per_image", c.proposals_per_image},
          {"hflip", c.hflip},
          {"fmp", c.fmp},
          {"ensemble", c.ensemble}};
}

InferenceOptions inference_from_json(const nlohmann::json& j) {
  InferenceOptions c;
  c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
  c.max_detections = j.value("max_detections", c.max_detections);
  c.proposals_per_image = j.value("proposals_per_image", c.proposals_per_image);
  c.hflip = j.value("hflip", c.hflip);
  c.fmp = j.value("fmp", c.fmp);
  c.ensemble = j.value("ensemble", c.ensemble);
  return c;
}

nlohmann::json quality_to_json(const ProposalQuality& q) {
  return {{"quality", q.quality}, {"count", q.count}};
}

ProposalQuality quality_from_json(const nlohmann::json& j) {
  ProposalQuality q;
  q.quality = j.value("quality", q.quality);
  q.count = j.value("count", q.count);
  return q;
}

// ---- shared pipeline pieces ------------------------------------------------

std::vector<Box> simulate_image_proposals(const SceneConfig& scene,
                                          const std::vector<GroundTruth>& gts,
                                          int image_id,
                                          const ProposalQuality& q) {
  std::mt19937_64 rng(mix64(scene.seed ^ kProposalSalt, image_id));
  return simulate_proposals(gts, scene.width, scene.height, q, rng);
}

std::map<int, std::vector<Box>> proposals_for_dataset(const Dataset& ds,
                                                      const ProposalQuality& q) {
  std::map<int, std::vector<Box>> out;
  for (const auto& img : ds.images) {
    out[img.id] =
        simulate_image_proposals(ds.config, ds.annotations.at(img.id), img.id, q);
  }
  return out;
}

std::map<int, std::vector<Box>> load_proposals(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read proposals file " + path);
  return read_proposals_jsonl(is);
}

std::vector<TrainingExample> make_examples(
    const Dataset& ds, const std::map<int, std::vector<Box>>& proposals) {
  std::vector<TrainingExample> out;
  out.reserve(ds.images.size());
  for (const auto& img : ds.images) {
    const auto it = proposals.find(img.id);
    if (it == proposals.end() || it->second.empty()) {
      throw std::invalid_argument("no proposals for image id " +
                                  std::to_string(img.id));
    }
    out.push_back(TrainingExample{scene_for(ds, img.id).image, it->second,
                                  ds.annotations.at(img.id)});
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << body;
}

DetectionsByImage run_detection(const Dataset& ds,
                                const std::map<int, std::vector<Box>>& proposals,
                                const std::vector<const Model*>& models,
                                const InferenceOptions& opts) {
  std::vector<std::vector<Detection>> results(ds.images.size());
  parallel_for(ds.images.size(), [&](std::size_t i) {
    const auto& img = ds.images[i];
    const Scene scene = generate_scene(ds.config, img.seed);
    const auto it = proposals.find(img.id);
    results[i] = detect(scene.image,
                        it == proposals.end() ? std::vector<Box>{} : it->second,
                        models, opts);
  });
  DetectionsByImage dets;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    dets[ds.images[i].id] = std::move(results[i]);
  }
  return dets;
}

EvalResult evaluate_model_on(const Dataset& ds,
                             const std::map<int, std::vector<Box>>& proposals,
                             const Model& model, const InferenceOptions& opts) {
  const DetectionsByImage dets =
      run_detection(ds, proposals, {&model}, opts);
  return evaluate(dets, ds.annotations);
}

// ---- commands ----------------------------------------------------------------

int cmd_gen(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Dataset ds = build_dataset(cfg.scene, cfg.gen_images);
  ensure_dir(cfg.out);
  save_dataset(ds, dataset_file(cfg));

  std::ofstream pf(proposals_file(cfg));
  if (!pf) {
    throw std::runtime_error("cannot write " + proposals_file(cfg));
  }
  int total_objects = 0, below_small = 0, below_mid = 0;
  double recall_sum = 0.0;
  for (const auto& img : ds.images) {
    const auto& gts = ds.annotations.at(img.id);
    const auto props =
        simulate_image_proposals(ds.config, gts, img.id, cfg.proposals);
    write_proposals_jsonl(pf, img.id, props);
    recall_sum += proposal_recall(gts, props, 50.0);
    for (const auto& g : gts) {
      const double scale = std::sqrt(g.box.area());
      ++total_objects;
      below_small += scale < cfg.scene.size_small;
      below_mid += scale < cfg.scene.size_mid;
    }
  }
  write_text_file(cfg.out + "/config.gen.json", cfg.to_json().dump(2) + "\n");

  const double n = std::max(1, total_objects);
  out << "images: " << ds.images.size() << "\n";
  out << "objects: " << total_objects << " (mean "
      << fmt2(total_objects / static_cast<double>(ds.images.size()))
      << " per image)\n";
  out << "scale below " << cfg.scene.size_small << ": "
      << fmt1(100.0 * below_small / n) << "% | below " << cfg.scene.size_mid
      << ": " << fmt1(100.0 * below_mid / n) << "%\n";
  out << "proposal recall@50: " << fmt1(recall_sum / ds.images.size())
      << "% (quality " << cfg.proposals.quality << ", count "
      << cfg.proposals.count << ")\n";
  out << "wrote " << dataset_file(cfg) << " and " << proposals_file(cfg)
      << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume,
              std::ostream& out, std::ostream& err) {
  cfg.validate();
  ensure_dir(cfg.out);

  Dataset ds;
  if (std::filesystem::exists(dataset_file(cfg))) {
    ds = load_dataset(dataset_file(cfg));
  } else {
    out << "dataset file missing; generating " << cfg.gen_images
        << " scenes in memory\n";
    ds = build_dataset(cfg.scene, cfg.gen_images);
  }
  const auto proposals = std::filesystem::exists(proposals_file(cfg))
                             ? load_proposals(proposals_file(cfg))
                             : proposals_for_dataset(ds, cfg.proposals);
  const auto examples = make_examples(ds, proposals);

  Model model(cfg.model, mix64(cfg.seed, kModelSalt));
  TrainConfig tcfg = cfg.train;
  tcfg.checkpoint_path = checkpoint_file(cfg);

  std::ofstream csv(cfg.out + "/loss.csv");
  if (!csv) throw std::runtime_error("cannot write " + cfg.out + "/loss.csv");
  write_text_file(cfg.out + "/config.train.json", cfg.to_json().dump(2) + "\n");

  const TrainResult r = train(model, examples, tcfg, cfg.loss, &csv, resume);
  if (r.aborted) {
    err << "numerical failure: " << r.abort_reason << "\n";
    return 3;
  }
  out << "trained " << r.curve.size() << " iterations ("
      << (resume.empty() ? "fresh" : "resumed") << ")\n";
  if (!r.curve.empty()) {
    const auto& last = r.curve.back();
    out << "final losses: cls " << fmt2(last.loss_cls) << ", loc "
        << fmt2(last.loss_loc) << " (head u=" << last.head_u << ")\n";
  }
  if (r.warnings > 0) {
    out << "warning: " << r.warnings
        << " minibatches had no positives for their head\n";
  }
  out << "wrote " << checkpoint_file(cfg) << " and " << cfg.out
      << "/loss.csv\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, bool resimulate, std::ostream& out) {
  cfg.validate();
  ensure_dir(cfg.out);
  const Dataset ds = load_dataset(dataset_file(cfg));

  DetectionsByImage dets;
  if (!cfg.detections_path.empty()) {
    std::ifstream is(cfg.detections_path);
    if (!is) {
      throw std::runtime_error("cannot read detections file " +
                               cfg.detections_path);
    }
    for (auto& [image_id, det] : read_detections_jsonl(is)) {
      dets[image_id].push_back(det);
    }
    out << "scoring detections from " << cfg.detections_path << "\n";
  } else {
    const Model primary = load_model(checkpoint_file(cfg));
    std::vector<Model> extras;
    extras.reserve(cfg.inference.ensemble.size());
    for (const auto& path : cfg.inference.ensemble) {
      extras.push_back(load_model(path));
    }
    std::vector<const Model*> models{&primary};
    for (const auto& m : extras) models.push_back(&m);

    const auto proposals =
        !resimulate && std::filesystem::exists(proposals_file(cfg))
            ? load_proposals(proposals_file(cfg))
            : proposals_for_dataset(ds, cfg.proposals);
    dets = run_detection(ds, proposals, models, cfg.inference);

    std::ofstream df(cfg.out + "/detections.jsonl");
    if (!df) {
      throw std::runtime_error("cannot write " + cfg.out +
                               "/detections.jsonl");
    }
    for (const auto& [image_id, list] : dets) {
      write_detections_jsonl(df, image_id, list);
    }
  }

  const EvalResult r = evaluate(dets, ds.annotations);
  write_text_file(cfg.out + "/eval.json", r.to_json().dump(2) + "\n");
  std::ofstream cf(cfg.out + "/ap_thresholds.csv");
  if (!cf) {
    throw std::runtime_error("cannot write " + cfg.out + "/ap_thresholds.csv");
  }
  write_ap_csv(cf, ap_curve(dets, ds.annotations));
  write_text_file(cfg.out + "/config.eval.json", cfg.to_json().dump(2) + "\n");

  out << "AP " << fmt1(r.ap) << " | AP50 " << fmt1(r.ap50) << " | AP75 "
      << fmt1(r.ap75) << "\n";
  out << "AP small/medium/large: " << fmt1(r.ap_small) << "/"
      << fmt1(r.ap_medium) << "/" << fmt1(r.ap_large) << "\n";
  out << "AR@1/10/100: " << fmt1(r.ar1) << "/" << fmt1(r.ar10) << "/"
      << fmt1(r.ar100) << "\n";
  out << "wrote " << cfg.out << "/eval.json and " << cfg.out
      << "/ap_thresholds.csv\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  ensure_dir(cfg.out);

  // Train scenes from the run seed; held-out scenes from a salted seed.
  const Dataset train_ds = build_dataset(cfg.scene, cfg.gen_images);
  SceneConfig holdout_scene = cfg.scene;
  holdout_scene.seed = mix64(cfg.seed, kHoldoutSalt);
  const Dataset eval_ds = build_dataset(holdout_scene, cfg.eval_images);

  const auto train_props = proposals_for_dataset(train_ds, cfg.proposals);
  const auto eval_props = proposals_for_dataset(eval_ds, cfg.proposals);
  const auto examples = make_examples(train_ds, train_props);

  struct Row {
    bool integral, foveal, skip;
  };
  // The 2x2x2 grid minus the two skip-without-foveal combinations: skip
  // connections feed the foveal crops, so they have no standalone row.
  const Row rows[6] = {{false, false, false}, {true, false, false},
                       {false, true, false},  {false, true, true},
                       {true, true, false},   {true, true, true}};

  std::ostringstream csv;
  csv << "integral,foveal,skip,ap,ap50,ap75\n";
  out << "integral foveal skip      AP    AP50    AP75\n";
  for (const Row& row : rows) {
    ModelConfig mc = cfg.model;
    LossConfig lc = cfg.loss;
    if (!row.integral) {
      lc.thresholds = {50};
      mc.integral_thresholds = {50};
    }
    mc.foveal_factors =
        row.foveal ? cfg.model.foveal_factors : std::vector<double>{1.0};
    if (row.skip) {
      // Four heads take the published tap wiring; other head counts get
      // every tap so the row still differs from the deepest-only baseline.
      mc.skip_wiring =
          mc.foveal_factors.size() == 4
              ? ModelConfig::default_wiring_for(4)
              : std::vector<std::vector<int>>(mc.foveal_factors.size(),
                                              {0, 1, 2});
    } else {
      // Deepest tap only: the plain single-resolution pipeline.
      mc.skip_wiring.assign(mc.foveal_factors.size(), {2});
    }

    Model model(mc, mix64(cfg.seed, kModelSalt));
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;  // identical seed and budget for every row
    const TrainResult tr = train(model, examples, tcfg, lc);
    if (tr.aborted) {
      err << "numerical failure in ablation row: " << tr.abort_reason << "\n";
      return 3;
    }
    InferenceOptions opts = cfg.inference;
    opts.hflip = false;
    opts.fmp = false;
    opts.ensemble.clear();
    const EvalResult r = evaluate_model_on(eval_ds, eval_props, model, opts);

    csv << row.integral << ',' << row.foveal << ',' << row.skip << ','
        << r.ap << ',' << r.ap50 << ',' << r.ap75 << '\n';
    char line[128];
    std::snprintf(line, sizeof(line), "%8d %6d %4d %7.1f %7.1f %7.1f\n",
                  row.integral, row.foveal, row.skip, r.ap, r.ap50, r.ap75);
    out << line;
  }
  write_text_file(cfg.out + "/ablation.csv", csv.str());
  write_text_file(cfg.out + "/config.ablate.json", cfg.to_json().dump(2) + "\n");
  out << "wrote " << cfg.out << "/ablation.csv\n";
  return 0;
}

// Generic CSV: header "x,name1,name2,..."; numeric rows. Renders one chart
// per metric column.
int cmd_plot(const std::string& out_dir,
             const std::vector<std::string>& inputs, std::ostream& out) {
  ensure_dir(out_dir);
  for (const auto& input : inputs) {
    std::ifstream is(input);
    if (!is) throw std::runtime_error("cannot read " + input);

    auto fail = [&](int line_no, const std::string& why) {
      throw std::invalid_argument("plot: " + input + ": line " +
                                  std::to_string(line_no) + ": " + why);
    };
    auto split = [](std::string line) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      return cells;
    };

    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      header = split(line);
      break;
    }
    if (header.size() < 2) {
      throw std::invalid_argument("plot: " + input +
                                  ": need a header with an x column and at "
                                  "least one metric column");
    }
    std::vector<std::vector<double>> columns(header.size());
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto cells = split(line);
      if (cells.size() != header.size()) {
        fail(line_no, "expected " + std::to_string(header.size()) +
                          " columns, got " + std::to_string(cells.size()));
      }
      for (std::size_t c = 0; c < cells.size(); ++c) {
        char* end = nullptr;
        const double v = std::strtod(cells[c].c_str(), &end);
        if (end == cells[c].c_str() || *end != '\0') {
          fail(line_no, "'" + cells[c] + "' is not a number");
        }
        columns[c].push_back(v);
      }
    }
    if (columns[0].empty()) {
      throw std::invalid_argument("plot: " + input + ": no data rows");
    }

    const std::string stem = std::filesystem::path(input).stem().string();
    for (std::size_t c = 1; c < header.size(); ++c) {
      std::string metric = header[c];
      for (char& ch : metric) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-') {
          ch = '_';
        }
      }
      const Series series{header[c], columns[0], columns[c]};
      const std::string svg =
          render_line_chart(header[c] + " vs " + header[0], header[0],
                            header[c], {series});
      const std::string path = out_dir + "/" + stem + "_" + metric + ".svg";
      write_text_file(path, svg);
      out << "wrote " << path << "\n";
    }
  }
  return 0;
}

}  // namespace

// ---- RunConfig -----------------------------------------------------------------

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  scene.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  scene.validate();
  model.validate();
  loss.validate();
  train.validate();
  inference.validate();
  proposals.validate();
  if (gen_images < 1 || eval_images < 1) {
    throw std::invalid_argument("config: image counts must be >= 1");
  }
  if (model.image_channels != scene.channels) {
    throw std::invalid_argument(
        "config: model image_channels must match scene channels");
  }
  if (model.num_classes != scene.num_classes) {
    throw std::invalid_argument(
        "config: model num_classes must match scene num_classes");
  }
  if (model.integral_thresholds != loss.thresholds) {
    throw std::invalid_argument(
        "config: loss thresholds must match the model's integral thresholds");
  }
  if (out.empty()) {
    throw std::invalid_argument("config: output directory must be set");
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"out", out},
          {"scene", scene.to_json()},
          {"model", model.to_json()},
          {"loss", loss_to_json(loss)},
          {"train", train_to_json(train)},
          {"inference", inference_to_json(inference)},
          {"proposals", quality_to_json(proposals)},
          {"images", gen_images},
          {"eval_images", eval_images},
          {"dataset", dataset_path},
          {"proposals_file", proposals_path},
          {"checkpoint", checkpoint_path},
          {"detections", detections_path}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  const nlohmann::json empty = nlohmann::json::object();
  cfg.scene = SceneConfig::from_json(
      merge_shallow(SceneConfig{}.to_json(), j.value("scene", empty)));
  const nlohmann::json model_section = j.value("model", empty);
  nlohmann::json model_json =
      merge_shallow(ModelConfig{}.to_json(), model_section);
  if (model_section.contains("foveal_factors") &&
      !model_section.contains("skip_wiring")) {
    // A config changing the head count inherits the matching default wiring
    // rather than the four-head default.
    model_json["skip_wiring"] = ModelConfig::default_wiring_for(
        model_json.at("foveal_factors").size());
  }
  cfg.model = ModelConfig::from_json(model_json);
  cfg.loss = loss_from_json(j.value("loss", empty));
  cfg.train = train_from_json(j.value("train", empty));
  cfg.inference = inference_from_json(j.value("inference", empty));
  cfg.proposals = quality_from_json(j.value("proposals", empty));
  cfg.out = j.value("out", cfg.out);
  cfg.gen_images = j.value("images", cfg.gen_images);
  cfg.eval_images = j.value("eval_images", cfg.eval_images);
  cfg.dataset_path = j.value("dataset", cfg.dataset_path);
  cfg.proposals_path = j.value("proposals_file", cfg.proposals_path);
  cfg.checkpoint_path = j.value("checkpoint", cfg.checkpoint_path);
  cfg.detections_path = j.value("detections", cfg.detections_path);
  if (j.contains("seed")) {
    cfg.apply_seed(j.at("seed").get<std::uint64_t>());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path);
  try {
    nlohmann::json j;
    is >> j;
    return RunConfig::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
}

std::string dataset_file(const RunConfig& cfg) {
  return cfg.dataset_path.empty() ? cfg.out + "/dataset.json"
                                  : cfg.dataset_path;
}

std::string proposals_file(const RunConfig& cfg) {
  return cfg.proposals_path.empty() ? cfg.out + "/proposals.jsonl"
                                    : cfg.proposals_path;
}

std::string checkpoint_file(const RunConfig& cfg) {
  return cfg.checkpoint_path.empty() ? cfg.out + "/model.ckpt"
                                     : cfg.checkpoint_path;
}

// ---- entry point ----------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Synthetic-scene object detection pipeline"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 validation, 2 IO, 3 numerical failure.");

  std::string config_path, out_dir, resume, checkpoint, dataset, detections;
  std::vector<std::string> ensemble, plot_inputs;
  std::uint64_t seed = 0;
  int iters = 0, images = 0, proposals = 0;
  double quality = 1.0, nms_threshold = 0.0;
  bool hflip = false, fmp = false;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "RunConfig JSON file");
    c->add_option("--seed", seed, "override the run seed");
    c->add_option("--out", out_dir, "output directory");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a dataset + proposals");
  add_common(gen);
  auto* gen_images_opt = gen->add_option("--images", images, "scene count");
  auto* gen_quality_opt =
      gen->add_option("--quality", quality, "proposal quality in [0,1]");
  auto* gen_proposals_opt =
      gen->add_option("--proposals", proposals, "proposals per image");

  CLI::App* tr = app.add_subcommand("train", "train a detector");
  add_common(tr);
  auto* tr_iters_opt = tr->add_option("--iters", iters, "iteration count");
  tr->add_option("--resume", resume, "continue from a training checkpoint");

  CLI::App* ev = app.add_subcommand("eval", "run inference and score it");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--dataset", dataset, "dataset JSON to evaluate on");
  ev->add_option("--detections", detections,
                 "score this detections file instead of running a model");
  ev->add_option("--ensemble", ensemble, "extra model checkpoints")
      ->delimiter(',');
  auto* ev_hflip_opt = ev->add_flag("--hflip", hflip, "average with a mirrored pass");
  auto* ev_fmp_opt = ev->add_flag("--fmp", fmp, "average both pooling quantizations");
  auto* ev_nms_opt =
      ev->add_option("--nms-threshold", nms_threshold, "NMS IoU (0..100)");
  auto* ev_proposals_opt = ev->add_option(
      "--proposals", proposals, "simulate this many proposals per image");
  auto* ev_quality_opt =
      ev->add_option("--quality", quality, "proposal quality in [0,1]");

  CLI::App* ab = app.add_subcommand("ablate", "modification on/off sweep");
  add_common(ab);
  auto* ab_iters_opt = ab->add_option("--iters", iters, "iterations per row");
  auto* ab_images_opt = ab->add_option("--images", images, "training scenes");

  CLI::App* pl = app.add_subcommand("plot", "render CSV series as SVG charts");
  pl->add_option("--out", out_dir, "output directory");
  pl->add_option("inputs", plot_inputs, "CSV files (x column + metrics)")
      ->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (pl->parsed()) {
      return cmd_plot(out_dir.empty() ? "." : out_dir, plot_inputs, out);
    }

    RunConfig cfg =
        config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const CLI::App* c : {gen, tr, ev, ab}) {
      if (c->parsed() && c->count("--seed")) cfg.apply_seed(seed);
    }
    if (!out_dir.empty()) cfg.out = out_dir;

    if (gen->parsed()) {
      if (*gen_images_opt) cfg.gen_images = images;
      if (*gen_quality_opt) cfg.proposals.quality = quality;
      if (*gen_proposals_opt) cfg.proposals.count = proposals;
      return cmd_gen(cfg, out);
    }
    if (tr->parsed()) {
      if (*tr_iters_opt) cfg.train.iterations = iters;
      return cmd_train(cfg, resume, out, err);
    }
    if (ev->parsed()) {
      if (!checkpoint.empty()) cfg.checkpoint_path = checkpoint;
      if (!dataset.empty()) cfg.dataset_path = dataset;
      if (!detections.empty()) cfg.detections_path = detections;
      if (!ensemble.empty()) cfg.inference.ensemble = ensemble;
      if (*ev_hflip_opt) cfg.inference.hflip = true;
      if (*ev_fmp_opt) cfg.inference.fmp = true;
      if (*ev_nms_opt) cfg.inference.nms_threshold = nms_threshold;
      bool resimulate = false;
      if (*ev_proposals_opt) {
        cfg.proposals.count = proposals;
        cfg.inference.proposals_per_image = proposals;
        resimulate = true;
      }
      if (*ev_quality_opt) {
        cfg.proposals.quality = quality;
        resimulate = true;
      }
      return cmd_eval(cfg, resimulate, out);
    }
    if (ab->parsed()) {
      if (*ab_iters_opt) cfg.train.iterations = iters;
      if (*ab_images_opt) cfg.gen_images = images;
      return cmd_ablate(cfg, out, err);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace multipath
