#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "multipath/cli.hpp"
#include "multipath/evaluation.hpp"
#include "multipath/geometry.hpp"
#include "multipath/inference.hpp"
#include "multipath/network.hpp"
#include "multipath/synthdata.hpp"

namespace py = pybind11;
using namespace multipath;

namespace {

using BoxTuple = std::tuple<double, double, double, double>;

Box to_box(const BoxTuple& t) {
  return Box{std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

BoxTuple from_box(const Box& b) { return {b.x1, b.y1, b.x2, b.y2}; }

// [C,H,W] float64 array -> [1,C,H,W] tensor.
Tensor image_from_array(const py::array_t<double>& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 3) {
    throw std::invalid_argument("image must be a [C,H,W] float64 array");
  }
  const int c = static_cast<int>(buf.shape[0]);
  const int h = static_cast<int>(buf.shape[1]);
  const int w = static_cast<int>(buf.shape[2]);
  const auto contiguous = py::array_t<double, py::array::c_style>::ensure(arr);
  const double* data = static_cast<const double*>(contiguous.request().ptr);
  return Tensor::from({1, c, h, w},
                      std::vector<double>(data, data + (std::size_t)c * h * w));
}

py::array_t<double> image_to_array(const Tensor& image) {
  const auto& s = image.shape();
  py::array_t<double> arr({s[1], s[2], s[3]});
  std::copy(image.data().begin(), image.data().end(),
            arr.mutable_data());
  return arr;
}

SceneConfig scene_config_from_json_text(const std::string& text) {
  return SceneConfig::from_json(nlohmann::json::parse(text));
}

InferenceOptions inference_options_from_json_text(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  InferenceOptions o;
  o.nms_threshold = j.value("nms_threshold", o.nms_threshold);
  o.max_detections = j.value("max_detections", o.max_detections);
  o.proposals_per_image = j.value("proposals_per_image", o.proposals_per_image);
  o.hflip = j.value("hflip", o.hflip);
  o.fmp = j.value("fmp", o.fmp);
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Object detection on synthetic scenes: multi-region network with "
            "skip connections and an integral classification loss.";

  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) {
    return iou(to_box(a), to_box(b));
  }, py::arg("a"), py::arg("b"),
     "Intersection over union of two (x1,y1,x2,y2) boxes, 0..100 scale.");

  m.def("encode_box", [](const BoxTuple& proposal, const BoxTuple& gt) {
    const RegressionTarget t = encode_bbox(to_box(proposal), to_box(gt));
    return std::make_tuple(t.tx, t.ty, t.tw, t.th);
  }, py::arg("proposal"), py::arg("gt"),
     "Regression deltas carrying `proposal` onto `gt`.");

  m.def("decode_box",
        [](const BoxTuple& proposal,
           const std::tuple<double, double, double, double>& deltas) {
          const RegressionTarget t{std::get<0>(deltas), std::get<1>(deltas),
                                   std::get<2>(deltas), std::get<3>(deltas)};
          return from_box(decode_bbox(to_box(proposal), t));
        },
        py::arg("proposal"), py::arg("deltas"),
        "Applies regression deltas to a proposal box.");

  m.def("generate_scene",
        [](const std::string& config_json, std::uint64_t seed) {
          const SceneConfig cfg = scene_config_from_json_text(config_json);
          const Scene scene = generate_scene(cfg, seed);
          std::vector<std::pair<BoxTuple, int>> objects;
          objects.reserve(scene.objects.size());
          for (const auto& g : scene.objects) {
            objects.emplace_back(from_box(g.box), g.cls);
          }
          return std::make_pair(image_to_array(scene.image), objects);
        },
        py::arg("config_json"), py::arg("seed"),
        "Renders one scene: ([C,H,W] array in [0,1], [(box, class), ...]).");

  m.def("simulate_proposals",
        [](const std::vector<std::pair<BoxTuple, int>>& objects, int width,
           int height, double quality, int count, std::uint64_t seed) {
          std::vector<GroundTruth> gts;
          gts.reserve(objects.size());
          for (const auto& [box, cls] : objects) {
            gts.push_back(GroundTruth{to_box(box), cls});
          }
          ProposalQuality q;
          q.quality = quality;
          q.count = count;
          std::mt19937_64 rng(seed);
          std::vector<BoxTuple> out;
          for (const Box& b :
               simulate_proposals(gts, width, height, q, rng)) {
            out.push_back(from_box(b));
          }
          return out;
        },
        py::arg("objects"), py::arg("width"), py::arg("height"),
        py::arg("quality"), py::arg("count"), py::arg("seed"),
        "Jittered ground-truth boxes mixed with background boxes.");

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return std::make_unique<Model>(
                 ModelConfig::from_json(nlohmann::json::parse(config_json)),
                 seed);
           }),
           py::arg("config_json"), py::arg("seed"))
      .def_static("load", &load_model, py::arg("path"))
      .def("save",
           [](const Model& self, const std::string& path) {
             save_model(self, path);
           },
           py::arg("path"))
      .def_property_readonly("config_json",
                             [](const Model& self) {
                               return self.config().to_json().dump();
                             })
      .def("detect",
           [](const Model& self, const py::array_t<double>& image,
              const std::vector<BoxTuple>& proposals,
              const std::string& options_json) {
             std::vector<Box> boxes;
             boxes.reserve(proposals.size());
             for (const auto& p : proposals) boxes.push_back(to_box(p));
             const InferenceOptions opts =
                 inference_options_from_json_text(options_json);
             std::vector<std::tuple<int, double, BoxTuple>> out;
             for (const Detection& d :
                  detect(image_from_array(image), boxes, {&self}, opts)) {
               out.emplace_back(d.cls, d.score, from_box(d.box));
             }
             return out;
           },
           py::arg("image"), py::arg("proposals"),
           py::arg("options_json") = "{}",
           "Scored detections [(class, score, box), ...], highest first.");

  m.def("evaluate",
        [](const std::vector<std::tuple<int, int, double, BoxTuple>>& dets,
           const std::vector<std::tuple<int, int, BoxTuple>>& gts) {
          DetectionsByImage by_image;
          for (const auto& [image_id, cls, score, box] : dets) {
            by_image[image_id].push_back(Detection{to_box(box), cls, score});
          }
          GroundTruthByImage gt_map;
          for (const auto& [image_id, cls, box] : gts) {
            gt_map[image_id].push_back(GroundTruth{to_box(box), cls});
          }
          return evaluate(by_image, gt_map).to_json().dump();
        },
        py::arg("detections"), py::arg("ground_truths"),
        "Scores [(image_id, class, score, box)] against [(image_id, class, "
        "box)]; returns the metrics as a JSON string.");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int code = run_cli(args, out, err);
          return std::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"),
        "Full pipeline entry point; returns (exit_code, stdout, stderr).");

  m.attr("__version__") = "0.1.0";
}
