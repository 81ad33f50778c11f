#include "multipath/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "multipath/checkpoint.hpp"

namespace multipath {

namespace {

void check_threshold_list(const std::vector<int>& thresholds) {
  if (thresholds.empty()) {
    throw std::invalid_argument("loss: empty threshold list");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) {
      throw std::invalid_argument("loss: thresholds must strictly increase");
    }
  }
}

// splitmix64 of (seed, iteration): every iteration gets an independent
// generator, so resuming at iteration k replays an unbroken run exactly.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Velocities = std::vector<std::vector<double>>;

void save_train_state(const Model& model, const Velocities& velocity,
                      int iteration, const std::string& path) {
  auto tensors = model.parameters();
  const std::size_t n_params = tensors.size();
  for (std::size_t i = 0; i < n_params; ++i) {
    tensors.emplace_back(
        "velocity." + tensors[i].first,
        Tensor::from(tensors[i].second.shape(), velocity[i]));
  }
  nlohmann::json meta;
  meta["model_config"] = model.config().to_json();
  meta["iteration"] = iteration;
  save_checkpoint(path, tensors, meta);
}

int load_train_state(Model& model, Velocities& velocity,
                     const std::string& path) {
  const LoadedCheckpoint cp = load_checkpoint(path);
  if (!cp.meta.contains("model_config") || !cp.meta.contains("iteration")) {
    throw std::runtime_error("resume: not a training checkpoint: " + path);
  }
  if (cp.meta.at("model_config") != model.config().to_json()) {
    throw std::invalid_argument(
        "resume: checkpoint model config differs from the model being "
        "trained");
  }
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* w = cp.find(params[i].first);
    const Tensor* v = cp.find("velocity." + params[i].first);
    if (!w || !v || w->shape() != params[i].second.shape()) {
      throw std::runtime_error("resume: missing tensor for " +
                               params[i].first);
    }
    params[i].second.data() = w->data();
    velocity[i] = v->data();
  }
  return cp.meta.at("iteration").get<int>();
}

}  // namespace

void LossConfig::validate() const {
  if (lambda < 0.0) {
    throw std::invalid_argument("loss: lambda must be >= 0");
  }
  if (smooth_l1_delta <= 0.0) {
    throw std::invalid_argument("loss: smooth_l1_delta must be > 0");
  }
  check_threshold_list(thresholds);
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (images_per_batch < 1) {
    throw std::invalid_argument("train: images_per_batch must be >= 1");
  }
  if (proposals_per_image < 2) {
    throw std::invalid_argument("train: proposals_per_image must be >= 2");
  }
  // lr 0 is admitted deliberately: the no-op update is part of the
  // determinism contract (parameters must stay bitwise unchanged).
  if (lr_initial < 0.0 || lr_final < 0.0) {
    throw std::invalid_argument("train: learning rates must be >= 0");
  }
  if (lr_drop_fraction <= 0.0 || lr_drop_fraction > 1.0) {
    throw std::invalid_argument("train: lr_drop_fraction must be in (0,1]");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("train: momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) {
    throw std::invalid_argument("train: weight_decay must be >= 0");
  }
  if (pos_fraction <= 0.0 || pos_fraction >= 1.0) {
    throw std::invalid_argument("train: pos_fraction must be in (0,1)");
  }
  if (checkpoint_every < 0) {
    throw std::invalid_argument("train: checkpoint_every must be >= 0");
  }
}

Tensor cls_loss(const Tensor& p, int k) { return nll(p, k); }

Tensor loc_loss(const Tensor& t, const RegressionTarget& t_star,
                double delta) {
  return smooth_l1(t, {t_star.tx, t_star.ty, t_star.tw, t_star.th}, delta);
}

namespace {

// Shared term builder: classification loss for threshold index u plus, when
// that head's label is foreground, the weighted localization loss.
Tensor loss_term(const HeadScores& scores, const TargetLabels& labels, int u,
                 const LossConfig& cfg) {
  Tensor lc = cls_loss(scores.p_u[u], labels.k_u[u]);
  if (labels.k_u[u] < 1) return lc;
  if (!labels.t_star) {
    throw std::logic_error(
        "loss: foreground label without a regression target");
  }
  return add(lc,
             scale(loc_loss(scores.t, *labels.t_star, cfg.smooth_l1_delta),
                   cfg.lambda));
}

void check_loss_inputs(const HeadScores& scores, const TargetLabels& labels,
                       const LossConfig& cfg) {
  cfg.validate();
  if (scores.p_u.size() != cfg.thresholds.size() ||
      labels.k_u.size() != cfg.thresholds.size()) {
    throw std::invalid_argument(
        "loss: scores/labels/threshold arity mismatch");
  }
}

}  // namespace

Tensor integral_loss(const HeadScores& scores, const TargetLabels& labels,
                     const LossConfig& cfg) {
  check_loss_inputs(scores, labels, cfg);
  std::vector<Tensor> terms;
  terms.reserve(cfg.thresholds.size());
  for (std::size_t u = 0; u < cfg.thresholds.size(); ++u) {
    terms.push_back(loss_term(scores, labels, static_cast<int>(u), cfg));
  }
  return scale(add_many(terms), 1.0 / static_cast<double>(terms.size()));
}

Tensor head_loss(const HeadScores& scores, const TargetLabels& labels,
                 int head_index, const LossConfig& cfg) {
  check_loss_inputs(scores, labels, cfg);
  if (head_index < 0 ||
      head_index >= static_cast<int>(cfg.thresholds.size())) {
    throw std::invalid_argument("loss: head index out of range");
  }
  return loss_term(scores, labels, head_index, cfg);
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& curve) {
  os << "iteration,head_u,loss_cls,loss_loc,lr\n";
  os << std::setprecision(17);
  for (const auto& r : curve) {
    os << r.iteration << ',' << r.head_u << ',' << r.loss_cls << ','
       << r.loss_loc << ',' << r.lr << '\n';
  }
}

std::vector<LossRecord> read_loss_csv(std::istream& is) {
  std::vector<LossRecord> curve;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.rfind("iteration,", 0) == 0) continue;
    std::istringstream ss(line);
    LossRecord r;
    char c1, c2, c3, c4;
    if (!(ss >> r.iteration >> c1 >> r.head_u >> c2 >> r.loss_cls >> c3 >>
          r.loss_loc >> c4 >> r.lr) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw std::runtime_error("loss csv: malformed line " +
                               std::to_string(line_no));
    }
    curve.push_back(r);
  }
  return curve;
}

TrainResult train(Model& model, const std::vector<TrainingExample>& dataset,
                  const TrainConfig& tcfg, const LossConfig& lcfg,
                  std::ostream* csv, const std::string& resume_from) {
  tcfg.validate();
  lcfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (lcfg.thresholds != model.config().integral_thresholds) {
    throw std::invalid_argument(
        "train: loss thresholds differ from the model's heads");
  }

  // Proposal/ground-truth matches never change; compute them once.
  std::vector<std::vector<TargetLabels>> labels(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    labels[i] =
        match_proposals(dataset[i].proposals, dataset[i].gts, lcfg.thresholds);
  }

  auto& params = model.parameters();
  Velocities velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(static_cast<std::size_t>(params[i].second.numel()),
                       0.0);
  }

  int start_iter = 0;
  if (!resume_from.empty()) {
    start_iter = load_train_state(model, velocity, resume_from);
  }

  if (csv) {
    *csv << "iteration,head_u,loss_cls,loss_loc,lr\n";
    *csv << std::setprecision(17);
  }

  const int n_heads = static_cast<int>(lcfg.thresholds.size());
  const int drop_at = static_cast<int>(
      std::llround(tcfg.lr_drop_fraction * tcfg.iterations));
  TrainResult result;

  for (int iter = start_iter; iter < tcfg.iterations; ++iter) {
    const double lr = iter < drop_at ? tcfg.lr_initial : tcfg.lr_final;
    const int head = iter % n_heads;
    std::mt19937_64 rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(iter)));
    std::uniform_int_distribution<std::size_t> pick_image(0,
                                                          dataset.size() - 1);

    std::vector<Tensor> terms;
    double sum_cls = 0.0;
    double sum_loc = 0.0;
    for (int b = 0; b < tcfg.images_per_batch; ++b) {
      const std::size_t img = pick_image(rng);
      const auto& ex = dataset[img];
      const auto plan =
          plan_minibatch(labels[img], lcfg.thresholds, head,
                         tcfg.proposals_per_image, tcfg.pos_fraction, rng,
                         &result.warnings);
      if (plan.proposal_indices.empty()) continue;
      std::vector<Box> sampled;
      sampled.reserve(plan.proposal_indices.size());
      for (int idx : plan.proposal_indices) sampled.push_back(ex.proposals[idx]);

      ForwardOptions opts;
      opts.train = true;
      opts.rng = &rng;
      const auto scores = model.forward(ex.image, sampled, opts);
      for (const auto& s : scores) {
        const TargetLabels& tl =
            labels[img][plan.proposal_indices[s.proposal_index]];
        Tensor lc = cls_loss(s.p_u[head], tl.k_u[head]);
        Tensor term = lc;
        double ll_val = 0.0;
        if (tl.k_u[head] >= 1) {
          if (!tl.t_star) {
            throw std::logic_error(
                "train: foreground label without a regression target");
          }
          Tensor ll = scale(
              loc_loss(s.t, *tl.t_star, lcfg.smooth_l1_delta), lcfg.lambda);
          ll_val = ll.item();
          term = add(lc, ll);
        }
        sum_cls += lc.item();
        sum_loc += ll_val;
        terms.push_back(term);
      }
    }

    LossRecord rec;
    rec.iteration = iter;
    rec.head_u = lcfg.thresholds[head];
    rec.lr = lr;
    if (!terms.empty()) {
      const double inv = 1.0 / static_cast<double>(terms.size());
      rec.loss_cls = sum_cls * inv;
      rec.loss_loc = sum_loc * inv;
      if (!std::isfinite(rec.loss_cls + rec.loss_loc)) {
        result.aborted = true;
        result.abort_reason =
            "non-finite loss at iteration " + std::to_string(iter);
        result.curve.push_back(rec);
        if (csv) *csv << "# aborted: " << result.abort_reason << '\n';
        break;
      }
      Tensor batch_loss = scale(add_many(terms), inv);
      model.zero_grads();
      backward(batch_loss);
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& w = params[pi].second.data();
        const auto& g = params[pi].second.grad();
        auto& v = velocity[pi];
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double grad = g[j] + tcfg.weight_decay * w[j];
          // Velocities are f32-rounded like the weights so that resumed
          // optimizer state is bitwise faithful.
          v[j] = static_cast<double>(
              static_cast<float>(tcfg.momentum * v[j] - lr * grad));
          w[j] = static_cast<double>(static_cast<float>(w[j] + v[j]));
        }
      }
    }
    result.curve.push_back(rec);
    if (csv) {
      *csv << rec.iteration << ',' << rec.head_u << ',' << rec.loss_cls << ','
           << rec.loss_loc << ',' << rec.lr << '\n';
    }

    if (!tcfg.checkpoint_path.empty()) {
      const int done = iter + 1;
      const bool final_iter = done == tcfg.iterations;
      const bool periodic =
          tcfg.checkpoint_every > 0 && done % tcfg.checkpoint_every == 0;
      if (final_iter || periodic) {
        save_train_state(model, velocity, done, tcfg.checkpoint_path);
      }
    }
  }
  return result;
}

}  // namespace multipath
