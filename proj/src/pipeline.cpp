#include "gkedm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace gkedm {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("train.lr must be > 0");
  if (backbone_lr_scale < 0.0) throw ConfigError("train.backbone_lr_scale must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (early_stop_patience < 0) throw ConfigError("train.patience must be >= 0");
  if (optimizer.beta1 <= 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 <= 0.0 ||
      optimizer.beta2 >= 1.0) {
    throw ConfigError("train.optimizer betas must lie in (0,1)");
  }
  if (optimizer.eps <= 0.0) throw ConfigError("train.optimizer.eps must be > 0");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
    throw ConfigError("train.optimizer.momentum must lie in [0,1)");
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    auto& w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum) {
  if (state.velocity.empty()) {
    for (const Tensor& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& vel = state.velocity[pi];
    auto& w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum * vel[i] + g[i];
      w[i] -= lr * vel[i];
    }
  }
}

Optimizer::Optimizer(std::vector<ParamGroup> groups, const TrainConfig& cfg)
    : groups_(std::move(groups)), cfg_(cfg) {
  adam_.resize(groups_.size());
  sgd_.resize(groups_.size());
}

void Optimizer::zero_grad() {
  for (auto& g : groups_) {
    for (Tensor& p : g.params) p.zero_grad();
  }
}

void Optimizer::step() {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    if (cfg_.weight_decay > 0.0) {
      for (Tensor& p : group.params) {
        if (!p.has_grad()) continue;
        auto& g = p.grad();
        const auto& w = p.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg_.weight_decay * w[i];
      }
    }
    double lr = cfg_.learning_rate * group.lr_scale;
    if (lr == 0.0) continue;
    if (cfg_.optimizer.kind == OptimizerKind::kAdam) {
      adam_step(group.params, adam_[gi], lr, cfg_.optimizer.beta1, cfg_.optimizer.beta2,
                cfg_.optimizer.eps);
    } else {
      sgd_step(group.params, sgd_[gi], lr, cfg_.optimizer.momentum);
    }
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split \"" + s + "\" (expected train, val or test)");
}

namespace {

const std::vector<std::uint8_t>& mask_for(const NodeDataset& ds, Split split) {
  switch (split) {
    case Split::kTrain: return ds.train_mask;
    case Split::kVal: return ds.val_mask;
    case Split::kTest: return ds.test_mask;
  }
  return ds.test_mask;
}

double metric_from_logits(const Tensor& logits, const NodeDataset& ds,
                          const std::vector<std::uint8_t>& mask) {
  std::size_t selected = 0;
  for (std::uint8_t m : mask) selected += m != 0;
  if (selected == 0) throw ContractError("evaluate: split selects no nodes");

  if (ds.task_kind == TaskKind::kMultiClass) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
      if (!mask[i]) continue;
      std::size_t arg = 0;
      double best = logits.at(i, 0);
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits.at(i, c) > best) {
          best = logits.at(i, c);
          arg = c;
        }
      }
      correct += arg == static_cast<std::size_t>(ds.labels[i]);
    }
    return static_cast<double>(correct) / static_cast<double>(selected);
  }

  // micro-F1: pool TP/FP/FN over all node-label pairs; sigmoid(z) > 0.5 <=> z > 0
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t l = 0; l < ds.n_outputs; ++l) {
      bool pred = logits.at(i, l) > 0.0;
      bool truth = ds.label_matrix.at(i, l) != 0.0;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
  }
  std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

Tensor task_loss(Tape& tape, const Tensor& logits, const NodeDataset& ds,
                 const std::vector<std::uint8_t>& mask) {
  if (ds.task_kind == TaskKind::kMultiClass) {
    return cross_entropy(tape, logits, ds.labels, mask);
  }
  return bce_multilabel(tape, logits, ds.label_matrix, mask);
}

struct EpochLoss {
  Tensor total;
  double l_task = 0.0, l_a = 0.0, l_vr = 0.0, l_kd = 0.0, l_lsp = 0.0, l_fitnet = 0.0;
};

using LossFn = std::function<EpochLoss(Tape&, const ModelOutput&)>;

double eval_on_graph(const Model& model, const GraphPtr& g, const NodeDataset& ds,
                     const std::vector<std::uint8_t>& mask) {
  Tape tape(false);
  ModelOutput out = model_forward(tape, model, g, ds.features, false);
  return metric_from_logits(out.logits, ds, mask);
}

// shared full-batch loop: forward, loss, backward, step, validate, keep the
// best-validation checkpoint, stop after patience epochs without improvement
TrainOutcome train_loop(Model model, const NodeDataset& ds, const GraphPtr& g,
                        std::vector<ParamGroup> groups, const TrainConfig& cfg,
                        const LossFn& loss_fn, bool capture) {
  auto started = std::chrono::steady_clock::now();
  Optimizer opt(std::move(groups), cfg);

  TrainOutcome out;
  Model best = clone_model(model);
  double best_val = -1.0;
  int best_epoch = 0;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Tape tape;
    ModelOutput fwd = model_forward(tape, model, g, ds.features, capture);
    EpochLoss el = loss_fn(tape, fwd);
    double total = el.total.item();
    if (!std::isfinite(total)) {
      throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    }
    opt.zero_grad();
    tape.backward(el.total);
    opt.step();

    double val = eval_on_graph(model, g, ds, ds.val_mask);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = total;
    row.l_task = el.l_task;
    row.l_a = el.l_a;
    row.l_vr = el.l_vr;
    row.l_kd = el.l_kd;
    row.l_lsp = el.l_lsp;
    row.l_fitnet = el.l_fitnet;
    row.val_metric = val;
    out.report.rows.push_back(row);

    if (val > best_val) {
      best_val = val;
      best = clone_model(model);
      best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.early_stop_patience) break;
    }
  }

  out.model = std::move(best);
  out.report.best_epoch = best_epoch;
  out.report.param_count = param_count(out.model);
  out.report.seed = cfg.seed;
  out.report.final_metric = eval_on_graph(out.model, g, ds, ds.test_mask);
  out.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

GraphPtr training_graph(const NodeDataset& ds) {
  return std::make_shared<const CsrGraph>(add_self_loops(ds.graph));
}

std::string default_dataset_desc(const NodeDataset& ds, const std::string& given) {
  if (!given.empty()) return given;
  return "n" + std::to_string(ds.n_nodes()) + "-" + task_kind_str(ds.task_kind);
}

}  // namespace

double evaluate(const Model& model, const NodeDataset& ds, Split split) {
  GraphPtr g = training_graph(ds);
  Tape tape(false);
  ModelOutput out = model_forward(tape, model, g, ds.features, false);
  return metric_from_logits(out.logits, ds, mask_for(ds, split));
}

TrainOutcome pretrain_gcn(const NodeDataset& ds, const ArchSpec& arch, const TrainConfig& cfg,
                          const std::string& dataset_desc) {
  cfg.validate();
  GraphPtr g = training_graph(ds);
  Rng rng(cfg.seed);
  Model model = build_model(arch, ds.feature_dim(), ds.n_outputs, ds.task_kind, rng);

  LossFn loss_fn = [&](Tape& tape, const ModelOutput& fwd) {
    EpochLoss el;
    el.total = task_loss(tape, fwd.logits, ds, ds.train_mask);
    el.l_task = el.total.item();
    return el;
  };
  std::vector<ParamGroup> groups{{parameters(model), 1.0}};
  TrainOutcome out = train_loop(std::move(model), ds, g, std::move(groups), cfg, loss_fn, false);
  out.report.model = model_desc(out.model);
  out.report.dataset = default_dataset_desc(ds, dataset_desc);
  out.report.method = "pretrain";
  out.report.config_echo = config_echo_json(cfg, nullptr, arch_str(arch), out.report.dataset);
  return out;
}

TrainOutcome enhance_with_gkedm(const Model& pretrained, const NodeDataset& ds, std::size_t m,
                                std::size_t n_heads, const TrainConfig& cfg,
                                const std::string& dataset_desc) {
  cfg.validate();
  if (m < 1) throw ContractError("enhance_with_gkedm requires m >= 1");
  GraphPtr g = training_graph(ds);
  PeMatrix pe = laplacian_pe(*g, m);
  Rng rng(cfg.seed);
  Model model = enhance_model(pretrained, pe, n_heads, rng, cfg.reuse_head);

  LossFn loss_fn = [&](Tape& tape, const ModelOutput& fwd) {
    EpochLoss el;
    el.total = task_loss(tape, fwd.logits, ds, ds.train_mask);
    el.l_task = el.total.item();
    return el;
  };
  std::vector<ParamGroup> groups{{backbone_parameters(model), cfg.backbone_lr_scale},
                                 {enhancement_parameters(model), 1.0}};
  TrainOutcome out = train_loop(std::move(model), ds, g, std::move(groups), cfg, loss_fn, false);
  out.report.model = model_desc(out.model);
  out.report.dataset = default_dataset_desc(ds, dataset_desc);
  out.report.method = "enhance";
  out.report.config_echo = config_echo_json(cfg, nullptr, out.report.model, out.report.dataset);
  return out;
}

namespace {

std::string distill_method_str(const DistillConfig& dcfg) {
  if (dcfg.mode != DistillMode::kAttention) return distill_mode_str(dcfg.mode);
  std::string s = "attn:a";
  for (RelationKind r : dcfg.relation_set) {
    s += "+";
    s += relation_str(r)[0];
  }
  return s;
}

}  // namespace

TrainOutcome distill_student(const Model& teacher, const ArchSpec& student_arch,
                             const NodeDataset& ds, const DistillConfig& dcfg,
                             const TrainConfig& cfg, const std::string& dataset_desc) {
  cfg.validate();
  dcfg.validate();
  GraphPtr g = training_graph(ds);

  bool attention_mode = dcfg.mode == DistillMode::kAttention;
  if (attention_mode && !teacher.gkedm) {
    throw ConfigError("attention distillation needs a teacher with a gkedm layer");
  }

  // teacher is frozen; one captured forward covers every epoch
  Tape teacher_tape(false);
  ModelOutput tout =
      model_forward(teacher_tape, teacher, g, ds.features, teacher.gkedm.has_value());

  Rng rng(cfg.seed);
  Model student;
  if (teacher.gkedm) {
    std::size_t m = teacher.gkedm->pe.values.cols();
    std::size_t n_heads = teacher.gkedm->attn.n_heads;
    PeMatrix pe = laplacian_pe(*g, m);
    student = build_gkedm_model(student_arch, ds.feature_dim(), ds.n_outputs, ds.task_kind, pe,
                                n_heads, rng);
  } else {
    student = build_model(student_arch, ds.feature_dim(), ds.n_outputs, ds.task_kind, rng);
  }

  Tensor adapter;
  std::vector<ParamGroup> groups{{parameters(student), 1.0}};
  if (dcfg.mode == DistillMode::kFitnet) {
    adapter = glorot(student.gkedm ? student.gkedm->attn.d_model : student.head.w1.rows(),
                     tout.repr.cols(), rng);
    groups.push_back({{adapter}, 1.0});
  }

  bool capture = attention_mode && dcfg.alpha > 0.0;
  LossFn loss_fn = [&](Tape& tape, const ModelOutput& fwd) {
    EpochLoss el;
    Tensor task = task_loss(tape, fwd.logits, ds, ds.train_mask);
    el.l_task = task.item();
    switch (dcfg.mode) {
      case DistillMode::kNone:
        el.total = task;
        break;
      case DistillMode::kAttention: {
        if (dcfg.alpha == 0.0) {
          el.total = task;
          break;
        }
        Tensor la = attention_map_kl(tape, *tout.record, *fwd.record);
        el.l_a = la.item();
        Tensor att = la;
        for (RelationKind r : dcfg.relation_set) {
          Tensor rel = relation_kl(tape, *tout.record, *fwd.record, r);
          el.l_vr += rel.item();
          att = add(tape, att, rel);
        }
        el.total = add(tape, task, scale(tape, att, dcfg.alpha));
        break;
      }
      case DistillMode::kKd: {
        Tensor soft = kd_soft_loss(tape, tout.logits, fwd.logits, dcfg.kd_temperature);
        el.l_kd = soft.item();
        el.total = add(tape, scale(tape, task, dcfg.kd_hard_weight),
                       scale(tape, soft, dcfg.kd_soft_weight));
        break;
      }
      case DistillMode::kFitnet: {
        Tensor fit = fitnet_loss(tape, fwd.repr, tout.repr, adapter);
        el.l_fitnet = fit.item();
        el.total = add(tape, task, scale(tape, fit, dcfg.fitnet_weight));
        break;
      }
      case DistillMode::kLsp: {
        Tensor lsp = lsp_loss(tape, fwd.repr, tout.repr, g, dcfg.lsp_kernel, dcfg.lsp_sigma,
                              dcfg.lsp_poly_degree);
        el.l_lsp = lsp.item();
        el.total = add(tape, task, scale(tape, lsp, dcfg.lsp_weight));
        break;
      }
    }
    return el;
  };

  TrainOutcome out = train_loop(std::move(student), ds, g, std::move(groups), cfg, loss_fn, capture);
  out.report.model = model_desc(out.model);
  out.report.dataset = default_dataset_desc(ds, dataset_desc);
  out.report.method = distill_method_str(dcfg);
  out.report.alpha = attention_mode ? dcfg.alpha : 0.0;
  out.report.config_echo = config_echo_json(cfg, &dcfg, arch_str(student_arch), out.report.dataset);
  return out;
}

std::vector<AlphaSweepRow> alpha_sweep(const Model& teacher, const ArchSpec& student_arch,
                                       const NodeDataset& ds, const std::vector<double>& alphas,
                                       const std::vector<std::uint64_t>& seeds,
                                       const DistillConfig& dcfg, const TrainConfig& cfg) {
  if (alphas.empty()) throw ContractError("alpha_sweep needs at least one alpha");
  if (seeds.empty()) throw ContractError("alpha_sweep needs at least one seed");

  DistillConfig none = dcfg;
  none.mode = DistillMode::kNone;
  std::vector<double> undistilled;
  for (std::uint64_t seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    undistilled.push_back(distill_student(teacher, student_arch, ds, none, c).report.final_metric);
  }

  std::vector<AlphaSweepRow> rows;
  for (double alpha : alphas) {
    DistillConfig d = dcfg;
    d.mode = DistillMode::kAttention;
    d.alpha = alpha;
    double sum = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      TrainConfig c = cfg;
      c.seed = seeds[si];
      double metric = distill_student(teacher, student_arch, ds, d, c).report.final_metric;
      sum += metric - undistilled[si];
    }
    rows.push_back({alpha, sum / static_cast<double>(seeds.size())});
  }
  return rows;
}

void write_alpha_sweep_csv(const std::vector<AlphaSweepRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "alpha,improvement\n";
  for (const auto& r : rows) {
    out << fmt_double(r.alpha) << ',' << fmt_double(r.mean_improvement) << "\n";
  }
  write_text_atomic(path, out.str());
}

std::string config_echo_json(const TrainConfig& cfg, const DistillConfig* dcfg,
                             const std::string& arch, const std::string& dataset) {
  json j;
  j["arch"] = arch;
  j["dataset"] = dataset;
  json t;
  t["epochs"] = cfg.epochs;
  t["lr"] = cfg.learning_rate;
  t["backbone_lr_scale"] = cfg.backbone_lr_scale;
  t["optimizer"] = cfg.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd";
  t["beta1"] = cfg.optimizer.beta1;
  t["beta2"] = cfg.optimizer.beta2;
  t["eps"] = cfg.optimizer.eps;
  t["momentum"] = cfg.optimizer.momentum;
  t["weight_decay"] = cfg.weight_decay;
  t["seed"] = cfg.seed;
  t["patience"] = cfg.early_stop_patience;
  t["reuse_head"] = cfg.reuse_head;
  j["train"] = std::move(t);
  if (dcfg) {
    json d;
    d["mode"] = distill_mode_str(dcfg->mode);
    d["alpha"] = dcfg->alpha;
    json rels = json::array();
    for (RelationKind r : dcfg->relation_set) rels.push_back(relation_str(r));
    d["relations"] = std::move(rels);
    d["kd_temperature"] = dcfg->kd_temperature;
    d["kd_soft_weight"] = dcfg->kd_soft_weight;
    d["kd_hard_weight"] = dcfg->kd_hard_weight;
    d["lsp_weight"] = dcfg->lsp_weight;
    d["lsp_kernel"] = lsp_kernel_str(dcfg->lsp_kernel);
    d["lsp_sigma"] = dcfg->lsp_sigma;
    d["lsp_poly_degree"] = dcfg->lsp_poly_degree;
    d["fitnet_weight"] = dcfg->fitnet_weight;
    j["distill"] = std::move(d);
  }
  return j.dump();
}

}  // namespace gkedm
