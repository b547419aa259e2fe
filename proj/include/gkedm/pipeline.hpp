#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gkedm/distill.hpp"
#include "gkedm/graph.hpp"
#include "gkedm/layers.hpp"
#include "gkedm/report.hpp"

namespace gkedm {

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-2;
  double backbone_lr_scale = 0.1;  // stage-2 fine-tuning rate for the conv stack
  OptimizerConfig optimizer;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  int early_stop_patience = 50;
  bool reuse_head = false;  // transplant the pretrained head at stage 2

  void validate() const;
};

// standard bias-corrected Adam over a flat parameter list; state is
// zero-initialized on first use
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps);

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum);

struct ParamGroup {
  std::vector<Tensor> params;
  double lr_scale = 1.0;
};

// Adam/SGD over parameter groups with per-group learning-rate scaling and
// L2 weight decay folded into the gradients.
class Optimizer {
 public:
  Optimizer(std::vector<ParamGroup> groups, const TrainConfig& cfg);
  void zero_grad();
  void step();

 private:
  std::vector<ParamGroup> groups_;
  TrainConfig cfg_;
  std::vector<AdamState> adam_;
  std::vector<SgdState> sgd_;
};

enum class Split { kTrain, kVal, kTest };
Split parse_split(const std::string& s);

// accuracy for multi-class, micro-F1 (threshold 0.5) for multi-label
double evaluate(const Model& model, const NodeDataset& ds, Split split);

struct TrainOutcome {
  Model model;
  TrainReport report;
};

// stage 1: trains the message-passing backbone plus classifier with the task
// loss; early-stops on the validation metric and returns the best-val model
TrainOutcome pretrain_gcn(const NodeDataset& ds, const ArchSpec& arch, const TrainConfig& cfg,
                          const std::string& dataset_desc = "");

// stage 2: drops the last conv layer, attaches positional-encoding injection
// plus the attention layer and a fresh head, fine-tunes everything with the
// backbone at learning_rate * backbone_lr_scale
TrainOutcome enhance_with_gkedm(const Model& pretrained, const NodeDataset& ds, std::size_t m,
                                std::size_t n_heads, const TrainConfig& cfg,
                                const std::string& dataset_desc = "");

// trains a fresh student against a frozen teacher; the teacher's captured
// attention record and outputs are computed once and cached
TrainOutcome distill_student(const Model& teacher, const ArchSpec& student_arch,
                             const NodeDataset& ds, const DistillConfig& dcfg,
                             const TrainConfig& cfg, const std::string& dataset_desc = "");

struct AlphaSweepRow {
  double alpha = 0.0;
  double mean_improvement = 0.0;
};

// distilled-minus-undistilled test metric, averaged over seeds, per alpha;
// the undistilled runs are shared across alphas
std::vector<AlphaSweepRow> alpha_sweep(const Model& teacher, const ArchSpec& student_arch,
                                       const NodeDataset& ds, const std::vector<double>& alphas,
                                       const std::vector<std::uint64_t>& seeds,
                                       const DistillConfig& dcfg, const TrainConfig& cfg);

void write_alpha_sweep_csv(const std::vector<AlphaSweepRow>& rows, const std::string& path);

// effective-config echo used in every report
std::string config_echo_json(const TrainConfig& cfg, const DistillConfig* dcfg,
                             const std::string& arch, const std::string& dataset);

}  // namespace gkedm
