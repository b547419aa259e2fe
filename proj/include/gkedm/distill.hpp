#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gkedm/layers.hpp"
#include "gkedm/tensor.hpp"

namespace gkedm {

enum class LspKernelKind { kRbf, kPoly, kLinear };
enum class RelationKind { kValue, kQuery, kKey };
enum class DistillMode { kNone, kAttention, kKd, kFitnet, kLsp };

std::string lsp_kernel_str(LspKernelKind k);
LspKernelKind parse_lsp_kernel(const std::string& s);
std::string relation_str(RelationKind r);
RelationKind parse_relation(const std::string& s);
std::string distill_mode_str(DistillMode m);
DistillMode parse_distill_mode(const std::string& s);

struct DistillConfig {
  DistillMode mode = DistillMode::kAttention;
  double alpha = 0.1;                                      // attention-loss weight
  std::vector<RelationKind> relation_set = {RelationKind::kValue};
  double kd_temperature = 2.0;
  double kd_soft_weight = 0.8;
  double kd_hard_weight = 0.2;
  double lsp_weight = 100.0;
  LspKernelKind lsp_kernel = LspKernelKind::kRbf;
  double lsp_sigma = 1.0;
  int lsp_poly_degree = 2;
  double fitnet_weight = 1.0;

  void validate() const;  // ConfigError on out-of-range values
};

// mean over masked nodes of -log softmax(logits)[label]
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& mask);

// mean over masked nodes and all labels of binary cross-entropy on
// sigmoid(logits); labels is an n x L 0/1 matrix
Tensor bce_multilabel(Tape& tape, const Tensor& logits, const Tensor& labels,
                      const std::vector<std::uint8_t>& mask);

// T^2-corrected KL(softmax(z_T/T) || softmax(z_S/T)) averaged over rows;
// the teacher side is treated as constant
Tensor kd_soft_loss(Tape& tape, const Tensor& z_teacher, const Tensor& z_student,
                    double temperature);

// mean squared error between h_student * adapter and h_teacher (constant)
Tensor fitnet_loss(Tape& tape, const Tensor& h_student, const Tensor& h_teacher,
                   const Tensor& adapter);

// scalar kernel similarity between two representation vectors
double lsp_kernel(std::span<const double> hi, std::span<const double> hj, LspKernelKind kind,
                  double sigma, int poly_degree);

// per-node kernel-similarity distributions over proper neighbors (self-loops
// excluded), matched student-first: sum_i KL(p_i^S || p_i^T) / n. Nodes with
// no proper neighbors are skipped; their count is reported via n_skipped.
Tensor lsp_loss(Tape& tape, const Tensor& h_student, const Tensor& h_teacher, const GraphPtr& g,
                LspKernelKind kind, double sigma, int poly_degree,
                std::size_t* n_skipped = nullptr);

// mean over nodes and heads of KL(A_teacher || A_student) on the shared
// edge ordering; teacher record must be constant
Tensor attention_map_kl(Tape& tape, const AttentionRecord& rec_teacher,
                        const AttentionRecord& rec_student);

// edge-restricted relation distributions from the chosen projection
// (value/query/key), per-node softmax of <X_i,X_j>/sqrt(d_head), matched
// teacher-first per node and head
Tensor relation_kl(Tape& tape, const AttentionRecord& rec_teacher,
                   const AttentionRecord& rec_student, RelationKind which);

// task_loss + alpha * (attention_map_kl + sum of relation_kl over the
// configured relation set)
Tensor distill_total_loss(Tape& tape, const Tensor& task_loss,
                          const AttentionRecord& rec_teacher,
                          const AttentionRecord& rec_student, const DistillConfig& cfg);

}  // namespace gkedm
