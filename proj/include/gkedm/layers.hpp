#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gkedm/graph.hpp"
#include "gkedm/rng.hpp"
#include "gkedm/tensor.hpp"

namespace gkedm {

enum class Activation { kRelu, kNone };
enum class ConvKind { kGcn, kSage };

std::string conv_kind_str(ConvKind k);
ConvKind parse_conv_kind(const std::string& s);

// symmetric-normalized convolution: H' = act(D^-1/2 A D^-1/2 H W + b),
// degrees and adjacency including self-loops
struct GcnConvLayer {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // 1 x d_out
  Activation activation = Activation::kRelu;
};

// H' = act(H W_self + mean of neighbors (self excluded) W_neigh + b);
// a node with no proper neighbors contributes a zero mean
struct SageConvLayer {
  Tensor weight_self;   // d_in x d_out
  Tensor weight_neigh;  // d_in x d_out
  Tensor bias;          // 1 x d_out
  Activation activation = Activation::kRelu;
};

using Conv = std::variant<GcnConvLayer, SageConvLayer>;

// one-hidden-layer MLP, relu inside, no terminal nonlinearity
struct ClassifierHead {
  Tensor w1, b1;  // d x hidden
  Tensor w2, b2;  // hidden x n_out
};

// 1-hop multi-head self-attention over the graph neighborhood (self-loops
// required), per-head scaling by sqrt(d_head), head concat, residual add.
struct GkedmAttentionLayer {
  std::size_t n_heads = 1;
  std::size_t d_model = 0;
  Tensor wq, bq, wk, bk, wv, bv;  // each projection d_model x d_model + bias

  std::size_t d_head() const { return d_model / n_heads; }
};

// Per-head attention weights (edge-packed, aligned with the graph's CSR
// edge order) and Q/K/V projections captured from one forward pass. Tensors
// stay attached to the tape they were computed under, so a record captured
// under a non-recording tape is constant (that is how teachers are run).
struct AttentionRecord {
  std::shared_ptr<const CsrGraph> graph;
  std::size_t n_heads = 0;
  std::size_t d_head = 0;
  std::vector<Tensor> attn;  // per head, shape {|E|}
  std::vector<Tensor> q, k, v;  // per head, shape {n x d_head}
};

// positional-encoding block attached in front of the attention layer
struct GkedmBlock {
  PeMatrix pe;     // constant, derived from the graph
  Tensor pe_map;   // m x d_model, trainable, no bias
  GkedmAttentionLayer attn;
};

struct Model {
  ConvKind kind = ConvKind::kGcn;
  std::vector<Conv> convs;
  std::optional<GkedmBlock> gkedm;
  ClassifierHead head;
  TaskKind task = TaskKind::kMultiClass;
  std::size_t d_in = 0;
  std::size_t n_out = 0;
};

// --- layer forwards ---------------------------------------------------------

using GraphPtr = std::shared_ptr<const CsrGraph>;

Tensor gcn_forward(Tape& tape, const GcnConvLayer& layer, const GraphPtr& g, const Tensor& h);
Tensor sage_forward(Tape& tape, const SageConvLayer& layer, const GraphPtr& g, const Tensor& h);
Tensor conv_forward(Tape& tape, const Conv& conv, const GraphPtr& g, const Tensor& h);

// H + PE * f
Tensor pe_inject(Tape& tape, const Tensor& h, const PeMatrix& pe, const Tensor& f);

std::pair<Tensor, std::optional<AttentionRecord>> gkedm_forward(
    Tape& tape, const GkedmAttentionLayer& layer, const GraphPtr& g, const Tensor& h,
    bool capture = false);

Tensor classifier_forward(Tape& tape, const ClassifierHead& head, const Tensor& h);

struct ModelOutput {
  Tensor logits;
  Tensor repr;  // node representations entering the classifier
  std::optional<AttentionRecord> record;
};

ModelOutput model_forward(Tape& tape, const Model& model, const GraphPtr& g, const Tensor& x,
                          bool capture = false);

// --- parameters ---------------------------------------------------------------

std::size_t param_count(const Model& model);
// all trainable tensors
std::vector<Tensor> parameters(const Model& model);
// the pretrained message-passing stack (fine-tuned at a scaled rate)
std::vector<Tensor> backbone_parameters(const Model& model);
// everything added at the enhancement stage (attention, pe map, head)
std::vector<Tensor> enhancement_parameters(const Model& model);
void set_requires_grad(Model& model, bool rg);
Model clone_model(const Model& model);
// order-stable checksum over all parameter values
std::uint64_t param_checksum(const Model& model);

// --- construction ---------------------------------------------------------------

struct ArchSpec {
  ConvKind kind = ConvKind::kGcn;
  std::vector<std::size_t> widths;  // conv output widths
};

// "gcn:64,64" or "sage:32,32,32"
ArchSpec parse_arch(const std::string& s);
std::string arch_str(const ArchSpec& a);

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);

Model build_model(const ArchSpec& arch, std::size_t d_in, std::size_t n_out, TaskKind task,
                  Rng& rng);

// conv stack + pe injection + attention + head, trained end to end
Model build_gkedm_model(const ArchSpec& arch, std::size_t d_in, std::size_t n_out, TaskKind task,
                        const PeMatrix& pe, std::size_t n_heads, Rng& rng);

// drops the last conv of a pretrained model and attaches the attention block
// with a fresh classifier head (or the pretrained one when reuse_head)
Model enhance_model(const Model& pretrained, const PeMatrix& pe, std::size_t n_heads, Rng& rng,
                    bool reuse_head = false);

std::string model_desc(const Model& model);

// --- checkpoints ------------------------------------------------------------------

// single file: magic, manifest length, JSON manifest, float64 blob
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace gkedm
