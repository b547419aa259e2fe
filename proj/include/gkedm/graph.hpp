#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gkedm/csr.hpp"
#include "gkedm/tensor.hpp"

namespace gkedm {

enum class TaskKind { kMultiClass, kMultiLabel };

std::string task_kind_str(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

// Graph + features + labels + split masks. Multi-class tasks use labels
// (one class id per node); multi-label tasks use label_matrix (n x L of
// 0/1). Immutable after construction by convention.
struct NodeDataset {
  CsrGraph graph;
  Tensor features;  // n x feature_dim
  TaskKind task_kind = TaskKind::kMultiClass;
  std::size_t n_outputs = 0;  // n_classes or n_labels
  std::vector<int> labels;    // multi-class
  Tensor label_matrix;        // multi-label, n x L
  std::vector<std::uint8_t> train_mask, val_mask, test_mask;

  std::size_t n_nodes() const { return graph.n_nodes; }
  std::size_t feature_dim() const { return features.cols(); }
};

bool datasets_equal(const NodeDataset& a, const NodeDataset& b);

// Eigenvector columns of the normalized Laplacian for the smallest distinct
// eigenvalues, zero-padded on the right when fewer than m exist.
struct PeMatrix {
  Tensor values;                   // n x m
  std::vector<double> eigenvalues; // kept eigenvalues, strictly increasing
};

// L = I - D^{-1/2} A D^{-1/2} on the graph with self-loops removed.
// Isolated nodes get L_ii = 1. Requires a symmetric graph.
Tensor normalized_laplacian(const CsrGraph& g);

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // ascending
  Tensor eigenvectors;              // columns, same order
};

// Cyclic Jacobi rotations; converges to off-diagonal Frobenius norm below
// min(1e-10, 1e-14 * max(1, ||M||_F)). Raises NumericError after 100 sweeps.
EigenDecomposition symmetric_eigendecomposition(const Tensor& m);

// Keeps eigenvalues that differ from the previously kept one by > 1e-8,
// takes the first m of those (the trivial near-zero eigenvector is kept if
// selected), fixes each column's sign so its largest-magnitude entry is
// positive, and zero-pads to m columns.
PeMatrix laplacian_pe(const CsrGraph& g, std::size_t m);

struct SbmParams {
  std::size_t blocks = 2;
  std::size_t nodes_per_block = 10;
  double p_in = 0.5;
  double p_out = 0.05;
  std::size_t feature_dim = 8;
  double noise_sigma = 0.5;
  std::uint64_t seed = 1;
};

// Stochastic block model: block-diagonal-heavy symmetric graph, one-hot
// block centroid features plus Gaussian noise, block-id labels, 60/20/20
// stratified masks. Pure function of its parameters.
NodeDataset sbm_generate(const SbmParams& p);

struct MultilabelSbmParams {
  SbmParams base;
  std::size_t n_labels = 5;
  // per-block Bernoulli probabilities, blocks x n_labels; empty = derive
  // from the seed (uniform in [0.1, 0.9])
  std::vector<double> label_probs;
};

NodeDataset multilabel_sbm_generate(const MultilabelSbmParams& p);

// JSON-lines dataset files: header object, one object per node, one object
// per edge (each undirected edge listed once when symmetric).
void save_dataset(const NodeDataset& ds, const std::string& path);
NodeDataset load_dataset(const std::string& path);

// Relabels node i as perm[i] across graph, features, labels and masks.
NodeDataset permute_nodes(const NodeDataset& ds, const std::vector<std::size_t>& perm);

}  // namespace gkedm
