#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace gkedm {

// Immutable sparse directed graph in compressed-sparse-row form.
// Neighbor lists are sorted ascending with no duplicates. The transpose
// index (csc_*) is built alongside so backward scatters can run as
// deterministic gathers over in-edges.
struct CsrGraph {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> row_ptr;  // length n_nodes + 1
  std::vector<std::size_t> col_idx;  // length |E|
  bool symmetric = false;

  // transpose index: in-edges of node j are csc_edge[csc_ptr[j]..csc_ptr[j+1])
  // (ids into col_idx), with csc_src giving the source node of each
  std::vector<std::size_t> csc_ptr;
  std::vector<std::size_t> csc_src;
  std::vector<std::size_t> csc_edge;

  std::size_t n_edges() const { return col_idx.size(); }

  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {col_idx.data() + row_ptr[i], col_idx.data() + row_ptr[i + 1]};
  }

  std::size_t degree(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }

  bool has_edge(std::size_t src, std::size_t dst) const;
};

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// Builds a CsrGraph from an edge list. When symmetric, every edge is
// mirrored. Edges are sorted and deduplicated; out-of-range endpoints raise
// ValidationError.
CsrGraph make_csr(std::size_t n_nodes, const EdgeList& edges, bool symmetric);

// Returns a copy with (i,i) added for every node; idempotent.
CsrGraph add_self_loops(const CsrGraph& g);

// Returns a copy with all (i,i) edges removed.
CsrGraph strip_self_loops(const CsrGraph& g);

bool has_all_self_loops(const CsrGraph& g);

// Relabels node i as perm[i]. perm must be a bijection on [0, n).
CsrGraph permute_graph(const CsrGraph& g, const std::vector<std::size_t>& perm);

bool same_structure(const CsrGraph& a, const CsrGraph& b);

void check_permutation(const std::vector<std::size_t>& perm, std::size_t n);

}  // namespace gkedm
