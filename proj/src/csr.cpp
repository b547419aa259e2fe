#include "gkedm/csr.hpp"

#include <algorithm>
#include <string>

#include "gkedm/errors.hpp"

namespace gkedm {

namespace {

CsrGraph from_sorted_unique(std::size_t n, EdgeList edges, bool symmetric) {
  CsrGraph g;
  g.n_nodes = n;
  g.symmetric = symmetric;
  g.row_ptr.assign(n + 1, 0);
  for (const auto& [s, d] : edges) {
    (void)d;
    g.row_ptr[s + 1]++;
  }
  for (std::size_t i = 0; i < n; ++i) g.row_ptr[i + 1] += g.row_ptr[i];
  g.col_idx.resize(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) g.col_idx[e] = edges[e].second;

  // transpose index by counting sort over the CSR edge order
  g.csc_ptr.assign(n + 1, 0);
  for (std::size_t j : g.col_idx) g.csc_ptr[j + 1]++;
  for (std::size_t i = 0; i < n; ++i) g.csc_ptr[i + 1] += g.csc_ptr[i];
  g.csc_src.resize(edges.size());
  g.csc_edge.resize(edges.size());
  std::vector<std::size_t> cursor(g.csc_ptr.begin(), g.csc_ptr.end() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      std::size_t j = g.col_idx[e];
      std::size_t slot = cursor[j]++;
      g.csc_src[slot] = i;
      g.csc_edge[slot] = e;
    }
  }
  return g;
}

}  // namespace

bool CsrGraph::has_edge(std::size_t src, std::size_t dst) const {
  auto nb = neighbors(src);
  return std::binary_search(nb.begin(), nb.end(), dst);
}

CsrGraph make_csr(std::size_t n_nodes, const EdgeList& edges, bool symmetric) {
  EdgeList all;
  all.reserve(edges.size() * (symmetric ? 2 : 1));
  for (const auto& [s, d] : edges) {
    if (s >= n_nodes || d >= n_nodes) {
      throw ValidationError("edge (" + std::to_string(s) + "," + std::to_string(d) +
                            ") references a node outside [0," + std::to_string(n_nodes) + ")");
    }
    all.emplace_back(s, d);
    if (symmetric && s != d) all.emplace_back(d, s);
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return from_sorted_unique(n_nodes, std::move(all), symmetric);
}

CsrGraph add_self_loops(const CsrGraph& g) {
  EdgeList all;
  all.reserve(g.n_edges() + g.n_nodes);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    for (std::size_t j : g.neighbors(i)) all.emplace_back(i, j);
    all.emplace_back(i, i);
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return from_sorted_unique(g.n_nodes, std::move(all), g.symmetric);
}

CsrGraph strip_self_loops(const CsrGraph& g) {
  EdgeList all;
  all.reserve(g.n_edges());
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    for (std::size_t j : g.neighbors(i)) {
      if (i != j) all.emplace_back(i, j);
    }
  }
  return from_sorted_unique(g.n_nodes, std::move(all), g.symmetric);
}

bool has_all_self_loops(const CsrGraph& g) {
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    if (!g.has_edge(i, i)) return false;
  }
  return true;
}

void check_permutation(const std::vector<std::size_t>& perm, std::size_t n) {
  if (perm.size() != n) throw ContractError("permutation length does not match node count");
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw ContractError("permutation is not a bijection on [0,n)");
    seen[p] = true;
  }
}

CsrGraph permute_graph(const CsrGraph& g, const std::vector<std::size_t>& perm) {
  check_permutation(perm, g.n_nodes);
  EdgeList all;
  all.reserve(g.n_edges());
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    for (std::size_t j : g.neighbors(i)) all.emplace_back(perm[i], perm[j]);
  }
  std::sort(all.begin(), all.end());
  return from_sorted_unique(g.n_nodes, std::move(all), g.symmetric);
}

bool same_structure(const CsrGraph& a, const CsrGraph& b) {
  return a.n_nodes == b.n_nodes && a.row_ptr == b.row_ptr && a.col_idx == b.col_idx;
}

}  // namespace gkedm
