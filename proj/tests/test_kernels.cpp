// The OpenMP kernels must agree bit for bit with the serial reference: every
// parallel loop owns disjoint output slots and accumulates in the same order.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "gkedm/csr.hpp"
#include "gkedm/kernels.hpp"
#include "gkedm/rng.hpp"

using namespace gkedm;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

CsrGraph random_graph(std::size_t n, double p, Rng& rng, bool self_loops = true) {
  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) edges.emplace_back(i, j);
    }
  }
  CsrGraph g = make_csr(n, edges, true);
  return self_loops ? add_self_loops(g) : g;
}

}  // namespace

TEST_CASE("matmul kernels match the serial reference exactly") {
  Rng rng(11);
  for (auto [m, n, k] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {3, 4, 5}, {17, 9, 23}, {64, 64, 64}, {100, 3, 50}}) {
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    auto at = random_vec(k * m, rng);
    auto bt = random_vec(n * k, rng);
    std::vector<double> c0(m * n), c1(m * n);

    kernels_ref::matmul_nn(m, n, k, a.data(), b.data(), c0.data(), false);
    kernels::matmul_nn(m, n, k, a.data(), b.data(), c1.data(), false);
    CHECK(c0 == c1);

    auto acc0 = c0, acc1 = c1;
    kernels_ref::matmul_nt(m, n, k, a.data(), bt.data(), acc0.data(), true);
    kernels::matmul_nt(m, n, k, a.data(), bt.data(), acc1.data(), true);
    CHECK(acc0 == acc1);

    kernels_ref::matmul_tn(m, n, k, at.data(), b.data(), c0.data(), false);
    kernels::matmul_tn(m, n, k, at.data(), b.data(), c1.data(), false);
    CHECK(c0 == c1);
  }
}

TEST_CASE("graph kernels match the serial reference exactly") {
  Rng rng(5);
  for (std::size_t n : {1, 7, 40, 150}) {
    CsrGraph g = random_graph(n, 0.2, rng);
    const std::size_t d = 9;
    auto h = random_vec(n * d, rng);
    auto q = random_vec(n * d, rng);
    auto w = random_vec(g.n_edges(), rng);
    std::vector<double> a0(n * d), a1(n * d), s0(g.n_edges()), s1(g.n_edges());

    kernels_ref::csr_row_gather(g, w.data(), h.data(), d, a0.data(), false);
    kernels::csr_row_gather(g, w.data(), h.data(), d, a1.data(), false);
    CHECK(a0 == a1);

    kernels_ref::csc_col_gather(g, w.data(), h.data(), d, a0.data(), true);
    kernels::csc_col_gather(g, w.data(), h.data(), d, a1.data(), true);
    CHECK(a0 == a1);

    kernels_ref::edge_dot(g, q.data(), h.data(), d, s0.data());
    kernels::edge_dot(g, q.data(), h.data(), d, s1.data());
    CHECK(s0 == s1);

    kernels_ref::edge_sqdist(g, h.data(), d, s0.data());
    kernels::edge_sqdist(g, h.data(), d, s1.data());
    CHECK(s0 == s1);

    kernels_ref::edge_weight_grad(g, q.data(), h.data(), d, s0.data(), false);
    kernels::edge_weight_grad(g, q.data(), h.data(), d, s1.data(), false);
    CHECK(s0 == s1);

    std::vector<double> gh0(n * d, 0.0), gh1(n * d, 0.0);
    kernels_ref::edge_sqdist_grad_src(g, h.data(), w.data(), d, gh0.data());
    kernels::edge_sqdist_grad_src(g, h.data(), w.data(), d, gh1.data());
    CHECK(gh0 == gh1);
    kernels_ref::edge_sqdist_grad_dst(g, h.data(), w.data(), d, gh0.data());
    kernels::edge_sqdist_grad_dst(g, h.data(), w.data(), d, gh1.data());
    CHECK(gh0 == gh1);

    auto x = random_vec(g.n_edges(), rng);
    std::vector<double> p0(g.n_edges()), p1(g.n_edges());
    kernels_ref::segment_softmax(g.row_ptr.data(), n, x.data(), p0.data());
    kernels::segment_softmax(g.row_ptr.data(), n, x.data(), p1.data());
    CHECK(p0 == p1);

    std::vector<double> gx0(g.n_edges()), gx1(g.n_edges());
    kernels_ref::segment_softmax_grad(g.row_ptr.data(), n, p0.data(), w.data(), gx0.data(), false);
    kernels::segment_softmax_grad(g.row_ptr.data(), n, p1.data(), w.data(), gx1.data(), false);
    CHECK(gx0 == gx1);
  }
}

TEST_CASE("transpose index inverts the edge set") {
  Rng rng(3);
  CsrGraph g = random_graph(25, 0.3, rng, false);
  std::size_t seen = 0;
  for (std::size_t j = 0; j < g.n_nodes; ++j) {
    for (std::size_t t = g.csc_ptr[j]; t < g.csc_ptr[j + 1]; ++t) {
      std::size_t e = g.csc_edge[t];
      CHECK(g.col_idx[e] == j);
      std::size_t i = g.csc_src[t];
      CHECK(g.row_ptr[i] <= e);
      CHECK(e < g.row_ptr[i + 1]);
      ++seen;
    }
  }
  CHECK(seen == g.n_edges());
}
