// Times the OpenMP kernels against the serial reference implementations.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gkedm/csr.hpp"
#include "gkedm/kernels.hpp"
#include "gkedm/rng.hpp"

using namespace gkedm;

namespace {

double time_it(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

CsrGraph random_graph(std::size_t n, double p, Rng& rng) {
  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) edges.emplace_back(i, j);
    }
  }
  return add_self_loops(make_csr(n, edges, true));
}

void row(const char* name, double serial, double parallel) {
  std::printf("%-22s %10.3f us %10.3f us %7.2fx\n", name, serial * 1e6, parallel * 1e6,
              serial / parallel);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp\n");
#endif
  std::printf("%-22s %13s %13s %8s\n", "kernel", "serial", "openmp", "speedup");

  Rng rng(7);
  const std::size_t m = 256, k = 256, n = 256;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<double> c(m * n);
  row("matmul_nn 256^3",
      time_it([&] { kernels_ref::matmul_nn(m, n, k, a.data(), b.data(), c.data(), false); }, 5),
      time_it([&] { kernels::matmul_nn(m, n, k, a.data(), b.data(), c.data(), false); }, 5));
  row("matmul_nt 256^3",
      time_it([&] { kernels_ref::matmul_nt(m, n, k, a.data(), b.data(), c.data(), false); }, 5),
      time_it([&] { kernels::matmul_nt(m, n, k, a.data(), b.data(), c.data(), false); }, 5));
  row("matmul_tn 256^3",
      time_it([&] { kernels_ref::matmul_tn(m, n, k, a.data(), b.data(), c.data(), false); }, 5),
      time_it([&] { kernels::matmul_tn(m, n, k, a.data(), b.data(), c.data(), false); }, 5));

  CsrGraph g = random_graph(2000, 0.01, rng);
  const std::size_t d = 64;
  auto h = random_vec(g.n_nodes * d, rng);
  auto w = random_vec(g.n_edges(), rng);
  std::vector<double> out(g.n_nodes * d);
  std::vector<double> s(g.n_edges());
  std::printf("graph: %zu nodes, %zu edges, d=%zu\n", g.n_nodes, g.n_edges(), d);
  row("csr_row_gather",
      time_it([&] { kernels_ref::csr_row_gather(g, w.data(), h.data(), d, out.data(), false); }, 20),
      time_it([&] { kernels::csr_row_gather(g, w.data(), h.data(), d, out.data(), false); }, 20));
  row("csc_col_gather",
      time_it([&] { kernels_ref::csc_col_gather(g, w.data(), h.data(), d, out.data(), false); }, 20),
      time_it([&] { kernels::csc_col_gather(g, w.data(), h.data(), d, out.data(), false); }, 20));
  row("edge_dot",
      time_it([&] { kernels_ref::edge_dot(g, h.data(), h.data(), d, s.data()); }, 20),
      time_it([&] { kernels::edge_dot(g, h.data(), h.data(), d, s.data()); }, 20));
  row("edge_sqdist",
      time_it([&] { kernels_ref::edge_sqdist(g, h.data(), d, s.data()); }, 20),
      time_it([&] { kernels::edge_sqdist(g, h.data(), d, s.data()); }, 20));
  std::vector<double> p(g.n_edges());
  row("segment_softmax",
      time_it([&] { kernels_ref::segment_softmax(g.row_ptr.data(), g.n_nodes, s.data(), p.data()); },
              50),
      time_it([&] { kernels::segment_softmax(g.row_ptr.data(), g.n_nodes, s.data(), p.data()); },
              50));
  return 0;
}
