#include "gkedm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gkedm::kernels {

namespace {
constexpr std::size_t kParGrain = 4096;  // skip thread fan-out for tiny work
}

void matmul_nn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
#pragma omp parallel for schedule(static) if (m * n * k >= kParGrain)
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k >= kParGrain)
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
#pragma omp parallel for schedule(static) if (m * n * k >= kParGrain)
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = a[kk * m + i];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void csr_row_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate) {
  if (!accumulate) std::fill(out, out + g.n_nodes * d, 0.0);
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    double* oi = out + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      double we = w[e];
      const double* xj = x + g.col_idx[e] * d;
      for (std::size_t c = 0; c < d; ++c) oi[c] += we * xj[c];
    }
  }
}

void csc_col_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate) {
  if (!accumulate) std::fill(out, out + g.n_nodes * d, 0.0);
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t j = 0; j < g.n_nodes; ++j) {
    double* oj = out + j * d;
    for (std::size_t t = g.csc_ptr[j]; t < g.csc_ptr[j + 1]; ++t) {
      double we = w[g.csc_edge[t]];
      const double* xi = x + g.csc_src[t] * d;
      for (std::size_t c = 0; c < d; ++c) oj[c] += we * xi[c];
    }
  }
}

void edge_dot(const CsrGraph& g, const double* q, const double* k,
              std::size_t d, double* s) {
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* qi = q + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* kj = k + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
      s[e] = acc;
    }
  }
}

void edge_sqdist(const CsrGraph& g, const double* h, std::size_t d, double* s) {
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* hi = h + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* hj = h + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = hi[c] - hj[c];
        acc += diff * diff;
      }
      s[e] = acc;
    }
  }
}

void edge_weight_grad(const CsrGraph& g, const double* gout, const double* v,
                      std::size_t d, double* gw, bool accumulate) {
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* gi = gout + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* vj = v + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += gi[c] * vj[c];
      gw[e] = accumulate ? gw[e] + acc : acc;
    }
  }
}

void edge_sqdist_grad_src(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh) {
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    double* gi = gh + i * d;
    const double* hi = h + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* hj = h + g.col_idx[e] * d;
      double c2 = 2.0 * ge[e];
      for (std::size_t c = 0; c < d; ++c) gi[c] += c2 * (hi[c] - hj[c]);
    }
  }
}

void edge_sqdist_grad_dst(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh) {
#pragma omp parallel for schedule(static) if (g.n_edges() * d >= kParGrain)
  for (std::size_t j = 0; j < g.n_nodes; ++j) {
    double* gj = gh + j * d;
    const double* hj = h + j * d;
    for (std::size_t t = g.csc_ptr[j]; t < g.csc_ptr[j + 1]; ++t) {
      const double* hi = h + g.csc_src[t] * d;
      double c2 = -2.0 * ge[g.csc_edge[t]];
      for (std::size_t c = 0; c < d; ++c) gj[c] += c2 * (hi[c] - hj[c]);
    }
  }
}

void segment_softmax(const std::size_t* row_ptr, std::size_t n_rows,
                     const double* x, double* p) {
#pragma omp parallel for schedule(static) if (row_ptr[n_rows] >= kParGrain)
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::size_t b = row_ptr[i], e = row_ptr[i + 1];
    if (b == e) continue;
    double mx = x[b];
    for (std::size_t t = b + 1; t < e; ++t) mx = std::max(mx, x[t]);
    double z = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      p[t] = std::exp(x[t] - mx);
      z += p[t];
    }
    for (std::size_t t = b; t < e; ++t) p[t] /= z;
  }
}

void segment_softmax_grad(const std::size_t* row_ptr, std::size_t n_rows,
                          const double* p, const double* g, double* gx,
                          bool accumulate) {
#pragma omp parallel for schedule(static) if (row_ptr[n_rows] >= kParGrain)
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::size_t b = row_ptr[i], e = row_ptr[i + 1];
    double dot = 0.0;
    for (std::size_t t = b; t < e; ++t) dot += g[t] * p[t];
    for (std::size_t t = b; t < e; ++t) {
      double v = p[t] * (g[t] - dot);
      gx[t] = accumulate ? gx[t] + v : v;
    }
  }
}

}  // namespace gkedm::kernels

namespace gkedm::kernels_ref {

void matmul_nn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void matmul_nt(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

void matmul_tn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = a[kk * m + i];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void csr_row_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate) {
  if (!accumulate) std::fill(out, out + g.n_nodes * d, 0.0);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    double* oi = out + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      double we = w[e];
      const double* xj = x + g.col_idx[e] * d;
      for (std::size_t c = 0; c < d; ++c) oi[c] += we * xj[c];
    }
  }
}

void csc_col_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate) {
  if (!accumulate) std::fill(out, out + g.n_nodes * d, 0.0);
  for (std::size_t j = 0; j < g.n_nodes; ++j) {
    double* oj = out + j * d;
    for (std::size_t t = g.csc_ptr[j]; t < g.csc_ptr[j + 1]; ++t) {
      double we = w[g.csc_edge[t]];
      const double* xi = x + g.csc_src[t] * d;
      for (std::size_t c = 0; c < d; ++c) oj[c] += we * xi[c];
    }
  }
}

void edge_dot(const CsrGraph& g, const double* q, const double* k,
              std::size_t d, double* s) {
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* qi = q + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* kj = k + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
      s[e] = acc;
    }
  }
}

void edge_sqdist(const CsrGraph& g, const double* h, std::size_t d, double* s) {
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* hi = h + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* hj = h + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = hi[c] - hj[c];
        acc += diff * diff;
      }
      s[e] = acc;
    }
  }
}

void edge_weight_grad(const CsrGraph& g, const double* gout, const double* v,
                      std::size_t d, double* gw, bool accumulate) {
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    const double* gi = gout + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* vj = v + g.col_idx[e] * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += gi[c] * vj[c];
      gw[e] = accumulate ? gw[e] + acc : acc;
    }
  }
}

void edge_sqdist_grad_src(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh) {
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    double* gi = gh + i * d;
    const double* hi = h + i * d;
    for (std::size_t e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e) {
      const double* hj = h + g.col_idx[e] * d;
      double c2 = 2.0 * ge[e];
      for (std::size_t c = 0; c < d; ++c) gi[c] += c2 * (hi[c] - hj[c]);
    }
  }
}

void edge_sqdist_grad_dst(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh) {
  for (std::size_t j = 0; j < g.n_nodes; ++j) {
    double* gj = gh + j * d;
    const double* hj = h + j * d;
    for (std::size_t t = g.csc_ptr[j]; t < g.csc_ptr[j + 1]; ++t) {
      const double* hi = h + g.csc_src[t] * d;
      double c2 = -2.0 * ge[g.csc_edge[t]];
      for (std::size_t c = 0; c < d; ++c) gj[c] += c2 * (hi[c] - hj[c]);
    }
  }
}

void segment_softmax(const std::size_t* row_ptr, std::size_t n_rows,
                     const double* x, double* p) {
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::size_t b = row_ptr[i], e = row_ptr[i + 1];
    if (b == e) continue;
    double mx = x[b];
    for (std::size_t t = b + 1; t < e; ++t) mx = std::max(mx, x[t]);
    double z = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      p[t] = std::exp(x[t] - mx);
      z += p[t];
    }
    for (std::size_t t = b; t < e; ++t) p[t] /= z;
  }
}

void segment_softmax_grad(const std::size_t* row_ptr, std::size_t n_rows,
                          const double* p, const double* g, double* gx,
                          bool accumulate) {
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::size_t b = row_ptr[i], e = row_ptr[i + 1];
    double dot = 0.0;
    for (std::size_t t = b; t < e; ++t) dot += g[t] * p[t];
    for (std::size_t t = b; t < e; ++t) {
      double v = p[t] * (g[t] - dot);
      gx[t] = accumulate ? gx[t] + v : v;
    }
  }
}

}  // namespace gkedm::kernels_ref
