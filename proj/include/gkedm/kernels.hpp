#pragma once

#include <cstddef>

#include "gkedm/csr.hpp"

// Numeric inner loops shared by the tensor ops. Each kernel exists twice:
// the OpenMP version in gkedm::kernels (the production path) and a plain
// serial version in gkedm::kernels_ref used by tests and the benchmark.
//
// Every parallel loop owns a disjoint slice of the output and accumulates
// serially within it, so results are bit-identical to the serial reference
// for any thread count.

namespace gkedm::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul_nn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void matmul_tn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);

// out[i,:] (+)= sum over out-edges e=(i,j) of w[e] * x[j,:]
void csr_row_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate);
// out[j,:] (+)= sum over in-edges e=(i,j) of w[e] * x[i,:]
void csc_col_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate);

// s[e] = <q[i,:], k[j,:]> for every edge e=(i,j)
void edge_dot(const CsrGraph& g, const double* q, const double* k,
              std::size_t d, double* s);
// s[e] = ||h[i,:] - h[j,:]||^2 for every edge e=(i,j)
void edge_sqdist(const CsrGraph& g, const double* h, std::size_t d, double* s);

// gw[e] (+)= <gout[i,:], v[j,:]> for every edge e=(i,j)
void edge_weight_grad(const CsrGraph& g, const double* gout, const double* v,
                      std::size_t d, double* gw, bool accumulate);

// gh[i,:] += sum over out-edges e=(i,j) of 2*ge[e]*(h[i,:]-h[j,:])
void edge_sqdist_grad_src(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh);
// gh[j,:] += sum over in-edges e=(i,j) of -2*ge[e]*(h[i,:]-h[j,:])
void edge_sqdist_grad_dst(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh);

// per-row softmax over CSR segments with max subtraction; empty rows are
// skipped (they own no entries of x)
void segment_softmax(const std::size_t* row_ptr, std::size_t n_rows,
                     const double* x, double* p);
// gx[e] (+)= p[e] * (g[e] - sum over the row of g*p)
void segment_softmax_grad(const std::size_t* row_ptr, std::size_t n_rows,
                          const double* p, const double* g, double* gx,
                          bool accumulate);

}  // namespace gkedm::kernels

namespace gkedm::kernels_ref {

void matmul_nn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);
void matmul_nt(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);
void matmul_tn(std::size_t m, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate);
void csr_row_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate);
void csc_col_gather(const CsrGraph& g, const double* w, const double* x,
                    std::size_t d, double* out, bool accumulate);
void edge_dot(const CsrGraph& g, const double* q, const double* k,
              std::size_t d, double* s);
void edge_sqdist(const CsrGraph& g, const double* h, std::size_t d, double* s);
void edge_weight_grad(const CsrGraph& g, const double* gout, const double* v,
                      std::size_t d, double* gw, bool accumulate);
void edge_sqdist_grad_src(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh);
void edge_sqdist_grad_dst(const CsrGraph& g, const double* h, const double* ge,
                          std::size_t d, double* gh);
void segment_softmax(const std::size_t* row_ptr, std::size_t n_rows,
                     const double* x, double* p);
void segment_softmax_grad(const std::size_t* row_ptr, std::size_t n_rows,
                          const double* p, const double* g, double* gx,
                          bool accumulate);

}  // namespace gkedm::kernels_ref
