#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gkedm/csr.hpp"
#include "gkedm/errors.hpp"

namespace gkedm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first backward touches it
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float64 tensor. Copies share storage (handle semantics);
// clone() and detach() deep-copy. Safe to share read-only across threads.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t numel() const { return d_->values.size(); }
  bool is_scalar() const { return numel() == 1; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t rows() const;  // requires 2-d
  std::size_t cols() const;  // requires 2-d

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }
  double item() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad();
  void zero_grad();

  Tensor clone() const;   // deep copy, keeps requires_grad
  Tensor detach() const;  // deep copy with requires_grad = false

  detail::TensorData* data_ptr() const { return d_.get(); }
  const std::shared_ptr<detail::TensorData>& handle() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Context handed to backward rules during one backward pass. Gradients for
// the pass accumulate here and are added into persistent .grad buffers at
// the end, so repeated backward calls accumulate linearly.
class BackwardCtx {
 public:
  // d(loss)/d(t) so far, or nullptr if t has not received any contribution
  const std::vector<double>* grad_of(const detail::TensorData* t) const;
  // accumulation buffer for t, created zeroed on first use
  std::vector<double>& accum(const detail::TensorData* t);

 private:
  friend class Tape;
  std::unordered_map<const detail::TensorData*, std::vector<double>> map_;
};

// Reverse-mode tape. Operations are recorded in execution order, which is a
// valid topological order; backward replays them once, in reverse. A tape is
// confined to one thread. A non-recording tape runs ops forward-only, which
// is how teacher networks are evaluated (their outputs stay constants).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_ops() const { return ops_.size(); }

  void record(std::shared_ptr<detail::TensorData> out,
              std::function<void(BackwardCtx&)> pull);

  // Accumulates d(loss)/d(x) into x.grad for every requires_grad ancestor
  // of loss. loss must be scalar. Calling twice without zero_grad adds the
  // gradients again.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> out;
    std::function<void(BackwardCtx&)> pull;
  };
  std::vector<Node> ops_;
  bool recording_;
};

// --- dense ops -------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// elementwise; b may also be a row vector ({d} or {1,d}) broadcast over the
// rows of a 2-d a
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor shift(Tape& tape, const Tensor& a, double c);
Tensor relu(Tape& tape, const Tensor& a);
Tensor sigmoid(Tape& tape, const Tensor& a);
// natural log with the argument clamped below at 1e-12
Tensor log(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
Tensor powi(Tape& tape, const Tensor& a, int k);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t c1);
Tensor reduce_sum(Tape& tape, const Tensor& a);
Tensor reduce_mean(Tape& tape, const Tensor& a);
// scalar sum of w[i]*a[i] with constant weights
Tensor weighted_sum(Tape& tape, const Tensor& a, std::vector<double> w);

Tensor row_softmax(Tape& tape, const Tensor& a);
Tensor row_log_softmax(Tape& tape, const Tensor& a);

// --- edge-packed ops over a CSR graph --------------------------------------

// masked softmax over each node's neighbor segment; rows with no entries
// raise DegenerateRowError unless require_nonempty is false (then skipped)
Tensor segment_softmax(Tape& tape, const Tensor& x,
                       const std::shared_ptr<const CsrGraph>& g,
                       bool require_nonempty = true);
// s[e] = <q[i,:], k[j,:]> per edge e=(i,j)
Tensor edge_dot(Tape& tape, const Tensor& q, const Tensor& k,
                const std::shared_ptr<const CsrGraph>& g);
// s[e] = ||h[i,:]-h[j,:]||^2 per edge
Tensor edge_sqdist(Tape& tape, const Tensor& h,
                   const std::shared_ptr<const CsrGraph>& g);
// out[i,:] = sum over edges e=(i,j) of w[e] * v[j,:]
Tensor edge_gather(Tape& tape, const Tensor& w, const Tensor& v,
                   const std::shared_ptr<const CsrGraph>& g);
// out[i,:] = sum over edges e=(i,j) of coeff[e] * h[j,:], constant coeffs
Tensor graph_aggregate(Tape& tape, const std::shared_ptr<const CsrGraph>& g,
                       std::vector<double> coeff, const Tensor& h);

// --- gradient checking ------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double ad_at_worst = 0.0;
  double fd_at_worst = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of a scalar-valued f against central
// finite differences. f must be deterministic; two forward evaluations that
// disagree raise OracleError.
GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           const Tensor& x, double eps = 1e-6, double tol = 1e-4);

}  // namespace gkedm
