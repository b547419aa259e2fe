#include "gkedm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gkedm/kernels.hpp"

namespace gkedm {

namespace {

constexpr double kLogClamp = 1e-12;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void ensure_buf(detail::TensorData* t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : d_(std::make_shared<detail::TensorData>()) {
  d_->shape = std::move(shape);
  d_->values.assign(shape_numel(d_->shape), fill);
  d_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : d_(std::make_shared<detail::TensorData>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
  }
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows() needs a 2-d tensor, got " + shape_str(shape()));
  return d_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols() needs a 2-d tensor, got " + shape_str(shape()));
  return d_->shape[1];
}

double Tensor::item() const {
  if (!is_scalar()) throw DimensionError("item() needs a scalar, got " + shape_str(shape()));
  return d_->values[0];
}

double& Tensor::at(std::size_t r, std::size_t c) { return d_->values[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return d_->values[r * cols() + c]; }

std::vector<double>& Tensor::grad() {
  ensure_grad();
  return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return d_->grad;
}

void Tensor::ensure_grad() { ensure_buf(d_.get()); }

void Tensor::zero_grad() {
  if (has_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(d_->shape, d_->values, d_->requires_grad);
  return t;
}

Tensor Tensor::detach() const {
  Tensor t(d_->shape, d_->values, false);
  return t;
}

// --- backward machinery ------------------------------------------------------

const std::vector<double>* BackwardCtx::grad_of(const detail::TensorData* t) const {
  auto it = map_.find(t);
  return it == map_.end() ? nullptr : &it->second;
}

std::vector<double>& BackwardCtx::accum(const detail::TensorData* t) {
  auto it = map_.find(t);
  if (it == map_.end()) {
    it = map_.emplace(t, std::vector<double>(t->values.size(), 0.0)).first;
  }
  return it->second;
}

void Tape::record(std::shared_ptr<detail::TensorData> out,
                  std::function<void(BackwardCtx&)> pull) {
  ops_.push_back({std::move(out), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  BackwardCtx ctx;
  ctx.accum(loss.data_ptr())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->pull(ctx);
  for (auto& [td, g] : ctx.map_) {
    auto* t = const_cast<detail::TensorData*>(td);
    if (!t->requires_grad) continue;
    ensure_buf(t);
    add_into(t->grad, g);
  }
}

// --- op helpers ----------------------------------------------------------------

namespace {

bool track(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(who) + " needs a 2-d tensor, got " + shape_str(t.shape()));
  }
}

// broadcast classification for binary elementwise ops
enum class BcKind { kSame, kRowVec };

BcKind classify_binary(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() == b.shape()) return BcKind::kSame;
  if (a.ndim() == 2) {
    std::size_t d = a.cols();
    if ((b.ndim() == 1 && b.shape()[0] == d) ||
        (b.ndim() == 2 && b.rows() == 1 && b.cols() == d)) {
      return BcKind::kRowVec;
    }
  }
  throw DimensionError(std::string(who) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

using UnaryFwd = double (*)(double);
using UnaryBwd = double (*)(double x, double y);  // dy/dx from input x and output y

Tensor unary_op(Tape& tape, const Tensor& a, UnaryFwd f, UnaryBwd df) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, df](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += (*g)[i] * df(ad->values[i], od->values[i]);
      }
    });
  }
  return out;
}

}  // namespace

// --- dense ops -------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n});
  kernels::matmul_nn(m, n, k, a.values().data(), b.values().data(), out.values().data(), false);
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    tape.record(od, [ad, bd, od, m, n, k](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      if (ad->requires_grad) {
        kernels::matmul_nt(m, k, n, g->data(), bd->values.data(), ctx.accum(ad.get()).data(), true);
      }
      if (bd->requires_grad) {
        kernels::matmul_tn(k, n, m, ad->values.data(), g->data(), ctx.accum(bd.get()).data(), true);
      }
    });
  }
  return out;
}

namespace {

Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, const char* who, int sign_b,
                 bool is_mul) {
  BcKind kind = classify_binary(a, b, who);
  Tensor out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  std::size_t ncols = kind == BcKind::kRowVec ? a.cols() : 0;
  if (is_mul) {
    if (kind == BcKind::kSame) {
      for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    } else {
      for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i % ncols];
    }
  } else {
    double s = static_cast<double>(sign_b);
    if (kind == BcKind::kSame) {
      for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + s * bv[i];
    } else {
      for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + s * bv[i % ncols];
    }
  }
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    tape.record(od, [ad, bd, od, kind, ncols, sign_b, is_mul](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      if (ad->requires_grad) {
        auto& ga = ctx.accum(ad.get());
        if (is_mul) {
          if (kind == BcKind::kSame) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * bd->values[i];
          } else {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * bd->values[i % ncols];
          }
        } else {
          add_into(ga, *g);
        }
      }
      if (bd->requires_grad) {
        auto& gb = ctx.accum(bd.get());
        double s = static_cast<double>(sign_b);
        if (is_mul) {
          if (kind == BcKind::kSame) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i] * ad->values[i];
          } else {
            for (std::size_t i = 0; i < g->size(); ++i) gb[i % ncols] += (*g)[i] * ad->values[i];
          }
        } else {
          if (kind == BcKind::kSame) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += s * (*g)[i];
          } else {
            for (std::size_t i = 0; i < g->size(); ++i) gb[i % ncols] += s * (*g)[i];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, "add", +1, false);
}
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, "sub", -1, false);
}
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, "mul", +1, true);
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, c](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * c;
    });
  }
  return out;
}

Tensor shift(Tape& tape, const Tensor& a, double c) {
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + c;
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      add_into(ctx.accum(ad.get()), *g);
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a,
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return std::log(std::max(x, kLogClamp)); },
      [](double x, double) { return x > kLogClamp ? 1.0 / x : 0.0; });
}

Tensor exp(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor powi(Tape& tape, const Tensor& a, int k) {
  if (k < 1) throw ContractError("powi exponent must be >= 1");
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::pow(av[i], k);
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, k](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += (*g)[i] * k * std::pow(ad->values[i], k - 1);
      }
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_2d(a, "transpose");
  std::size_t m = a.rows(), n = a.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.values()[j * m + i] = a.values()[i * n + j];
  }
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, m, n](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += (*g)[j * m + i];
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols needs at least one tensor");
  std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row count mismatch, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor out(Shape{m, total});
  std::size_t col0 = 0;
  for (const Tensor& p : parts) {
    std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.values().data() + i * w, w, out.values().data() + i * total + col0);
    }
    col0 += w;
  }
  bool need = false;
  for (const Tensor& p : parts) need = need || p.requires_grad();
  if (tape.recording() && need) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorData>> hs;
    std::vector<std::size_t> offs;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      hs.push_back(p.handle());
      offs.push_back(off);
      off += p.cols();
    }
    auto od = out.handle();
    tape.record(od, [hs, offs, od, m, total](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      for (std::size_t pi = 0; pi < hs.size(); ++pi) {
        if (!hs[pi]->requires_grad) continue;
        std::size_t w = hs[pi]->shape[1];
        auto& gp = ctx.accum(hs[pi].get());
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t c = 0; c < w; ++c) {
            gp[i * w + c] += (*g)[i * total + offs[pi] + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t c1) {
  require_2d(a, "slice_cols");
  if (c0 >= c1 || c1 > a.cols()) {
    throw DimensionError("slice_cols: bad column range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(a.shape()));
  }
  std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
  Tensor out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * n + c0, w, out.values().data() + i * w);
  }
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, m, n, w, c0](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < w; ++c) ga[i * n + c0 + c] += (*g)[i * w + c];
      }
    });
  }
  return out;
}

namespace {

Tensor reduce_op(Tape& tape, const Tensor& a, double denom) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s / denom);
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, denom](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      double gv = (*g)[0] / denom;
      auto& ga = ctx.accum(ad.get());
      for (double& x : ga) x += gv;
    });
  }
  return out;
}

}  // namespace

Tensor reduce_sum(Tape& tape, const Tensor& a) { return reduce_op(tape, a, 1.0); }

Tensor reduce_mean(Tape& tape, const Tensor& a) {
  return reduce_op(tape, a, static_cast<double>(a.numel()));
}

Tensor weighted_sum(Tape& tape, const Tensor& a, std::vector<double> w) {
  if (w.size() != a.numel()) {
    throw DimensionError("weighted_sum: weight count " + std::to_string(w.size()) +
                         " vs tensor " + shape_str(a.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.values()[i];
  Tensor out = Tensor::scalar(s);
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    auto ws = std::make_shared<std::vector<double>>(std::move(w));
    tape.record(od, [ad, od, ws](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      double gv = (*g)[0];
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv * (*ws)[i];
    });
  }
  return out;
}

namespace {

// dense row softmax via the segment kernel with uniform segments
std::vector<std::size_t> uniform_rows(std::size_t m, std::size_t n) {
  std::vector<std::size_t> rp(m + 1);
  for (std::size_t i = 0; i <= m; ++i) rp[i] = i * n;
  return rp;
}

}  // namespace

Tensor row_softmax(Tape& tape, const Tensor& a) {
  require_2d(a, "row_softmax");
  std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw DegenerateRowError("row_softmax: rows have no entries");
  Tensor out(a.shape());
  auto rp = uniform_rows(m, n);
  kernels::segment_softmax(rp.data(), m, a.values().data(), out.values().data());
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    auto rps = std::make_shared<std::vector<std::size_t>>(std::move(rp));
    tape.record(od, [ad, od, rps, m](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      kernels::segment_softmax_grad(rps->data(), m, od->values.data(), g->data(),
                                    ctx.accum(ad.get()).data(), true);
    });
  }
  return out;
}

Tensor row_log_softmax(Tape& tape, const Tensor& a) {
  require_2d(a, "row_log_softmax");
  std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw DegenerateRowError("row_log_softmax: rows have no entries");
  Tensor out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = av.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = x[j] - lse;
  }
  if (track(tape, {&a})) {
    out.set_requires_grad(true);
    auto ad = a.handle();
    auto od = out.handle();
    tape.record(od, [ad, od, m, n](BackwardCtx& ctx) {
      const auto* g = ctx.grad_of(od.get());
      if (!g) return;
      auto& ga = ctx.accum(ad.get());
      for (std::size_t i = 0; i < m; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += (*g)[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          double p = std::exp(od->values[i * n + j]);
          ga[i * n + j] += (*g)[i * n + j] - p * gs;
        }
      }
    });
  }
  return out;
}

// --- edge-packed ops ----------------------------------------------------------

namespace {

void require_edge_vec(const Tensor& x, const CsrGraph& g, const char* who) {
  if (x.ndim() != 1 || x.numel() != g.n_edges()) {
    throw DimensionError(std::string(who) + ": expected edge vector of length " +
                         std::to_string(g.n_edges()) + ", got " + shape_str(x.shape()));
  }
}

void require_node_matrix(const Tensor& x, const CsrGraph& g, const char* who) {
  if (x.ndim() != 2 || x.rows() != g.n_nodes) {
    throw DimensionError(std::string(who) + ": expected " + std::to_string(g.n_nodes) +
                         " node rows, got " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor segment_softmax(Tape& tape, const Tensor& x,
                       const std::shared_ptr<const CsrGraph>& g, bool require_nonempty) {
  require_edge_vec(x, *g, "segment_softmax");
  if (require_nonempty) {
    for (std::size_t i = 0; i < g->n_nodes; ++i) {
      if (g->degree(i) == 0) {
        throw DegenerateRowError("segment_softmax: node " + std::to_string(i) +
                                 " has no unmasked entries");
      }
    }
  }
  Tensor out(x.shape());
  kernels::segment_softmax(g->row_ptr.data(), g->n_nodes, x.values().data(), out.values().data());
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    auto xd = x.handle();
    auto od = out.handle();
    tape.record(od, [xd, od, g](BackwardCtx& ctx) {
      const auto* gr = ctx.grad_of(od.get());
      if (!gr) return;
      kernels::segment_softmax_grad(g->row_ptr.data(), g->n_nodes, od->values.data(), gr->data(),
                                    ctx.accum(xd.get()).data(), true);
    });
  }
  return out;
}

Tensor edge_dot(Tape& tape, const Tensor& q, const Tensor& k,
                const std::shared_ptr<const CsrGraph>& g) {
  require_node_matrix(q, *g, "edge_dot");
  require_node_matrix(k, *g, "edge_dot");
  if (q.cols() != k.cols()) {
    throw DimensionError("edge_dot: width mismatch " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
  }
  std::size_t d = q.cols();
  Tensor out(Shape{g->n_edges()});
  kernels::edge_dot(*g, q.values().data(), k.values().data(), d, out.values().data());
  if (track(tape, {&q, &k})) {
    out.set_requires_grad(true);
    auto qd = q.handle(), kd = k.handle(), od = out.handle();
    tape.record(od, [qd, kd, od, g, d](BackwardCtx& ctx) {
      const auto* gr = ctx.grad_of(od.get());
      if (!gr) return;
      if (qd->requires_grad) {
        kernels::csr_row_gather(*g, gr->data(), kd->values.data(), d,
                                ctx.accum(qd.get()).data(), true);
      }
      if (kd->requires_grad) {
        kernels::csc_col_gather(*g, gr->data(), qd->values.data(), d,
                                ctx.accum(kd.get()).data(), true);
      }
    });
  }
  return out;
}

Tensor edge_sqdist(Tape& tape, const Tensor& h, const std::shared_ptr<const CsrGraph>& g) {
  require_node_matrix(h, *g, "edge_sqdist");
  std::size_t d = h.cols();
  Tensor out(Shape{g->n_edges()});
  kernels::edge_sqdist(*g, h.values().data(), d, out.values().data());
  if (track(tape, {&h})) {
    out.set_requires_grad(true);
    auto hd = h.handle();
    auto od = out.handle();
    tape.record(od, [hd, od, g, d](BackwardCtx& ctx) {
      const auto* gr = ctx.grad_of(od.get());
      if (!gr) return;
      auto& gh = ctx.accum(hd.get());
      kernels::edge_sqdist_grad_src(*g, hd->values.data(), gr->data(), d, gh.data());
      kernels::edge_sqdist_grad_dst(*g, hd->values.data(), gr->data(), d, gh.data());
    });
  }
  return out;
}

Tensor edge_gather(Tape& tape, const Tensor& w, const Tensor& v,
                   const std::shared_ptr<const CsrGraph>& g) {
  require_edge_vec(w, *g, "edge_gather");
  require_node_matrix(v, *g, "edge_gather");
  std::size_t d = v.cols();
  Tensor out(Shape{g->n_nodes, d});
  kernels::csr_row_gather(*g, w.values().data(), v.values().data(), d, out.values().data(), false);
  if (track(tape, {&w, &v})) {
    out.set_requires_grad(true);
    auto wd = w.handle(), vd = v.handle(), od = out.handle();
    tape.record(od, [wd, vd, od, g, d](BackwardCtx& ctx) {
      const auto* gr = ctx.grad_of(od.get());
      if (!gr) return;
      if (wd->requires_grad) {
        kernels::edge_weight_grad(*g, gr->data(), vd->values.data(), d,
                                  ctx.accum(wd.get()).data(), true);
      }
      if (vd->requires_grad) {
        kernels::csc_col_gather(*g, wd->values.data(), gr->data(), d,
                                ctx.accum(vd.get()).data(), true);
      }
    });
  }
  return out;
}

Tensor graph_aggregate(Tape& tape, const std::shared_ptr<const CsrGraph>& g,
                       std::vector<double> coeff, const Tensor& h) {
  require_node_matrix(h, *g, "graph_aggregate");
  if (coeff.size() != g->n_edges()) {
    throw DimensionError("graph_aggregate: coefficient count " + std::to_string(coeff.size()) +
                         " vs " + std::to_string(g->n_edges()) + " edges");
  }
  std::size_t d = h.cols();
  Tensor out(Shape{g->n_nodes, d});
  kernels::csr_row_gather(*g, coeff.data(), h.values().data(), d, out.values().data(), false);
  if (track(tape, {&h})) {
    out.set_requires_grad(true);
    auto hd = h.handle();
    auto od = out.handle();
    auto cs = std::make_shared<std::vector<double>>(std::move(coeff));
    tape.record(od, [hd, od, g, cs, d](BackwardCtx& ctx) {
      const auto* gr = ctx.grad_of(od.get());
      if (!gr) return;
      kernels::csc_col_gather(*g, cs->data(), gr->data(), d, ctx.accum(hd.get()).data(), true);
    });
  }
  return out;
}

// --- gradient checking -----------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           const Tensor& x, double eps, double tol) {
  Tensor xt = x.clone();
  xt.set_requires_grad(true);

  auto eval = [&](const Tensor& in) {
    Tape t(false);
    Tensor y = f(t, in);
    if (!y.is_scalar()) throw ContractError("grad_check: f must be scalar-valued");
    return y.item();
  };

  double y0 = eval(xt);
  double y1 = eval(xt);
  if (y0 != y1) throw OracleError("grad_check: f is not deterministic");

  Tape tape;
  Tensor y = f(tape, xt);
  if (!y.is_scalar()) throw ContractError("grad_check: f must be scalar-valued");
  tape.backward(y);
  std::vector<double> g_ad = xt.has_grad() ? xt.grad() : std::vector<double>(xt.numel(), 0.0);

  GradCheckReport rep;
  rep.pass = true;
  auto& xv = xt.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double keep = xv[i];
    xv[i] = keep + eps;
    double fp = eval(xt);
    xv[i] = keep - eps;
    double fm = eval(xt);
    xv[i] = keep;
    double g_fd = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::abs(g_ad[i]), std::abs(g_fd), 1e-8});
    double rel = std::abs(g_ad[i] - g_fd) / denom;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.ad_at_worst = g_ad[i];
      rep.fd_at_worst = g_fd;
    }
  }
  rep.pass = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace gkedm
