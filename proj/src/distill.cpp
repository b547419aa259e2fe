#include "gkedm/distill.hpp"

#include <algorithm>
#include <cmath>

#include "gkedm/kernels.hpp"

namespace gkedm {

namespace {

constexpr double kClamp = 1e-12;

double clamped_log(double p) { return std::log(std::max(p, kClamp)); }

std::size_t mask_count(const std::vector<std::uint8_t>& mask) {
  std::size_t n = 0;
  for (std::uint8_t m : mask) n += m != 0;
  return n;
}

}  // namespace

std::string lsp_kernel_str(LspKernelKind k) {
  switch (k) {
    case LspKernelKind::kRbf: return "rbf";
    case LspKernelKind::kPoly: return "poly";
    case LspKernelKind::kLinear: return "linear";
  }
  return "rbf";
}

LspKernelKind parse_lsp_kernel(const std::string& s) {
  if (s == "rbf") return LspKernelKind::kRbf;
  if (s == "poly") return LspKernelKind::kPoly;
  if (s == "linear") return LspKernelKind::kLinear;
  throw ConfigError("unknown lsp kernel \"" + s + "\"");
}

std::string relation_str(RelationKind r) {
  switch (r) {
    case RelationKind::kValue: return "value";
    case RelationKind::kQuery: return "query";
    case RelationKind::kKey: return "key";
  }
  return "value";
}

RelationKind parse_relation(const std::string& s) {
  if (s == "value") return RelationKind::kValue;
  if (s == "query") return RelationKind::kQuery;
  if (s == "key") return RelationKind::kKey;
  throw ConfigError("unknown relation \"" + s + "\" (expected value, query or key)");
}

std::string distill_mode_str(DistillMode m) {
  switch (m) {
    case DistillMode::kNone: return "none";
    case DistillMode::kAttention: return "attn";
    case DistillMode::kKd: return "kd";
    case DistillMode::kFitnet: return "fitnet";
    case DistillMode::kLsp: return "lsp";
  }
  return "none";
}

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "none") return DistillMode::kNone;
  if (s == "attn") return DistillMode::kAttention;
  if (s == "kd") return DistillMode::kKd;
  if (s == "fitnet") return DistillMode::kFitnet;
  if (s == "lsp") return DistillMode::kLsp;
  throw ConfigError("unknown distill mode \"" + s + "\"");
}

void DistillConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("distill.alpha must be >= 0");
  if (kd_temperature <= 0.0) throw ConfigError("distill.kd_temperature must be > 0");
  if (kd_soft_weight < 0.0 || kd_hard_weight < 0.0) {
    throw ConfigError("distill KD weights must be >= 0");
  }
  if (lsp_weight < 0.0) throw ConfigError("distill.lsp_weight must be >= 0");
  if (lsp_sigma <= 0.0) throw ConfigError("distill.lsp_sigma must be > 0");
  if (lsp_poly_degree < 1) throw ConfigError("distill.lsp_poly_degree must be >= 1");
  if (fitnet_weight < 0.0) throw ConfigError("distill.fitnet_weight must be >= 0");
  std::vector<RelationKind> seen;
  for (RelationKind r : relation_set) {
    if (std::find(seen.begin(), seen.end(), r) != seen.end()) {
      throw ConfigError("distill.relations lists \"" + relation_str(r) + "\" twice");
    }
    seen.push_back(r);
  }
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& mask) {
  std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n || mask.size() != n) {
    throw DimensionError("cross_entropy: labels/mask length vs logits " +
                         shape_str(logits.shape()));
  }
  std::size_t m = mask_count(mask);
  if (m == 0) throw ContractError("cross_entropy: mask selects no nodes");
  Tensor logp = row_log_softmax(tape, logits);
  std::vector<double> w(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    int lab = labels[i];
    if (lab < 0 || static_cast<std::size_t>(lab) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(lab) + " outside [0," +
                          std::to_string(c) + ")");
    }
    w[i * c + static_cast<std::size_t>(lab)] = -1.0 / static_cast<double>(m);
  }
  return weighted_sum(tape, logp, std::move(w));
}

Tensor bce_multilabel(Tape& tape, const Tensor& logits, const Tensor& labels,
                      const std::vector<std::uint8_t>& mask) {
  std::size_t n = logits.rows(), l = logits.cols();
  if (labels.shape() != logits.shape() || mask.size() != n) {
    throw DimensionError("bce_multilabel: labels " + shape_str(labels.shape()) + " vs logits " +
                         shape_str(logits.shape()));
  }
  std::size_t m = mask_count(mask);
  if (m == 0) throw ContractError("bce_multilabel: mask selects no nodes");
  Tensor p = sigmoid(tape, logits);
  Tensor log_p = log(tape, p);
  Tensor log_1mp = log(tape, shift(tape, scale(tape, p, -1.0), 1.0));
  Tensor y = labels.detach();
  Tensor ones_minus_y(labels.shape());
  for (std::size_t i = 0; i < ones_minus_y.numel(); ++i) {
    ones_minus_y.values()[i] = 1.0 - y.values()[i];
  }
  Tensor term = add(tape, mul(tape, log_p, y), mul(tape, log_1mp, ones_minus_y));
  std::vector<double> w(n * l, 0.0);
  double inv = -1.0 / static_cast<double>(m * l);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < l; ++j) w[i * l + j] = inv;
  }
  return weighted_sum(tape, term, std::move(w));
}

namespace {

// plain log-softmax of one row, same arithmetic as the row_log_softmax op so
// teacher-side constants match student-side values bit for bit
void plain_log_softmax(const double* x, std::size_t n, double* out) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
  double lse = mx + std::log(z);
  for (std::size_t j = 0; j < n; ++j) out[j] = x[j] - lse;
}

}  // namespace

Tensor kd_soft_loss(Tape& tape, const Tensor& z_teacher, const Tensor& z_student,
                    double temperature) {
  if (z_teacher.shape() != z_student.shape()) {
    throw DimensionError("kd_soft_loss: teacher " + shape_str(z_teacher.shape()) +
                         " vs student " + shape_str(z_student.shape()));
  }
  if (temperature <= 0.0) throw ContractError("kd_soft_loss: temperature must be > 0");
  std::size_t n = z_teacher.rows(), c = z_teacher.cols();

  // teacher distribution and entropy term, all constants
  std::vector<double> pt(n * c), logpt(n * c);
  std::vector<double> row(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) row[j] = z_teacher.at(i, j) / temperature;
    plain_log_softmax(row.data(), c, logpt.data() + i * c);
    for (std::size_t j = 0; j < c; ++j) pt[i * c + j] = std::exp(logpt[i * c + j]);
  }
  double ent = 0.0;
  for (std::size_t i = 0; i < n * c; ++i) ent += pt[i] * logpt[i];

  Tensor logps = row_log_softmax(tape, scale(tape, z_student, 1.0 / temperature));
  Tensor cross = weighted_sum(tape, logps, std::move(pt));  // sum of p_T * log p_S
  double t2n = temperature * temperature / static_cast<double>(n);
  return scale(tape, shift(tape, scale(tape, cross, -1.0), ent), t2n);
}

Tensor fitnet_loss(Tape& tape, const Tensor& h_student, const Tensor& h_teacher,
                   const Tensor& adapter) {
  if (h_student.rows() != h_teacher.rows() || adapter.rows() != h_student.cols() ||
      adapter.cols() != h_teacher.cols()) {
    throw DimensionError("fitnet_loss: student " + shape_str(h_student.shape()) + ", adapter " +
                         shape_str(adapter.shape()) + ", teacher " +
                         shape_str(h_teacher.shape()));
  }
  Tensor diff = sub(tape, matmul(tape, h_student, adapter), h_teacher.detach());
  return reduce_mean(tape, mul(tape, diff, diff));
}

double lsp_kernel(std::span<const double> hi, std::span<const double> hj, LspKernelKind kind,
                  double sigma, int poly_degree) {
  if (hi.size() != hj.size()) throw DimensionError("lsp_kernel: width mismatch");
  switch (kind) {
    case LspKernelKind::kRbf: {
      if (sigma == 0.0) throw ContractError("lsp_kernel: sigma must be nonzero");
      double d2 = 0.0;
      for (std::size_t i = 0; i < hi.size(); ++i) {
        double diff = hi[i] - hj[i];
        d2 += diff * diff;
      }
      return std::exp(-d2 / (2.0 * sigma * sigma));
    }
    case LspKernelKind::kPoly: {
      double dot = 0.0;
      for (std::size_t i = 0; i < hi.size(); ++i) dot += hi[i] * hj[i];
      return std::pow(dot, poly_degree);
    }
    case LspKernelKind::kLinear: {
      double dot = 0.0;
      for (std::size_t i = 0; i < hi.size(); ++i) dot += hi[i] * hj[i];
      return dot;
    }
  }
  return 0.0;
}

namespace {

// kernel similarities per edge, on the tape for the student side
Tensor kernel_edge_values(Tape& tape, const Tensor& h, const GraphPtr& g, LspKernelKind kind,
                          double sigma, int poly_degree) {
  switch (kind) {
    case LspKernelKind::kRbf:
      return gkedm::exp(tape, scale(tape, edge_sqdist(tape, h, g), -1.0 / (2.0 * sigma * sigma)));
    case LspKernelKind::kPoly: {
      Tensor s = edge_dot(tape, h, h, g);
      return poly_degree == 1 ? s : powi(tape, s, poly_degree);
    }
    case LspKernelKind::kLinear:
      return edge_dot(tape, h, h, g);
  }
  throw ConfigError("unknown lsp kernel");
}

}  // namespace

Tensor lsp_loss(Tape& tape, const Tensor& h_student, const Tensor& h_teacher, const GraphPtr& g,
                LspKernelKind kind, double sigma, int poly_degree, std::size_t* n_skipped) {
  if (h_student.rows() != g->n_nodes || h_teacher.rows() != g->n_nodes) {
    throw DimensionError("lsp_loss: representations must have one row per node");
  }
  if (sigma <= 0.0 && kind == LspKernelKind::kRbf) {
    throw ContractError("lsp_loss: sigma must be > 0");
  }
  auto gl = std::make_shared<const CsrGraph>(strip_self_loops(*g));
  std::size_t n = gl->n_nodes;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < n; ++i) skipped += gl->degree(i) == 0;
  if (n_skipped) *n_skipped = skipped;

  // teacher: constants, computed with the same kernels as the student path
  Tensor ht = h_teacher.detach();
  Tape no_grad(false);
  Tensor kt = kernel_edge_values(no_grad, ht, gl, kind, sigma, poly_degree);
  std::vector<double> pt(gl->n_edges());
  kernels::segment_softmax(gl->row_ptr.data(), n, kt.values().data(), pt.data());
  std::vector<double> logpt(gl->n_edges());
  for (std::size_t e = 0; e < pt.size(); ++e) logpt[e] = clamped_log(pt[e]);

  Tensor ks = kernel_edge_values(tape, h_student, gl, kind, sigma, poly_degree);
  Tensor ps = segment_softmax(tape, ks, gl, /*require_nonempty=*/false);
  Tensor logps = log(tape, ps);
  // KL(p_S || p_T) summed over all edges = sum p_S * (log p_S - log p_T)
  Tensor inner = sub(tape, logps, Tensor(Shape{gl->n_edges()}, std::move(logpt)));
  Tensor per_edge = mul(tape, ps, inner);
  return scale(tape, reduce_sum(tape, per_edge), 1.0 / static_cast<double>(n));
}

namespace {

void check_records(const AttentionRecord& t, const AttentionRecord& s) {
  if (t.n_heads != s.n_heads) {
    throw ConfigError("attention records disagree on head count: " + std::to_string(t.n_heads) +
                      " vs " + std::to_string(s.n_heads));
  }
  if (!t.graph || !s.graph || !same_structure(*t.graph, *s.graph)) {
    throw ContractError("attention records were captured on different edge orderings");
  }
}

// sum over nodes of KL(p_const || p_tape) for one head, as a tape scalar
Tensor kl_const_vs_tape(Tape& tape, const std::vector<double>& p_const, const Tensor& p_tape) {
  double ent = 0.0;
  for (double p : p_const) ent += p * clamped_log(p);
  Tensor cross = weighted_sum(tape, log(tape, p_tape), p_const);  // sum p_T * log p_S
  return shift(tape, scale(tape, cross, -1.0), ent);
}

}  // namespace

Tensor attention_map_kl(Tape& tape, const AttentionRecord& rec_teacher,
                        const AttentionRecord& rec_student) {
  check_records(rec_teacher, rec_student);
  std::size_t n = rec_teacher.graph->n_nodes;
  std::size_t heads = rec_teacher.n_heads;
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::vector<double>& at = rec_teacher.attn[h].values();
    total = add(tape, total, kl_const_vs_tape(tape, at, rec_student.attn[h]));
  }
  return scale(tape, total, 1.0 / static_cast<double>(n * heads));
}

Tensor relation_kl(Tape& tape, const AttentionRecord& rec_teacher,
                   const AttentionRecord& rec_student, RelationKind which) {
  check_records(rec_teacher, rec_student);
  const auto& g = rec_teacher.graph;
  std::size_t n = g->n_nodes;
  std::size_t heads = rec_teacher.n_heads;
  auto pick = [&](const AttentionRecord& r, std::size_t h) -> const Tensor& {
    switch (which) {
      case RelationKind::kValue: return r.v[h];
      case RelationKind::kQuery: return r.q[h];
      case RelationKind::kKey: return r.k[h];
    }
    return r.v[h];
  };

  Tensor total = Tensor::scalar(0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    // teacher relation distribution, constant
    const Tensor& xt = pick(rec_teacher, h);
    std::vector<double> st(g->n_edges());
    kernels::edge_dot(*g, xt.values().data(), xt.values().data(), xt.cols(), st.data());
    double inv_sqrt_t = 1.0 / std::sqrt(static_cast<double>(rec_teacher.d_head));
    for (double& v : st) v *= inv_sqrt_t;
    std::vector<double> pt(g->n_edges());
    kernels::segment_softmax(g->row_ptr.data(), n, st.data(), pt.data());

    const Tensor& xs = pick(rec_student, h);
    Tensor ss = scale(tape, edge_dot(tape, xs, xs, g),
                      1.0 / std::sqrt(static_cast<double>(rec_student.d_head)));
    Tensor ps = segment_softmax(tape, ss, g, /*require_nonempty=*/true);
    total = add(tape, total, kl_const_vs_tape(tape, pt, ps));
  }
  return scale(tape, total, 1.0 / static_cast<double>(n * heads));
}

Tensor distill_total_loss(Tape& tape, const Tensor& task_loss,
                          const AttentionRecord& rec_teacher,
                          const AttentionRecord& rec_student, const DistillConfig& cfg) {
  cfg.validate();
  if (cfg.alpha == 0.0) return task_loss;
  Tensor att = attention_map_kl(tape, rec_teacher, rec_student);
  for (RelationKind r : cfg.relation_set) {
    att = add(tape, att, relation_kl(tape, rec_teacher, rec_student, r));
  }
  return add(tape, task_loss, scale(tape, att, cfg.alpha));
}

}  // namespace gkedm
