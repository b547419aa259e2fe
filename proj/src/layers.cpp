#include "gkedm/layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gkedm {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian");

std::string conv_kind_str(ConvKind k) { return k == ConvKind::kGcn ? "gcn" : "sage"; }

ConvKind parse_conv_kind(const std::string& s) {
  if (s == "gcn") return ConvKind::kGcn;
  if (s == "sage") return ConvKind::kSage;
  throw ConfigError("unknown conv kind \"" + s + "\" (expected gcn or sage)");
}

namespace {

Tensor apply_activation(Tape& tape, Activation act, const Tensor& h) {
  return act == Activation::kRelu ? relu(tape, h) : h;
}

void require_self_loops(const CsrGraph& g, const char* who) {
  if (!has_all_self_loops(g)) {
    throw ContractError(std::string(who) + " requires self-loops on every node");
  }
}

}  // namespace

Tensor gcn_forward(Tape& tape, const GcnConvLayer& layer, const GraphPtr& g, const Tensor& h) {
  require_self_loops(*g, "gcn_forward");
  if (h.cols() != layer.weight.rows()) {
    throw DimensionError("gcn_forward: input width " + shape_str(h.shape()) +
                         " vs weight " + shape_str(layer.weight.shape()));
  }
  std::vector<double> inv_sqrt(g->n_nodes);
  for (std::size_t i = 0; i < g->n_nodes; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g->degree(i)));
  }
  std::vector<double> coeff(g->n_edges());
  for (std::size_t i = 0; i < g->n_nodes; ++i) {
    for (std::size_t e = g->row_ptr[i]; e < g->row_ptr[i + 1]; ++e) {
      coeff[e] = inv_sqrt[i] * inv_sqrt[g->col_idx[e]];
    }
  }
  Tensor hw = matmul(tape, h, layer.weight);
  Tensor agg = graph_aggregate(tape, g, std::move(coeff), hw);
  return apply_activation(tape, layer.activation, add(tape, agg, layer.bias));
}

Tensor sage_forward(Tape& tape, const SageConvLayer& layer, const GraphPtr& g, const Tensor& h) {
  require_self_loops(*g, "sage_forward");
  if (h.cols() != layer.weight_self.rows()) {
    throw DimensionError("sage_forward: input width " + shape_str(h.shape()) +
                         " vs weight " + shape_str(layer.weight_self.shape()));
  }
  std::vector<double> coeff(g->n_edges(), 0.0);
  for (std::size_t i = 0; i < g->n_nodes; ++i) {
    std::size_t proper = 0;
    for (std::size_t j : g->neighbors(i)) {
      if (j != i) ++proper;
    }
    if (proper == 0) continue;  // zero neighbor mean
    double w = 1.0 / static_cast<double>(proper);
    for (std::size_t e = g->row_ptr[i]; e < g->row_ptr[i + 1]; ++e) {
      coeff[e] = g->col_idx[e] == i ? 0.0 : w;
    }
  }
  Tensor self_term = matmul(tape, h, layer.weight_self);
  Tensor neigh_mean = graph_aggregate(tape, g, std::move(coeff), h);
  Tensor neigh_term = matmul(tape, neigh_mean, layer.weight_neigh);
  Tensor out = add(tape, add(tape, self_term, neigh_term), layer.bias);
  return apply_activation(tape, layer.activation, out);
}

Tensor conv_forward(Tape& tape, const Conv& conv, const GraphPtr& g, const Tensor& h) {
  return std::visit(
      [&](const auto& layer) -> Tensor {
        using T = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<T, GcnConvLayer>) {
          return gcn_forward(tape, layer, g, h);
        } else {
          return sage_forward(tape, layer, g, h);
        }
      },
      conv);
}

Tensor pe_inject(Tape& tape, const Tensor& h, const PeMatrix& pe, const Tensor& f) {
  if (pe.values.cols() != f.rows() || f.cols() != h.cols()) {
    throw DimensionError("pe_inject: pe " + shape_str(pe.values.shape()) + ", map " +
                         shape_str(f.shape()) + ", h " + shape_str(h.shape()));
  }
  return add(tape, h, matmul(tape, pe.values, f));
}

std::pair<Tensor, std::optional<AttentionRecord>> gkedm_forward(
    Tape& tape, const GkedmAttentionLayer& layer, const GraphPtr& g, const Tensor& h,
    bool capture) {
  require_self_loops(*g, "gkedm_forward");
  if (layer.d_model == 0 || layer.n_heads == 0 || layer.d_model % layer.n_heads != 0) {
    throw ConfigError("gkedm_forward: n_heads must divide d_model");
  }
  if (h.cols() != layer.d_model) {
    throw DimensionError("gkedm_forward: input width " + shape_str(h.shape()) +
                         " vs d_model " + std::to_string(layer.d_model));
  }
  std::size_t dh = layer.d_head();
  Tensor qf = add(tape, matmul(tape, h, layer.wq), layer.bq);
  Tensor kf = add(tape, matmul(tape, h, layer.wk), layer.bk);
  Tensor vf = add(tape, matmul(tape, h, layer.wv), layer.bv);

  std::optional<AttentionRecord> rec;
  if (capture) {
    rec.emplace();
    rec->graph = g;
    rec->n_heads = layer.n_heads;
    rec->d_head = dh;
  }

  std::vector<Tensor> heads;
  heads.reserve(layer.n_heads);
  for (std::size_t hd = 0; hd < layer.n_heads; ++hd) {
    Tensor qh = slice_cols(tape, qf, hd * dh, (hd + 1) * dh);
    Tensor kh = slice_cols(tape, kf, hd * dh, (hd + 1) * dh);
    Tensor vh = slice_cols(tape, vf, hd * dh, (hd + 1) * dh);
    Tensor logits = scale(tape, edge_dot(tape, qh, kh, g), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = segment_softmax(tape, logits, g, /*require_nonempty=*/true);
    heads.push_back(edge_gather(tape, attn, vh, g));
    if (rec) {
      rec->attn.push_back(attn);
      rec->q.push_back(qh);
      rec->k.push_back(kh);
      rec->v.push_back(vh);
    }
  }
  Tensor merged = concat_cols(tape, heads);
  return {add(tape, merged, h), std::move(rec)};
}

Tensor classifier_forward(Tape& tape, const ClassifierHead& head, const Tensor& h) {
  if (h.cols() != head.w1.rows()) {
    throw DimensionError("classifier_forward: input width " + shape_str(h.shape()) +
                         " vs head " + shape_str(head.w1.shape()));
  }
  Tensor hidden = relu(tape, add(tape, matmul(tape, h, head.w1), head.b1));
  return add(tape, matmul(tape, hidden, head.w2), head.b2);
}

ModelOutput model_forward(Tape& tape, const Model& model, const GraphPtr& g, const Tensor& x,
                          bool capture) {
  Tensor h = x;
  for (const Conv& conv : model.convs) h = conv_forward(tape, conv, g, h);
  ModelOutput out;
  if (model.gkedm) {
    Tensor injected = pe_inject(tape, h, model.gkedm->pe, model.gkedm->pe_map);
    auto [attended, rec] = gkedm_forward(tape, model.gkedm->attn, g, injected, capture);
    out.repr = attended;
    out.record = std::move(rec);
  } else {
    out.repr = h;
  }
  out.logits = classifier_forward(tape, model.head, out.repr);
  return out;
}

// --- parameters ---------------------------------------------------------------

namespace {

void collect_convs(const Model& model, std::vector<Tensor>& out) {
  for (const Conv& conv : model.convs) {
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, GcnConvLayer>) {
            out.push_back(layer.weight);
            out.push_back(layer.bias);
          } else {
            out.push_back(layer.weight_self);
            out.push_back(layer.weight_neigh);
            out.push_back(layer.bias);
          }
        },
        conv);
  }
}

}  // namespace

std::vector<Tensor> backbone_parameters(const Model& model) {
  std::vector<Tensor> out;
  collect_convs(model, out);
  return out;
}

std::vector<Tensor> enhancement_parameters(const Model& model) {
  std::vector<Tensor> out;
  if (model.gkedm) {
    out.push_back(model.gkedm->pe_map);
    const auto& a = model.gkedm->attn;
    for (const Tensor& t : {a.wq, a.bq, a.wk, a.bk, a.wv, a.bv}) out.push_back(t);
  }
  for (const Tensor& t : {model.head.w1, model.head.b1, model.head.w2, model.head.b2}) {
    out.push_back(t);
  }
  return out;
}

std::vector<Tensor> parameters(const Model& model) {
  std::vector<Tensor> out = backbone_parameters(model);
  for (Tensor& t : enhancement_parameters(model)) out.push_back(t);
  return out;
}

std::size_t param_count(const Model& model) {
  std::size_t n = 0;
  for (const Tensor& t : parameters(model)) n += t.numel();
  return n;
}

void set_requires_grad(Model& model, bool rg) {
  for (Tensor& t : parameters(model)) t.set_requires_grad(rg);
}

namespace {

Tensor clone_param(const Tensor& t) { return t.clone(); }

Conv clone_conv(const Conv& conv) {
  return std::visit(
      [](const auto& layer) -> Conv {
        auto copy = layer;
        if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, GcnConvLayer>) {
          copy.weight = clone_param(layer.weight);
          copy.bias = clone_param(layer.bias);
        } else {
          copy.weight_self = clone_param(layer.weight_self);
          copy.weight_neigh = clone_param(layer.weight_neigh);
          copy.bias = clone_param(layer.bias);
        }
        return copy;
      },
      conv);
}

}  // namespace

Model clone_model(const Model& model) {
  Model out = model;
  out.convs.clear();
  for (const Conv& c : model.convs) out.convs.push_back(clone_conv(c));
  if (model.gkedm) {
    out.gkedm->pe.values = model.gkedm->pe.values.clone();
    out.gkedm->pe_map = clone_param(model.gkedm->pe_map);
    auto& a = out.gkedm->attn;
    const auto& src = model.gkedm->attn;
    a.wq = clone_param(src.wq);
    a.bq = clone_param(src.bq);
    a.wk = clone_param(src.wk);
    a.bk = clone_param(src.bk);
    a.wv = clone_param(src.wv);
    a.bv = clone_param(src.bv);
  }
  out.head.w1 = clone_param(model.head.w1);
  out.head.b1 = clone_param(model.head.b1);
  out.head.w2 = clone_param(model.head.w2);
  out.head.b2 = clone_param(model.head.b2);
  return out;
}

std::uint64_t param_checksum(const Model& model) {
  // FNV-1a over the parameter bytes in collection order
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor& t : parameters(model)) {
    for (double v : t.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

// --- construction ---------------------------------------------------------------

ArchSpec parse_arch(const std::string& s) {
  auto colon = s.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("bad architecture \"" + s + "\" (expected kind:w1,w2,...)");
  }
  ArchSpec a;
  a.kind = parse_conv_kind(s.substr(0, colon));
  std::string rest = s.substr(colon + 1);
  std::stringstream ss(rest);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      int w = std::stoi(tok);
      if (w < 1) throw ConfigError("architecture widths must be >= 1 in \"" + s + "\"");
      a.widths.push_back(static_cast<std::size_t>(w));
    } catch (const std::logic_error&) {
      throw ConfigError("bad width \"" + tok + "\" in architecture \"" + s + "\"");
    }
  }
  if (a.widths.empty()) throw ConfigError("architecture \"" + s + "\" lists no widths");
  return a;
}

std::string arch_str(const ArchSpec& a) {
  std::string out = conv_kind_str(a.kind) + ":";
  for (std::size_t i = 0; i < a.widths.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(a.widths[i]);
  }
  return out;
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out}, 0.0, true);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

namespace {

Tensor zero_bias(std::size_t d) { return Tensor(Shape{1, d}, 0.0, true); }

Conv make_conv(ConvKind kind, std::size_t d_in, std::size_t d_out, Rng& rng) {
  if (kind == ConvKind::kGcn) {
    GcnConvLayer l;
    l.weight = glorot(d_in, d_out, rng);
    l.bias = zero_bias(d_out);
    l.activation = Activation::kRelu;
    return l;
  }
  SageConvLayer l;
  l.weight_self = glorot(d_in, d_out, rng);
  l.weight_neigh = glorot(d_in, d_out, rng);
  l.bias = zero_bias(d_out);
  l.activation = Activation::kRelu;
  return l;
}

ClassifierHead make_head(std::size_t d, std::size_t n_out, Rng& rng) {
  ClassifierHead h;
  h.w1 = glorot(d, d, rng);
  h.b1 = zero_bias(d);
  h.w2 = glorot(d, n_out, rng);
  h.b2 = zero_bias(n_out);
  return h;
}

GkedmAttentionLayer make_attention(std::size_t d_model, std::size_t n_heads, Rng& rng) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("n_heads=" + std::to_string(n_heads) + " must divide d_model=" +
                      std::to_string(d_model));
  }
  GkedmAttentionLayer a;
  a.n_heads = n_heads;
  a.d_model = d_model;
  a.wq = glorot(d_model, d_model, rng);
  a.bq = zero_bias(d_model);
  a.wk = glorot(d_model, d_model, rng);
  a.bk = zero_bias(d_model);
  a.wv = glorot(d_model, d_model, rng);
  a.bv = zero_bias(d_model);
  return a;
}

}  // namespace

Model build_model(const ArchSpec& arch, std::size_t d_in, std::size_t n_out, TaskKind task,
                  Rng& rng) {
  Model m;
  m.kind = arch.kind;
  m.task = task;
  m.d_in = d_in;
  m.n_out = n_out;
  std::size_t w_in = d_in;
  for (std::size_t w : arch.widths) {
    m.convs.push_back(make_conv(arch.kind, w_in, w, rng));
    w_in = w;
  }
  m.head = make_head(w_in, n_out, rng);
  return m;
}

Model build_gkedm_model(const ArchSpec& arch, std::size_t d_in, std::size_t n_out, TaskKind task,
                        const PeMatrix& pe, std::size_t n_heads, Rng& rng) {
  Model m;
  m.kind = arch.kind;
  m.task = task;
  m.d_in = d_in;
  m.n_out = n_out;
  std::size_t w_in = d_in;
  for (std::size_t w : arch.widths) {
    m.convs.push_back(make_conv(arch.kind, w_in, w, rng));
    w_in = w;
  }
  GkedmBlock block;
  block.pe.values = pe.values.clone();
  block.pe.eigenvalues = pe.eigenvalues;
  block.pe_map = glorot(pe.values.cols(), w_in, rng);
  block.attn = make_attention(w_in, n_heads, rng);
  m.gkedm = std::move(block);
  m.head = make_head(w_in, n_out, rng);
  return m;
}

Model enhance_model(const Model& pretrained, const PeMatrix& pe, std::size_t n_heads, Rng& rng,
                    bool reuse_head) {
  if (pretrained.convs.size() < 2) {
    throw ContractError("enhance_model needs a backbone with at least 2 conv layers");
  }
  if (pretrained.gkedm) {
    throw ContractError("enhance_model expects a plain message-passing backbone");
  }
  Model m;
  m.kind = pretrained.kind;
  m.task = pretrained.task;
  m.d_in = pretrained.d_in;
  m.n_out = pretrained.n_out;
  for (std::size_t i = 0; i + 1 < pretrained.convs.size(); ++i) {
    m.convs.push_back(clone_conv(pretrained.convs[i]));
  }
  std::size_t d_model = std::visit(
      [](const auto& layer) {
        if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, GcnConvLayer>) {
          return layer.weight.cols();
        } else {
          return layer.weight_self.cols();
        }
      },
      m.convs.back());

  GkedmBlock block;
  block.pe.values = pe.values.clone();
  block.pe.eigenvalues = pe.eigenvalues;
  block.pe_map = glorot(pe.values.cols(), d_model, rng);
  block.attn = make_attention(d_model, n_heads, rng);
  m.gkedm = std::move(block);

  if (reuse_head) {
    if (pretrained.head.w1.rows() != d_model) {
      throw ConfigError("cannot reuse classifier head: input width " +
                        std::to_string(pretrained.head.w1.rows()) + " vs d_model " +
                        std::to_string(d_model));
    }
    m.head.w1 = clone_param(pretrained.head.w1);
    m.head.b1 = clone_param(pretrained.head.b1);
    m.head.w2 = clone_param(pretrained.head.w2);
    m.head.b2 = clone_param(pretrained.head.b2);
  } else {
    m.head = make_head(d_model, m.n_out, rng);
  }
  return m;
}

std::string model_desc(const Model& model) {
  std::string out = conv_kind_str(model.kind) + ":";
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(std::visit(
        [](const auto& layer) {
          if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, GcnConvLayer>) {
            return layer.weight.cols();
          } else {
            return layer.weight_self.cols();
          }
        },
        model.convs[i]));
  }
  if (model.gkedm) {
    out += "+gkedm(h=" + std::to_string(model.gkedm->attn.n_heads) +
           ",m=" + std::to_string(model.gkedm->pe.values.cols()) + ")";
  }
  return out;
}

// --- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'K', 'E', 'D', 'M', 'C', 'P', '1'};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<NamedTensor> named_tensors(const Model& model) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    std::string p = "conv" + std::to_string(i) + ".";
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, GcnConvLayer>) {
            out.push_back({p + "weight", layer.weight});
            out.push_back({p + "bias", layer.bias});
          } else {
            out.push_back({p + "weight_self", layer.weight_self});
            out.push_back({p + "weight_neigh", layer.weight_neigh});
            out.push_back({p + "bias", layer.bias});
          }
        },
        model.convs[i]);
  }
  if (model.gkedm) {
    const auto& b = *model.gkedm;
    out.push_back({"gkedm.pe_values", b.pe.values});
    out.push_back({"gkedm.pe_eigenvalues",
                   Tensor(Shape{b.pe.eigenvalues.size()}, b.pe.eigenvalues)});
    out.push_back({"gkedm.pe_map", b.pe_map});
    out.push_back({"gkedm.wq", b.attn.wq});
    out.push_back({"gkedm.bq", b.attn.bq});
    out.push_back({"gkedm.wk", b.attn.wk});
    out.push_back({"gkedm.bk", b.attn.bk});
    out.push_back({"gkedm.wv", b.attn.wv});
    out.push_back({"gkedm.bv", b.attn.bv});
  }
  out.push_back({"head.w1", model.head.w1});
  out.push_back({"head.b1", model.head.b1});
  out.push_back({"head.w2", model.head.w2});
  out.push_back({"head.b2", model.head.b2});
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  auto tensors = named_tensors(model);
  json manifest;
  manifest["format"] = "gkedm-ckpt-v1";
  manifest["conv_kind"] = conv_kind_str(model.kind);
  manifest["task_kind"] = task_kind_str(model.task);
  manifest["d_in"] = model.d_in;
  manifest["n_out"] = model.n_out;
  json convs = json::array();
  for (const Conv& c : model.convs) {
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, GcnConvLayer>) {
            convs.push_back({{"in", layer.weight.rows()}, {"out", layer.weight.cols()}});
          } else {
            convs.push_back({{"in", layer.weight_self.rows()}, {"out", layer.weight_self.cols()}});
          }
        },
        c);
  }
  manifest["convs"] = std::move(convs);
  if (model.gkedm) {
    manifest["gkedm"] = {{"n_heads", model.gkedm->attn.n_heads},
                         {"d_model", model.gkedm->attn.d_model},
                         {"m", model.gkedm->pe.values.cols()},
                         {"n_nodes", model.gkedm->pe.values.rows()}};
  } else {
    manifest["gkedm"] = nullptr;
  }
  manifest["head"] = {{"in", model.head.w1.rows()},
                      {"hidden", model.head.w1.cols()},
                      {"out", model.head.w2.cols()}};
  json tlist = json::array();
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    tlist.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    offset += nt.tensor.numel() * sizeof(double);
  }
  manifest["tensors"] = std::move(tlist);

  std::string mjson = manifest.dump();
  std::string buf;
  buf.reserve(sizeof kMagic + 8 + mjson.size() + offset);
  buf.append(kMagic, sizeof kMagic);
  std::uint64_t mlen = mjson.size();
  buf.append(reinterpret_cast<const char*>(&mlen), sizeof mlen);
  buf.append(mjson);
  for (const auto& nt : tensors) {
    const auto& v = nt.tensor.values();
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }

  namespace fs = std::filesystem;
  fs::path tmp = fs::path(path);
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open \"" + tmp.string() + "\" for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("short write to \"" + tmp.string() + "\"");
  }
  fs::rename(tmp, path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint \"" + path + "\"");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("\"" + path + "\" is not a gkedm checkpoint");
  }
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw ParseError("truncated checkpoint \"" + path + "\"");
  json manifest;
  try {
    manifest = json::parse(mjson);
  } catch (const json::parse_error& e) {
    throw ParseError("bad checkpoint manifest: " + std::string(e.what()));
  }

  std::string blob(std::istreambuf_iterator<char>(in), {});

  try {
    Model m;
    m.kind = parse_conv_kind(manifest.at("conv_kind").get<std::string>());
    m.task = parse_task_kind(manifest.at("task_kind").get<std::string>());
    m.d_in = manifest.at("d_in").get<std::size_t>();
    m.n_out = manifest.at("n_out").get<std::size_t>();

    std::size_t cursor = 0;
    auto take = [&](const json& spec) -> Tensor {
      Shape shape = spec.at("shape").get<Shape>();
      std::size_t offset = spec.at("offset").get<std::size_t>();
      std::size_t count = 1;
      for (std::size_t d : shape) count *= d;
      if (offset + count * sizeof(double) > blob.size()) {
        throw ParseError("checkpoint blob too short for tensor \"" +
                         spec.at("name").get<std::string>() + "\"");
      }
      std::vector<double> vals(count);
      std::memcpy(vals.data(), blob.data() + offset, count * sizeof(double));
      return Tensor(std::move(shape), std::move(vals), true);
    };
    const auto& tlist = manifest.at("tensors");
    auto next = [&]() -> const json& { return tlist.at(cursor++); };

    for (const auto& cj : manifest.at("convs")) {
      (void)cj;
      if (m.kind == ConvKind::kGcn) {
        GcnConvLayer l;
        l.weight = take(next());
        l.bias = take(next());
        m.convs.push_back(l);
      } else {
        SageConvLayer l;
        l.weight_self = take(next());
        l.weight_neigh = take(next());
        l.bias = take(next());
        m.convs.push_back(l);
      }
    }
    if (!manifest.at("gkedm").is_null()) {
      GkedmBlock b;
      b.pe.values = take(next());
      b.pe.values.set_requires_grad(false);
      Tensor ev = take(next());
      b.pe.eigenvalues = ev.values();
      b.pe_map = take(next());
      b.attn.n_heads = manifest.at("gkedm").at("n_heads").get<std::size_t>();
      b.attn.d_model = manifest.at("gkedm").at("d_model").get<std::size_t>();
      b.attn.wq = take(next());
      b.attn.bq = take(next());
      b.attn.wk = take(next());
      b.attn.bk = take(next());
      b.attn.wv = take(next());
      b.attn.bv = take(next());
      m.gkedm = std::move(b);
    }
    m.head.w1 = take(next());
    m.head.b1 = take(next());
    m.head.w2 = take(next());
    m.head.b2 = take(next());
    return m;
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace gkedm
