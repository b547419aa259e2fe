#include "gkedm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gkedm/rng.hpp"

namespace gkedm {

using json = nlohmann::ordered_json;

std::string task_kind_str(TaskKind k) {
  return k == TaskKind::kMultiClass ? "multi-class" : "multi-label";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "multi-class") return TaskKind::kMultiClass;
  if (s == "multi-label") return TaskKind::kMultiLabel;
  throw ParseError("unknown task_kind \"" + s + "\"");
}

bool datasets_equal(const NodeDataset& a, const NodeDataset& b) {
  if (!same_structure(a.graph, b.graph) || a.graph.symmetric != b.graph.symmetric) return false;
  if (a.task_kind != b.task_kind || a.n_outputs != b.n_outputs) return false;
  if (a.features.shape() != b.features.shape() || a.features.values() != b.features.values())
    return false;
  if (a.labels != b.labels) return false;
  if (a.task_kind == TaskKind::kMultiLabel &&
      a.label_matrix.values() != b.label_matrix.values())
    return false;
  return a.train_mask == b.train_mask && a.val_mask == b.val_mask && a.test_mask == b.test_mask;
}

Tensor normalized_laplacian(const CsrGraph& g) {
  if (!g.symmetric) throw ContractError("normalized_laplacian requires a symmetric graph");
  CsrGraph s = strip_self_loops(g);
  std::size_t n = s.n_nodes;
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t d = s.degree(i);
    if (d > 0) inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(d));
  }
  Tensor lap(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    lap.at(i, i) = 1.0;
    for (std::size_t j : s.neighbors(i)) {
      lap.at(i, j) = -inv_sqrt_deg[i] * inv_sqrt_deg[j];
    }
  }
  return lap;
}

EigenDecomposition symmetric_eigendecomposition(const Tensor& m) {
  if (m.ndim() != 2 || m.rows() != m.cols()) {
    throw DimensionError("eigendecomposition needs a square matrix, got " + shape_str(m.shape()));
  }
  std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-10) {
        throw ContractError("matrix is not symmetric within 1e-10");
      }
    }
  }

  std::vector<double> a(m.values());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  auto V = [&](std::size_t i, std::size_t j) -> double& { return v[i * n + j]; };

  double fro = 0.0;
  for (double x : a) fro += x * x;
  fro = std::sqrt(fro);
  double thresh = std::min(1e-10, 1e-14 * std::max(1.0, fro));

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) s += A(i, j) * A(i, j);
      }
    }
    return std::sqrt(s);
  };

  const int kMaxSweeps = 100;
  int sweep = 0;
  while (off_norm() > thresh) {
    if (++sweep > kMaxSweeps) {
      throw NumericError("Jacobi eigensolver did not converge in 100 sweeps");
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        double tau = s / (1.0 + c);
        double app = A(p, p), aqq = A(q, q);
        A(p, p) = app - t * apq;
        A(q, q) = aqq + t * apq;
        A(p, q) = 0.0;
        A(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            double arp = A(r, p), arq = A(r, q);
            A(r, p) = arp - s * (arq + tau * arp);
            A(p, r) = A(r, p);
            A(r, q) = arq + s * (arp - tau * arq);
            A(q, r) = A(r, q);
          }
          double vrp = V(r, p), vrq = V(r, q);
          V(r, p) = vrp - s * (vrq + tau * vrp);
          V(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return A(x, x) < A(y, y); });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Tensor(Shape{n, n});
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = A(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors.at(r, k) = V(r, order[k]);
  }
  return out;
}

PeMatrix laplacian_pe(const CsrGraph& g, std::size_t m) {
  if (m < 1) throw ContractError("laplacian_pe requires m >= 1");
  Tensor lap = normalized_laplacian(g);
  EigenDecomposition eig = symmetric_eigendecomposition(lap);
  std::size_t n = g.n_nodes;

  PeMatrix pe;
  pe.values = Tensor(Shape{n, m});
  for (std::size_t k = 0; k < n && pe.eigenvalues.size() < m; ++k) {
    double lambda = eig.eigenvalues[k];
    if (!pe.eigenvalues.empty() && lambda - pe.eigenvalues.back() <= 1e-8) continue;
    std::size_t col = pe.eigenvalues.size();
    // sign rule: largest-magnitude entry positive (first such entry on ties)
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t r = 0; r < n; ++r) {
      double mag = std::abs(eig.eigenvectors.at(r, k));
      if (mag > best) {
        best = mag;
        arg = r;
      }
    }
    double sign = eig.eigenvectors.at(arg, k) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      pe.values.at(r, col) = sign * eig.eigenvectors.at(r, k);
    }
    pe.eigenvalues.push_back(lambda);
  }
  return pe;
}

namespace {

void stratified_masks(NodeDataset& ds, std::size_t blocks, std::size_t npb, Rng& rng) {
  std::size_t n = blocks * npb;
  ds.train_mask.assign(n, 0);
  ds.val_mask.assign(n, 0);
  ds.test_mask.assign(n, 0);
  std::size_t n_train = static_cast<std::size_t>(std::floor(0.6 * static_cast<double>(npb)));
  std::size_t n_val = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(npb)));
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<std::size_t> ids(npb);
    std::iota(ids.begin(), ids.end(), b * npb);
    rng.shuffle(ids);
    for (std::size_t i = 0; i < npb; ++i) {
      if (i < n_train) {
        ds.train_mask[ids[i]] = 1;
      } else if (i < n_train + n_val) {
        ds.val_mask[ids[i]] = 1;
      } else {
        ds.test_mask[ids[i]] = 1;
      }
    }
  }
}

void sbm_check(const SbmParams& p) {
  if (p.blocks < 1 || p.nodes_per_block < 1 || p.feature_dim < 1) {
    throw ContractError("sbm_generate: blocks, nodes_per_block and feature_dim must be >= 1");
  }
  if (!(0.0 <= p.p_out && p.p_out < p.p_in && p.p_in <= 1.0)) {
    throw ContractError("sbm_generate requires 0 <= p_out < p_in <= 1");
  }
  if (p.noise_sigma < 0.0) throw ContractError("sbm_generate: noise_sigma must be >= 0");
}

// graph + features + block labels, shared by both generators
NodeDataset sbm_core(const SbmParams& p, Rng& rng) {
  std::size_t n = p.blocks * p.nodes_per_block;
  auto block_of = [&](std::size_t i) { return i / p.nodes_per_block; };

  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double prob = block_of(i) == block_of(j) ? p.p_in : p.p_out;
      if (rng.uniform() < prob) edges.emplace_back(i, j);
    }
  }

  NodeDataset ds;
  ds.graph = make_csr(n, edges, true);
  ds.features = Tensor(Shape{n, p.feature_dim});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t centroid = block_of(i) % p.feature_dim;
    for (std::size_t c = 0; c < p.feature_dim; ++c) {
      double base = c == centroid ? 1.0 : 0.0;
      ds.features.at(i, c) = base + p.noise_sigma * rng.normal();
    }
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(block_of(i));
  return ds;
}

}  // namespace

NodeDataset sbm_generate(const SbmParams& p) {
  sbm_check(p);
  Rng rng(p.seed);
  NodeDataset ds = sbm_core(p, rng);
  ds.task_kind = TaskKind::kMultiClass;
  ds.n_outputs = p.blocks;
  stratified_masks(ds, p.blocks, p.nodes_per_block, rng);
  return ds;
}

NodeDataset multilabel_sbm_generate(const MultilabelSbmParams& p) {
  sbm_check(p.base);
  if (p.n_labels < 1) throw ContractError("multilabel_sbm_generate: n_labels must be >= 1");
  if (!p.label_probs.empty() && p.label_probs.size() != p.base.blocks * p.n_labels) {
    throw ContractError("multilabel_sbm_generate: label_probs must be blocks x n_labels");
  }
  Rng rng(p.base.seed);
  NodeDataset ds = sbm_core(p.base, rng);
  ds.task_kind = TaskKind::kMultiLabel;
  ds.n_outputs = p.n_labels;

  std::vector<double> probs = p.label_probs;
  if (probs.empty()) {
    probs.resize(p.base.blocks * p.n_labels);
    for (double& x : probs) x = rng.uniform(0.1, 0.9);
  }
  std::size_t n = ds.n_nodes();
  ds.label_matrix = Tensor(Shape{n, p.n_labels});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t b = static_cast<std::size_t>(ds.labels[i]);
    for (std::size_t l = 0; l < p.n_labels; ++l) {
      ds.label_matrix.at(i, l) = rng.uniform() < probs[b * p.n_labels + l] ? 1.0 : 0.0;
    }
  }
  ds.labels.clear();
  stratified_masks(ds, p.base.blocks, p.base.nodes_per_block, rng);
  return ds;
}

// --- JSON-lines dataset files ----------------------------------------------------

namespace {

std::string split_of(const NodeDataset& ds, std::size_t i) {
  if (ds.train_mask[i]) return "train";
  if (ds.val_mask[i]) return "val";
  if (ds.test_mask[i]) return "test";
  return "none";
}

void write_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open \"" + tmp.string() + "\" for writing");
    out << contents;
    if (!out) throw Error("short write to \"" + tmp.string() + "\"");
  }
  fs::rename(tmp, target);
}

}  // namespace

void save_dataset(const NodeDataset& ds, const std::string& path) {
  std::ostringstream out;
  json header;
  header["n_nodes"] = ds.n_nodes();
  header["feature_dim"] = ds.feature_dim();
  header["task_kind"] = task_kind_str(ds.task_kind);
  if (ds.task_kind == TaskKind::kMultiClass) {
    header["n_classes"] = ds.n_outputs;
  } else {
    header["n_labels"] = ds.n_outputs;
  }
  header["symmetric"] = ds.graph.symmetric;
  out << header.dump() << "\n";

  for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
    json node;
    node["id"] = i;
    json feats = json::array();
    for (std::size_t c = 0; c < ds.feature_dim(); ++c) feats.push_back(ds.features.at(i, c));
    node["features"] = std::move(feats);
    if (ds.task_kind == TaskKind::kMultiClass) {
      node["label"] = ds.labels[i];
    } else {
      json row = json::array();
      for (std::size_t l = 0; l < ds.n_outputs; ++l) {
        row.push_back(static_cast<int>(ds.label_matrix.at(i, l)));
      }
      node["label"] = std::move(row);
    }
    node["split"] = split_of(ds, i);
    out << node.dump() << "\n";
  }

  for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
    for (std::size_t j : ds.graph.neighbors(i)) {
      if (ds.graph.symmetric && j < i) continue;  // each undirected edge once
      out << json({{"src", i}, {"dst", j}}).dump() << "\n";
    }
  }
  write_atomic(path, out.str());
}

NodeDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file \"" + path + "\"");

  std::string line;
  std::size_t lineno = 0;
  auto next_json = [&](json& j) -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      return true;
    }
    return false;
  };
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(path + ":" + std::to_string(lineno) + ": " + what);
  };

  json header;
  if (!next_json(header)) throw ParseError(path + ": empty file");
  NodeDataset ds;
  std::size_t n, fd;
  try {
    n = header.at("n_nodes").get<std::size_t>();
    fd = header.at("feature_dim").get<std::size_t>();
    ds.task_kind = parse_task_kind(header.at("task_kind").get<std::string>());
    ds.n_outputs = ds.task_kind == TaskKind::kMultiClass
                       ? header.at("n_classes").get<std::size_t>()
                       : header.at("n_labels").get<std::size_t>();
  } catch (const json::exception& e) {
    throw fail(std::string("bad header: ") + e.what());
  }
  bool symmetric = header.value("symmetric", true);
  if (n < 1 || fd < 1 || ds.n_outputs < 1) throw fail("header sizes must be >= 1");

  ds.features = Tensor(Shape{n, fd});
  ds.train_mask.assign(n, 0);
  ds.val_mask.assign(n, 0);
  ds.test_mask.assign(n, 0);
  if (ds.task_kind == TaskKind::kMultiClass) {
    ds.labels.assign(n, 0);
  } else {
    ds.label_matrix = Tensor(Shape{n, ds.n_outputs});
  }

  for (std::size_t i = 0; i < n; ++i) {
    json node;
    if (!next_json(node)) throw fail("expected " + std::to_string(n) + " node lines");
    try {
      if (node.at("id").get<std::size_t>() != i) {
        throw fail("node ids must be consecutive from 0; expected " + std::to_string(i));
      }
      const auto& feats = node.at("features");
      if (!feats.is_array() || feats.size() != fd) {
        throw fail("node " + std::to_string(i) + ": features must have length " +
                   std::to_string(fd));
      }
      for (std::size_t c = 0; c < fd; ++c) ds.features.at(i, c) = feats[c].get<double>();
      if (ds.task_kind == TaskKind::kMultiClass) {
        int lab = node.at("label").get<int>();
        if (lab < 0 || static_cast<std::size_t>(lab) >= ds.n_outputs) {
          throw ValidationError(path + ":" + std::to_string(lineno) + ": label " +
                                std::to_string(lab) + " outside [0," +
                                std::to_string(ds.n_outputs) + ")");
        }
        ds.labels[i] = lab;
      } else {
        const auto& row = node.at("label");
        if (!row.is_array() || row.size() != ds.n_outputs) {
          throw fail("node " + std::to_string(i) + ": label must be a 0/1 array of length " +
                     std::to_string(ds.n_outputs));
        }
        for (std::size_t l = 0; l < ds.n_outputs; ++l) {
          int v = row[l].get<int>();
          if (v != 0 && v != 1) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": multi-label entries must be 0 or 1");
          }
          ds.label_matrix.at(i, l) = v;
        }
      }
      std::string split = node.at("split").get<std::string>();
      if (split == "train") {
        ds.train_mask[i] = 1;
      } else if (split == "val") {
        ds.val_mask[i] = 1;
      } else if (split == "test") {
        ds.test_mask[i] = 1;
      } else if (split != "none") {
        throw fail("unknown split \"" + split + "\"");
      }
    } catch (const json::exception& e) {
      throw fail(std::string("bad node line: ") + e.what());
    }
  }

  EdgeList edges;
  json edge;
  while (next_json(edge)) {
    std::size_t s, d;
    try {
      s = edge.at("src").get<std::size_t>();
      d = edge.at("dst").get<std::size_t>();
    } catch (const json::exception& e) {
      throw fail(std::string("bad edge line: ") + e.what());
    }
    if (s >= n || d >= n) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": edge (" + std::to_string(s) +
                            "," + std::to_string(d) + ") references a node outside [0," +
                            std::to_string(n) + ")");
    }
    edges.emplace_back(s, d);
  }
  ds.graph = make_csr(n, edges, symmetric);
  return ds;
}

NodeDataset permute_nodes(const NodeDataset& ds, const std::vector<std::size_t>& perm) {
  check_permutation(perm, ds.n_nodes());
  NodeDataset out;
  out.graph = permute_graph(ds.graph, perm);
  out.task_kind = ds.task_kind;
  out.n_outputs = ds.n_outputs;
  std::size_t n = ds.n_nodes(), fd = ds.feature_dim();
  out.features = Tensor(Shape{n, fd});
  out.train_mask.assign(n, 0);
  out.val_mask.assign(n, 0);
  out.test_mask.assign(n, 0);
  if (ds.task_kind == TaskKind::kMultiClass) {
    out.labels.assign(n, 0);
  } else {
    out.label_matrix = Tensor(Shape{n, ds.n_outputs});
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t p = perm[i];
    for (std::size_t c = 0; c < fd; ++c) out.features.at(p, c) = ds.features.at(i, c);
    if (ds.task_kind == TaskKind::kMultiClass) {
      out.labels[p] = ds.labels[i];
    } else {
      for (std::size_t l = 0; l < ds.n_outputs; ++l) {
        out.label_matrix.at(p, l) = ds.label_matrix.at(i, l);
      }
    }
    out.train_mask[p] = ds.train_mask[i];
    out.val_mask[p] = ds.val_mask[i];
    out.test_mask[p] = ds.test_mask[i];
  }
  return out;
}

}  // namespace gkedm
