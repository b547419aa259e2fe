#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gkedm/graph.hpp"
#include "oracles.hpp"

using namespace gkedm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double column_residual(const Tensor& m, const Tensor& vecs, double lambda, std::size_t col) {
  std::size_t n = m.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mv = 0.0;
    for (std::size_t j = 0; j < n; ++j) mv += m.at(i, j) * vecs.at(j, col);
    double r = mv - lambda * vecs.at(i, col);
    s += r * r;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("add_self_loops: empty graph, idempotence, path counting") {
  CsrGraph empty = make_csr(3, {}, true);
  CsrGraph looped = add_self_loops(empty);
  CHECK(looped.n_edges() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(looped.has_edge(i, i));

  CsrGraph again = add_self_loops(looped);
  CHECK(same_structure(again, looped));

  CsrGraph path = make_csr(3, {{0, 1}, {1, 2}}, true);
  CHECK(path.n_edges() == 4);
  CHECK(add_self_loops(path).n_edges() == 7);
}

TEST_CASE("csr construction validates endpoints and sorts neighbors") {
  CHECK_THROWS_AS(make_csr(3, {{0, 99}}, false), ValidationError);
  CsrGraph g = make_csr(4, {{2, 1}, {2, 3}, {2, 0}, {2, 1}}, false);
  auto nb = g.neighbors(2);
  CHECK(std::vector<std::size_t>(nb.begin(), nb.end()) == std::vector<std::size_t>{0, 1, 2, 3});
  // symmetric mirroring
  CsrGraph s = make_csr(3, {{0, 2}}, true);
  CHECK(s.has_edge(2, 0));
}

TEST_CASE("normalized laplacian: single edge, triangle, spectrum bounds") {
  CsrGraph pair = make_csr(2, {{0, 1}}, true);
  Tensor l = normalized_laplacian(pair);
  CHECK(l.at(0, 0) == doctest::Approx(1.0));
  CHECK(l.at(0, 1) == doctest::Approx(-1.0));
  CHECK(l.at(1, 0) == doctest::Approx(-1.0));
  CHECK(l.at(1, 1) == doctest::Approx(1.0));

  CsrGraph k3 = make_csr(3, {{0, 1}, {1, 2}, {0, 2}}, true);
  Tensor lk = normalized_laplacian(k3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(lk.at(i, i) == doctest::Approx(1.0));
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) CHECK(lk.at(i, j) == doctest::Approx(-0.5));
    }
  }

  // self-loops are excluded from the degree
  CHECK(normalized_laplacian(add_self_loops(k3)).values() == lk.values());

  CHECK_THROWS_AS(normalized_laplacian(make_csr(2, {{0, 1}}, false)), ContractError);

  Rng rng(4);
  CsrGraph g = oracle::random_graph(6, 0.5, rng, false);
  auto eig = symmetric_eigendecomposition(normalized_laplacian(g));
  for (double lambda : eig.eigenvalues) {
    CHECK(lambda > -1e-9);
    CHECK(lambda < 2.0 + 1e-9);
  }
}

TEST_CASE("jacobi eigendecomposition: known matrices") {
  Tensor diag(Shape{3, 3}, {3, 0, 0, 0, 1, 0, 0, 0, 2});
  auto e = symmetric_eigendecomposition(diag);
  CHECK(e.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(e.eigenvalues[2] == doctest::Approx(3.0).epsilon(1e-12));
  // axis eigenvectors up to sign
  CHECK(std::abs(e.eigenvectors.at(1, 0)) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor m2(Shape{2, 2}, {2, 1, 1, 2});
  auto e2 = symmetric_eigendecomposition(m2);
  CHECK(e2.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e2.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-12));

  Tensor asym(Shape{2, 2}, {0, 1, 0, 0});
  CHECK_THROWS_AS(symmetric_eigendecomposition(asym), ContractError);
}

TEST_CASE("jacobi reconstruction on a block-model laplacian") {
  SbmParams p;
  p.blocks = 2;
  p.nodes_per_block = 5;
  p.p_in = 0.9;
  p.p_out = 0.2;
  p.seed = 3;
  NodeDataset ds = sbm_generate(p);
  Tensor l = normalized_laplacian(ds.graph);
  auto e = symmetric_eigendecomposition(l);
  std::size_t n = l.rows();
  // V Lambda V^T within 1e-8 Frobenius
  double err2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double rec = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        rec += e.eigenvectors.at(i, k) * e.eigenvalues[k] * e.eigenvectors.at(j, k);
      }
      double d = rec - l.at(i, j);
      err2 += d * d;
    }
  }
  CHECK(std::sqrt(err2) < 1e-8);
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(column_residual(l, e.eigenvectors, e.eigenvalues[k], k) < 1e-8);
  }
}

TEST_CASE("laplacian positional encoding") {
  // 2-node single edge, m=1: eigenvalue 0, constant positive unit vector
  CsrGraph pair = make_csr(2, {{0, 1}}, true);
  PeMatrix pe = laplacian_pe(pair, 1);
  CHECK(pe.eigenvalues.size() == 1);
  CHECK(std::abs(pe.eigenvalues[0]) < 1e-10);
  CHECK(pe.values.at(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));
  CHECK(pe.values.at(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-10));

  // m > n pads with zero columns
  PeMatrix wide = laplacian_pe(pair, 5);
  CHECK(wide.values.cols() == 5);
  CHECK(wide.eigenvalues.size() == 2);
  for (std::size_t c = 2; c < 5; ++c) {
    for (std::size_t r = 0; r < 2; ++r) CHECK(wide.values.at(r, c) == 0.0);
  }

  // K3 spectrum {0, 3/2, 3/2}: the repeated eigenvalue is deduplicated
  CsrGraph k3 = make_csr(3, {{0, 1}, {1, 2}, {0, 2}}, true);
  PeMatrix pk = laplacian_pe(k3, 2);
  CHECK(pk.eigenvalues.size() == 2);
  CHECK(pk.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(pk.eigenvalues[1] == doctest::Approx(1.5).epsilon(1e-10));
  PeMatrix pk3 = laplacian_pe(k3, 3);
  CHECK(pk3.eigenvalues.size() == 2);  // only two distinct eigenvalues exist

  CHECK_THROWS_AS(laplacian_pe(k3, 0), ContractError);
}

TEST_CASE("pe columns: eigen residuals, orthogonality, strictly increasing gaps") {
  Rng rng(21);
  CsrGraph g = oracle::random_graph(12, 0.4, rng, false);
  std::size_t m = 6;
  PeMatrix pe = laplacian_pe(g, m);
  Tensor l = normalized_laplacian(g);
  for (std::size_t k = 0; k < pe.eigenvalues.size(); ++k) {
    CHECK(column_residual(l, pe.values, pe.eigenvalues[k], k) < 1e-8);
  }
  for (std::size_t a = 0; a < pe.eigenvalues.size(); ++a) {
    for (std::size_t b = a + 1; b < pe.eigenvalues.size(); ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < g.n_nodes; ++r) dot += pe.values.at(r, a) * pe.values.at(r, b);
      CHECK(std::abs(dot) < 1e-6);
    }
    // sign rule: the largest-magnitude entry is positive
    double best = 0.0;
    for (std::size_t r = 0; r < g.n_nodes; ++r) {
      if (std::abs(pe.values.at(r, a)) > std::abs(best)) best = pe.values.at(r, a);
    }
    CHECK(best > 0.0);
  }
  for (std::size_t k = 1; k < pe.eigenvalues.size(); ++k) {
    CHECK(pe.eigenvalues[k] - pe.eigenvalues[k - 1] > 1e-8);
  }
}

TEST_CASE("sbm generator: cliques, determinism, density") {
  SbmParams p;
  p.blocks = 2;
  p.nodes_per_block = 3;
  p.p_in = 1.0;
  p.p_out = 0.0;
  p.feature_dim = 4;
  p.seed = 12;
  NodeDataset ds = sbm_generate(p);
  // two disjoint triangles
  CHECK(ds.graph.n_edges() == 2 * 6);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) {
        CHECK(ds.graph.has_edge(i, j));
        CHECK(ds.graph.has_edge(i + 3, j + 3));
        CHECK_FALSE(ds.graph.has_edge(i, j + 3));
      }
    }
  }
  CHECK(ds.labels == std::vector<int>{0, 0, 0, 1, 1, 1});

  NodeDataset again = sbm_generate(p);
  CHECK(datasets_equal(ds, again));

  SbmParams big;
  big.blocks = 4;
  big.nodes_per_block = 50;
  big.p_in = 0.2;
  big.p_out = 0.02;
  big.seed = 5;
  NodeDataset bds = sbm_generate(big);
  std::size_t intra = 0, intra_possible = 0;
  for (std::size_t i = 0; i < bds.n_nodes(); ++i) {
    for (std::size_t j = i + 1; j < bds.n_nodes(); ++j) {
      if (bds.labels[i] == bds.labels[j]) {
        ++intra_possible;
        intra += bds.graph.has_edge(i, j);
      }
    }
  }
  double density = static_cast<double>(intra) / static_cast<double>(intra_possible);
  CHECK(std::abs(density - big.p_in) < 0.05);

  SbmParams bad = p;
  bad.p_out = 0.5;
  bad.p_in = 0.2;
  CHECK_THROWS_AS(sbm_generate(bad), ContractError);
  bad = p;
  bad.nodes_per_block = 0;
  CHECK_THROWS_AS(sbm_generate(bad), ContractError);
}

TEST_CASE("sbm masks are disjoint and stratified 60/20/20") {
  SbmParams p;
  p.blocks = 3;
  p.nodes_per_block = 10;
  p.p_in = 0.5;
  p.p_out = 0.1;
  p.seed = 9;
  NodeDataset ds = sbm_generate(p);
  std::size_t tr = 0, va = 0, te = 0;
  for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
    int hit = ds.train_mask[i] + ds.val_mask[i] + ds.test_mask[i];
    CHECK(hit == 1);
    tr += ds.train_mask[i];
    va += ds.val_mask[i];
    te += ds.test_mask[i];
  }
  CHECK(tr == 18);
  CHECK(va == 6);
  CHECK(te == 6);
}

TEST_CASE("multilabel generator: extreme probabilities and frequencies") {
  MultilabelSbmParams p;
  p.base.blocks = 2;
  p.base.nodes_per_block = 4;
  p.base.p_in = 0.9;
  p.base.p_out = 0.1;
  p.base.seed = 7;
  p.n_labels = 3;
  p.label_probs.assign(2 * 3, 1.0);
  NodeDataset ones = multilabel_sbm_generate(p);
  CHECK(ones.task_kind == TaskKind::kMultiLabel);
  for (double v : ones.label_matrix.values()) CHECK(v == 1.0);

  p.label_probs.assign(2 * 3, 0.0);
  NodeDataset zeros = multilabel_sbm_generate(p);
  for (double v : zeros.label_matrix.values()) CHECK(v == 0.0);

  MultilabelSbmParams big;
  big.base.blocks = 2;
  big.base.nodes_per_block = 400;
  big.base.p_in = 0.05;
  big.base.p_out = 0.01;
  big.base.seed = 13;
  big.n_labels = 5;
  big.label_probs = {0.1, 0.3, 0.5, 0.7, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5};
  NodeDataset ds = multilabel_sbm_generate(big);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t l = 0; l < 5; ++l) {
      double freq = 0.0;
      for (std::size_t i = b * 400; i < (b + 1) * 400; ++i) freq += ds.label_matrix.at(i, l);
      freq /= 400.0;
      CHECK(std::abs(freq - big.label_probs[b * 5 + l]) < 0.05);
    }
  }
}

TEST_CASE("dataset files: minimal, dangling edge, round trip") {
  std::string path = temp_path("gkedm_ds_minimal.jsonl");
  {
    std::ofstream out(path);
    out << R"({"n_nodes":1,"feature_dim":2,"task_kind":"multi-class","n_classes":1,"symmetric":true})"
        << "\n";
    out << R"({"id":0,"features":[0.5,-1.0],"label":0,"split":"train"})" << "\n";
  }
  NodeDataset one = load_dataset(path);
  CHECK(one.n_nodes() == 1);
  CHECK(one.graph.n_edges() == 0);
  CHECK(one.features.at(0, 1) == -1.0);

  std::string bad = temp_path("gkedm_ds_bad.jsonl");
  {
    std::ofstream out(bad);
    out << R"({"n_nodes":3,"feature_dim":1,"task_kind":"multi-class","n_classes":2,"symmetric":true})"
        << "\n";
    for (int i = 0; i < 3; ++i) {
      out << R"({"id":)" << i << R"(,"features":[0.0],"label":0,"split":"none"})" << "\n";
    }
    out << R"({"src":0,"dst":99})" << "\n";
  }
  CHECK_THROWS_AS(load_dataset(bad), ValidationError);

  std::string garbled = temp_path("gkedm_ds_garbled.jsonl");
  {
    std::ofstream out(garbled);
    out << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(garbled), doctest::Contains(":1:"), ParseError);

  SbmParams p;
  p.blocks = 3;
  p.nodes_per_block = 6;
  p.p_in = 0.8;
  p.p_out = 0.1;
  p.noise_sigma = 0.7;
  p.seed = 31;
  NodeDataset ds = sbm_generate(p);
  std::string rt = temp_path("gkedm_ds_roundtrip.jsonl");
  save_dataset(ds, rt);
  CHECK(datasets_equal(ds, load_dataset(rt)));

  MultilabelSbmParams mp;
  mp.base = p;
  mp.n_labels = 4;
  NodeDataset mds = multilabel_sbm_generate(mp);
  save_dataset(mds, rt);
  CHECK(datasets_equal(mds, load_dataset(rt)));

  std::remove(path.c_str());
  std::remove(bad.c_str());
  std::remove(garbled.c_str());
  std::remove(rt.c_str());
}

TEST_CASE("permute_nodes: identity, inverse, degree multiset") {
  SbmParams p;
  p.blocks = 2;
  p.nodes_per_block = 5;
  p.p_in = 0.7;
  p.p_out = 0.2;
  p.seed = 8;
  NodeDataset ds = sbm_generate(p);
  std::size_t n = ds.n_nodes();

  std::vector<std::size_t> ident(n);
  std::iota(ident.begin(), ident.end(), 0);
  CHECK(datasets_equal(permute_nodes(ds, ident), ds));

  Rng rng(2);
  std::vector<std::size_t> perm = ident;
  rng.shuffle(perm);
  NodeDataset pd = permute_nodes(ds, perm);
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[perm[i]] = i;
  CHECK(datasets_equal(permute_nodes(pd, inverse), ds));

  std::vector<std::size_t> deg_a, deg_b;
  for (std::size_t i = 0; i < n; ++i) {
    deg_a.push_back(ds.graph.degree(i));
    deg_b.push_back(pd.graph.degree(i));
  }
  std::sort(deg_a.begin(), deg_a.end());
  std::sort(deg_b.begin(), deg_b.end());
  CHECK(deg_a == deg_b);

  std::vector<std::size_t> notbij(n, 0);
  CHECK_THROWS_AS(permute_nodes(ds, notbij), ContractError);
}

TEST_CASE("laplacian commutes with permutation") {
  Rng rng(77);
  CsrGraph g = oracle::random_graph(9, 0.4, rng, false);
  std::vector<std::size_t> perm(g.n_nodes);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Tensor l = normalized_laplacian(g);
  Tensor lp = normalized_laplacian(permute_graph(g, perm));
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    for (std::size_t j = 0; j < g.n_nodes; ++j) {
      CHECK(lp.at(perm[i], perm[j]) == doctest::Approx(l.at(i, j)).epsilon(1e-12));
    }
  }
}
