#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "sgtr/graphgen.hpp"
#include "sgtr/rng.hpp"

using namespace sgtr;

namespace {

NodeEntry entry(double x, double y, std::vector<double> r) {
  NodeEntry e;
  e.x = x;
  e.y = y;
  e.R = std::move(r);
  return e;
}

NodeSet random_set(int n, int C, Rng& rng, int H = 16, int W = 16) {
  NodeSet s;
  for (int i = 0; i < n; ++i) {
    NodeEntry e;
    e.x = rng.uniform(0.0, W - 1.0);
    e.y = rng.uniform(0.0, H - 1.0);
    e.R.resize(C);
    for (double& v : e.R) v = rng.uniform(-1.0, 1.0);
    s.entries.push_back(std::move(e));
  }
  s.root_index = n - 1;
  return s;
}

// the three-step adjacency rule, written independently of build_adjacency:
// top-k by similarity (ties to the lower id), pruning at half the cluster
// mean of either endpoint, then symmetrization with a zero diagonal
Matrix adjacency_oracle(const Matrix& e, AdjacencyMode mode) {
  const int n = static_cast<int>(e.size());
  Matrix a(n, std::vector<double>(n, 0.0));
  if (n <= 1) return a;
  const int k = std::min(kTopK, n - 1);
  std::vector<std::vector<int>> topk(n);
  std::vector<double> mean(n, 0.0);
  for (int u = 0; u < n; ++u) {
    std::vector<int> others;
    for (int v = 0; v < n; ++v)
      if (v != u) others.push_back(v);
    std::sort(others.begin(), others.end(), [&](int x, int y) {
      if (e[u][x] != e[u][y]) return e[u][x] > e[u][y];
      return x < y;
    });
    others.resize(k);
    for (int v : others) mean[u] += e[u][v];
    mean[u] /= k;
    topk[u] = std::move(others);
  }
  for (int u = 0; u < n; ++u)
    for (int v : topk[u])
      if (e[u][v] >= kPruneRatio * mean[u] && e[u][v] >= kPruneRatio * mean[v]) {
        const double val = mode == AdjacencyMode::kDiscrete ? 1.0 : e[u][v];
        a[u][v] = val;
        a[v][u] = val;
      }
  for (int u = 0; u < n; ++u) a[u][u] = 0.0;
  return a;
}

}  // namespace

TEST_CASE("position similarity formula and clamp") {
  NodeEntry p = entry(0, 0, {1});
  CHECK(position_similarity(p, p, 4, 4) == doctest::Approx(1.0).epsilon(1e-12));
  NodeEntry q = entry(0, 2, {1});
  CHECK(position_similarity(p, q, 4, 4) == doctest::Approx(0.5).epsilon(1e-12));
  NodeEntry corner = entry(3, 3, {1});
  // 1 - sqrt(18)/4 is negative, the clamp takes over
  CHECK(position_similarity(p, corner, 4, 4) == 0.0);
}

TEST_CASE("feature similarity extremes") {
  std::vector<double> r{0.3, -0.2, 0.9};
  CHECK(feature_similarity(r, r) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(feature_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<double> neg{-0.3, 0.2, -0.9};
  CHECK(feature_similarity(r, neg) == doctest::Approx(-1.0).epsilon(1e-12));
  // cosine ignores scale
  std::vector<double> scaled{0.9, -0.6, 2.7};
  CHECK(feature_similarity(r, scaled) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("overall similarity composes the two terms") {
  NodeEntry p = entry(1, 1, {1, 0});
  CHECK(overall_similarity(p, p, 8, 8) == doctest::Approx(1.0).epsilon(1e-12));
  // zero position similarity wipes out any feature agreement
  NodeEntry far = entry(100, 100, {1, 0});
  CHECK(overall_similarity(p, far, 4, 4) == 0.0);
}

TEST_CASE("similarity matrix matches the pairwise loop oracle") {
  Rng rng(17);
  NodeSet s = random_set(5, 3, rng);
  Matrix e = similarity_matrix(s, 16, 16);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double want = overall_similarity(s.entries[i], s.entries[j], 16, 16);
      CHECK(std::abs(e[i][j] - want) < 1e-12);
      CHECK(e[i][j] == e[j][i]);
    }
}

TEST_CASE("complete graph from unit similarities") {
  Matrix e(3, std::vector<double>(3, 1.0));
  Matrix a = build_adjacency(e, AdjacencyMode::kDiscrete);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(a[i][j] == (i == j ? 0.0 : 1.0));
}

TEST_CASE("single node yields an empty adjacency") {
  Matrix a = build_adjacency(Matrix(1, std::vector<double>(1, 1.0)), AdjacencyMode::kDiscrete);
  CHECK(a[0][0] == 0.0);
}

TEST_CASE("outlier node ends with degree zero") {
  Rng rng(5);
  const int n = 10;
  Matrix e(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) e[i][j] = (i == j) ? 1.0 : rng.uniform(0.8, 1.0);
  for (int j = 0; j < n; ++j) {
    e[n - 1][j] = 1e-6;
    e[j][n - 1] = 1e-6;
  }
  e[n - 1][n - 1] = 1.0;
  Matrix a = build_adjacency(e, AdjacencyMode::kDiscrete);
  for (int j = 0; j < n; ++j) CHECK(a[n - 1][j] == 0.0);
}

TEST_CASE("adjacency equals the independent three-step oracle") {
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 12);
    Matrix e(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        const double v = (i == j) ? 1.0 : rng.uniform(0.0, 1.0);
        e[i][j] = v;
        e[j][i] = v;
      }
    const AdjacencyMode mode =
        trial % 2 == 0 ? AdjacencyMode::kDiscrete : AdjacencyMode::kContinuous;
    Matrix got = build_adjacency(e, mode);
    Matrix want = adjacency_oracle(e, mode);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(std::abs(got[i][j] - want[i][j]) < 1e-12);
  }
}

TEST_CASE("linking subgraphs counts nodes and chain edges") {
  auto make_sub = [](int n, int ci) {
    CharGraph g;
    for (int i = 0; i < n; ++i) g.nodes.entries.push_back(entry(i, ci, {1.0}));
    g.nodes.root_index = n - 1;
    g.root = n - 1;
    g.char_index = ci;
    g.A.assign(n, std::vector<double>(n, 0.0));
    for (int i = 0; i + 1 < n; ++i) {
      g.A[i][i + 1] = 1.0;
      g.A[i + 1][i] = 1.0;
    }
    g.E = g.A;
    return g;
  };
  FullGraph full = link_subgraphs({make_sub(4, 0), make_sub(5, 1), make_sub(6, 2)});
  CHECK(full.node_count == 15);
  REQUIRE(full.roots.size() == 3);

  // cross-span edges must be exactly the two root links
  int cross = 0;
  for (int u = 0; u < 15; ++u)
    for (int v = u + 1; v < 15; ++v) {
      if (full.A[u][v] == 0.0) continue;
      int su = -1, sv = -1;
      for (size_t g = 0; g < full.spans.size(); ++g) {
        if (u >= full.spans[g].first && u < full.spans[g].second) su = static_cast<int>(g);
        if (v >= full.spans[g].first && v < full.spans[g].second) sv = static_cast<int>(g);
      }
      if (su != sv) ++cross;
    }
  CHECK(cross == 2);

  // removing the chain edges leaves one component per subgraph (union-find)
  std::vector<int> parent(15);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int u = 0; u < 15; ++u)
    for (int v = 0; v < 15; ++v) {
      if (full.A[u][v] == 0.0) continue;
      bool chain = false;
      for (size_t g = 0; g + 1 < full.roots.size(); ++g)
        if ((u == full.roots[g] && v == full.roots[g + 1]) ||
            (v == full.roots[g] && u == full.roots[g + 1]))
          chain = true;
      if (!chain) parent[find(u)] = find(v);
    }
  std::set<int> comps;
  for (int u = 0; u < 15; ++u) comps.insert(find(u));
  CHECK(comps.size() == 3);

  FullGraph single = link_subgraphs({make_sub(4, 0)});
  for (int u = 0; u < 4; ++u)
    for (int v = 0; v < 4; ++v)
      CHECK(single.A[u][v] == (std::abs(u - v) == 1 ? 1.0 : 0.0));
}

TEST_CASE("order embedding at index zero") {
  std::vector<double> e = order_embedding(0);
  REQUIRE(e.size() == 16);
  for (int k = 0; k < 8; ++k) {
    CHECK(e[2 * k] == 0.0);
    CHECK(e[2 * k + 1] == 1.0);
  }
}

TEST_CASE("order embedding separates indices") {
  // injectivity over the practical index range
  std::set<std::vector<double>> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(order_embedding(i));
  CHECK(seen.size() == 1000);
}

TEST_CASE("embedded rows follow the per-part oracle") {
  Rng rng(41);
  const int C = 3, H = 16, W = 16, n = 4;
  NodeSet s = random_set(n, C, rng, H, W);
  s.char_index = 2;
  s.pixel_indices.clear();
  for (int i = 0; i < n - 1; ++i)
    s.pixel_indices.push_back(static_cast<int>(s.entries[i].y) * W +
                              static_cast<int>(s.entries[i].x));
  // v rows must match the entry features at the listed pixels
  std::vector<double> vdata(static_cast<size_t>(H) * W * C, 0.0);
  for (int i = 0; i < n - 1; ++i)
    for (int c = 0; c < C; ++c)
      vdata[static_cast<size_t>(s.pixel_indices[i]) * C + c] = s.entries[i].R[c];
  DiffValue v = DiffValue::constant({H * W, C}, vdata);

  EmbedParams p = EmbedParams::init(C, rng);
  DiffValue x = embed_nodes(s, v, p, H, W);
  REQUIRE(x.dim(0) == n);
  REQUIRE(x.dim(1) == 64);

  // identical inputs embed identically
  NodeSet dup = s;
  dup.entries[1] = dup.entries[0];
  dup.pixel_indices[1] = dup.pixel_indices[0];
  std::vector<double> vdup = vdata;
  DiffValue xd = embed_nodes(dup, DiffValue::constant({H * W, C}, vdup), p, H, W);
  for (int c = 0; c < 64; ++c)
    CHECK(xd.at(static_cast<std::int64_t>(0) * 64 + c) ==
          xd.at(static_cast<std::int64_t>(1) * 64 + c));

  // the order-code block is the raw sinusoid
  std::vector<double> code = order_embedding(s.char_index);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < 16; ++k)
      CHECK(x.at(static_cast<std::int64_t>(r) * 64 + 48 + k) ==
            doctest::Approx(code[k]).epsilon(1e-12));
}

TEST_CASE("centroid root of the uniform square") {
  // node extraction from a crafted map: 4 pixels of one class under full
  // attention in a 4x4 image
  const int H = 4, W = 4, C = 2, T = 1;
  std::vector<double> probs(static_cast<size_t>(H) * W * C, 0.0);
  std::vector<int> px{0 * W + 0, 0 * W + 2, 2 * W + 0, 2 * W + 2};
  for (int i = 0; i < H * W; ++i) probs[static_cast<size_t>(i) * C + 0] = 1.0;
  for (int i : px) {
    probs[static_cast<size_t>(i) * C + 0] = 0.0;
    probs[static_cast<size_t>(i) * C + 1] = 1.0;
  }
  SegmentationMap m;
  m.H = H;
  m.W = W;
  m.C = C;
  m.probs = DiffValue::constant({H * W, C}, probs);
  m.logits = m.probs;
  OrderAttention att;
  att.T = T;
  att.H = H;
  att.W = W;
  std::vector<double> amap(H * W, 1e-9);
  for (int i : px) amap[i] = 1.0;
  att.maps = DiffValue::constant({T, H * W}, std::move(amap));
  OrderedFeatureTensor v = attend(m, att);
  SequenceLogits coarse = decode_sequence(v);
  REQUIRE(coarse.length == 1);
  NodeSet set = extract_node_set(v, m, 0, coarse);
  REQUIRE(set.entries.size() == 5);  // 4 pixels + root
  CHECK(set.root_index == 4);
  CHECK(set.entries[4].x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(set.entries[4].y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("node cap keeps the top-attention pixels") {
  const int H = 16, W = 16, C = 2, T = 1;
  const int HW = H * W;
  std::vector<double> probs(static_cast<size_t>(HW) * C, 0.0);
  for (int i = 0; i < HW; ++i) probs[static_cast<size_t>(i) * C + 1] = 1.0;
  SegmentationMap m;
  m.H = H;
  m.W = W;
  m.C = C;
  m.probs = DiffValue::constant({HW, C}, probs);
  m.logits = m.probs;
  // 200 qualifying pixels with distinct attention values
  OrderAttention att;
  att.T = T;
  att.H = H;
  att.W = W;
  std::vector<double> amap(HW, 1e-9);
  for (int i = 0; i < 200; ++i) amap[i] = 0.6 + 1e-3 * ((i * 37) % 200);
  att.maps = DiffValue::constant({T, HW}, amap);
  OrderedFeatureTensor v = attend(m, att);
  SequenceLogits coarse = decode_sequence(v);
  NodeSet set = extract_node_set(v, m, 0, coarse);
  REQUIRE(static_cast<int>(set.pixel_indices.size()) == kMaxNodesPerChar);
  CHECK(static_cast<int>(set.entries.size()) == kMaxNodesPerChar + 1);

  // oracle: full sort of the qualifying pixels by attention
  std::vector<int> qualifying;
  double amax = 0;
  for (int i = 0; i < HW; ++i) amax = std::max(amax, amap[i]);
  for (int i = 0; i < HW; ++i)
    if (amap[i] > 0.5 * amax) qualifying.push_back(i);
  std::stable_sort(qualifying.begin(), qualifying.end(),
                   [&](int a, int b) { return amap[a] > amap[b]; });
  qualifying.resize(kMaxNodesPerChar);
  std::sort(qualifying.begin(), qualifying.end());
  CHECK(set.pixel_indices == qualifying);
}
