#include "sgtr/graphgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sgtr {

// ---- similarity -----------------------------------------------------------

double position_similarity(const NodeEntry& p, const NodeEntry& q, int H, int W) {
  const double d = std::hypot(p.x - q.x, p.y - q.y);
  // the raw formula goes negative past max(H, W); clamp keeps it a similarity
  return std::max(0.0, 1.0 - d / std::max(H, W));
}

double feature_similarity(const std::vector<double>& rp, const std::vector<double>& rq) {
  double dot = 0, np = 0, nq = 0;
  for (size_t i = 0; i < rp.size(); ++i) {
    dot += rp[i] * rq[i];
    np += rp[i] * rp[i];
    nq += rq[i] * rq[i];
  }
  if (np == 0.0 || nq == 0.0) return 0.0;
  return dot / (std::sqrt(np) * std::sqrt(nq));
}

double overall_similarity(const NodeEntry& p, const NodeEntry& q, int H, int W) {
  return position_similarity(p, q, H, W) * feature_similarity(p.R, q.R);
}

Matrix similarity_matrix(const NodeSet& set, int H, int W) {
  const int n = static_cast<int>(set.entries.size());
  Matrix e(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double s = overall_similarity(set.entries[i], set.entries[j], H, W);
      e[i][j] = s;
      e[j][i] = s;
    }
  return e;
}

// ---- node set extraction --------------------------------------------------

NodeSet extract_node_set(const OrderedFeatureTensor& v, const SegmentationMap& m, int i,
                         const SequenceLogits& coarse, const std::vector<int>* forced_pixels) {
  if (i >= coarse.length)
    throw std::invalid_argument("extract_node_set: index " + std::to_string(i) +
                                " >= decoded length " + std::to_string(coarse.length));
  const int H = m.H, W = m.W, C = m.C;
  const int HW = H * W;
  const auto& probs = m.probs.data();
  const auto& scores = coarse.scores.data();

  // predicted class of character i
  int ci = 0;
  for (int c = 1; c < C; ++c)
    if (scores[static_cast<size_t>(i) * C + c] > scores[static_cast<size_t>(i) * C + ci]) ci = c;

  // attention values of map i; V = probs .* att, so recover att from the
  // largest prob channel per pixel
  std::vector<double> att(HW);
  std::vector<int> pixel_class(HW);
  double att_max = 0;
  for (int px = 0; px < HW; ++px) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (probs[static_cast<size_t>(px) * C + c] > probs[static_cast<size_t>(px) * C + best])
        best = c;
    pixel_class[px] = best;
    att[px] = v.v[i].at(static_cast<std::int64_t>(px) * C + best) /
              std::max(probs[static_cast<size_t>(px) * C + best], 1e-300);
    att_max = std::max(att_max, att[px]);
  }

  std::vector<int> selected;
  if (forced_pixels) {
    selected = *forced_pixels;
  } else {
    for (int px = 0; px < HW; ++px)
      if (pixel_class[px] == ci && att[px] > 0.5 * att_max) selected.push_back(px);
  }
  if (selected.empty()) {
    // degenerate fallback: single pixel of maximal attention
    int best_px = 0;
    for (int px = 1; px < HW; ++px)
      if (att[px] > att[best_px]) best_px = px;
    selected.push_back(best_px);
  }
  if (static_cast<int>(selected.size()) > kMaxNodesPerChar) {
    // keep the highest-attention pixels; ties broken by (y, x) raster order,
    // which is the flat index order
    std::stable_sort(selected.begin(), selected.end(),
                     [&](int a, int b) { return att[a] > att[b]; });
    selected.resize(kMaxNodesPerChar);
    std::sort(selected.begin(), selected.end());
  }

  NodeSet set;
  set.char_index = i;
  set.pixel_indices = selected;
  NodeEntry root;
  root.R.assign(C, 0.0);
  for (int px : selected) {
    NodeEntry e;
    e.x = px % W;
    e.y = px / W;
    e.R.resize(C);
    for (int c = 0; c < C; ++c) e.R[c] = v.v[i].at(static_cast<std::int64_t>(px) * C + c);
    root.x += e.x;
    root.y += e.y;
    for (int c = 0; c < C; ++c) root.R[c] += e.R[c];
    set.entries.push_back(std::move(e));
  }
  const double n = static_cast<double>(selected.size());
  root.x /= n;
  root.y /= n;
  for (double& r : root.R) r /= n;
  set.root_index = static_cast<int>(set.entries.size());
  set.entries.push_back(std::move(root));
  return set;
}

// ---- adjacency ------------------------------------------------------------

Matrix build_adjacency(const Matrix& e, AdjacencyMode mode) {
  const int n = static_cast<int>(e.size());
  Matrix a(n, std::vector<double>(n, 0.0));
  if (n <= 1) return a;
  std::vector<std::vector<int>> topk(n);
  std::vector<double> mean(n, 0.0);
  for (int u = 0; u < n; ++u) {
    std::vector<int> cand;
    for (int v = 0; v < n; ++v)
      if (v != u) cand.push_back(v);
    const int k = std::min(kTopK, n - 1);
    // top-k by similarity, ties by lower node id
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), [&](int x, int y) {
      if (e[u][x] != e[u][y]) return e[u][x] > e[u][y];
      return x < y;
    });
    cand.resize(k);
    for (int v : cand) mean[u] += e[u][v];
    mean[u] /= k;
    topk[u] = std::move(cand);
  }
  // 1-hop pruning: an edge only survives at cluster level for both endpoints,
  // so a node whose similarities are uniformly tiny ends up isolated instead
  // of dragging its whole top-k into the graph
  std::vector<std::vector<int>> proposed(n);
  for (int u = 0; u < n; ++u)
    for (int v : topk[u])
      if (e[u][v] >= kPruneRatio * mean[u] && e[u][v] >= kPruneRatio * mean[v])
        proposed[u].push_back(v);
  for (int u = 0; u < n; ++u)
    for (int v : proposed[u]) {
      const double val = mode == AdjacencyMode::kDiscrete ? 1.0 : e[u][v];
      a[u][v] = val;
      a[v][u] = val;
    }
  for (int u = 0; u < n; ++u) a[u][u] = 0.0;
  return a;
}

CharGraph make_char_graph(const OrderedFeatureTensor& v, const SegmentationMap& m, int i,
                          const SequenceLogits& coarse, AdjacencyMode mode,
                          const std::vector<int>* forced_pixels, const Matrix* forced_mask) {
  CharGraph g;
  g.nodes = extract_node_set(v, m, i, coarse, forced_pixels);
  g.char_index = i;
  g.root = g.nodes.root_index;
  g.E = similarity_matrix(g.nodes, m.H, m.W);
  if (forced_mask) {
    const int n = static_cast<int>(g.E.size());
    g.A.assign(n, std::vector<double>(n, 0.0));
    for (int u = 0; u < n; ++u)
      for (int w = 0; w < n; ++w)
        if ((*forced_mask)[u][w] != 0.0)
          g.A[u][w] = mode == AdjacencyMode::kDiscrete ? 1.0 : g.E[u][w];
  } else {
    g.A = build_adjacency(g.E, mode);
  }
  return g;
}

FullGraph link_subgraphs(std::vector<CharGraph> graphs) {
  FullGraph full;
  int offset = 0;
  for (const auto& g : graphs) {
    const int n = static_cast<int>(g.nodes.entries.size());
    full.spans.emplace_back(offset, offset + n);
    full.roots.push_back(offset + g.root);
    for (int j = 0; j < n; ++j) {
      full.order.push_back(g.char_index);
      full.pos.emplace_back(g.nodes.entries[j].x, g.nodes.entries[j].y);
    }
    offset += n;
  }
  full.node_count = offset;
  full.A.assign(offset, std::vector<double>(offset, 0.0));
  for (size_t gi = 0; gi < graphs.size(); ++gi) {
    const int base = full.spans[gi].first;
    const auto& a = graphs[gi].A;
    for (size_t u = 0; u < a.size(); ++u)
      for (size_t v = 0; v < a.size(); ++v) full.A[base + u][base + v] = a[u][v];
  }
  for (size_t gi = 0; gi + 1 < graphs.size(); ++gi) {
    full.A[full.roots[gi]][full.roots[gi + 1]] = 1.0;
    full.A[full.roots[gi + 1]][full.roots[gi]] = 1.0;
  }
  full.subgraphs = std::move(graphs);
  return full;
}

// ---- embedding ------------------------------------------------------------

EmbedParams EmbedParams::init(int C, Rng& rng) {
  auto lin = [&rng](Shape shape) {
    std::int64_t fan_in = shape[0];
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> d(numel(shape));
    for (double& v : d) v = rng.normal(0.0, std);
    return DiffValue::param(std::move(shape), std::move(d));
  };
  EmbedParams p;
  p.wx = lin({1, 16});
  p.bx = DiffValue::zeros({16}, true);
  p.wy = lin({1, 16});
  p.by = DiffValue::zeros({16}, true);
  p.wr = lin({C, 16});
  p.br = DiffValue::zeros({16}, true);
  return p;
}

void EmbedParams::collect(std::map<std::string, DiffValue>& out) const {
  out["embed.x.w"] = wx;
  out["embed.x.b"] = bx;
  out["embed.y.w"] = wy;
  out["embed.y.b"] = by;
  out["embed.r.w"] = wr;
  out["embed.r.b"] = br;
}

void EmbedParams::adopt(const std::map<std::string, DiffValue>& params) {
  wx = params.at("embed.x.w");
  bx = params.at("embed.x.b");
  wy = params.at("embed.y.w");
  by = params.at("embed.y.b");
  wr = params.at("embed.r.w");
  br = params.at("embed.r.b");
}

std::vector<double> order_embedding(int i) {
  std::vector<double> e(16);
  for (int k = 0; k < 8; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / 16.0);
    e[2 * k] = std::sin(i * freq);
    e[2 * k + 1] = std::cos(i * freq);
  }
  return e;
}

DiffValue embed_nodes(const NodeSet& set, const DiffValue& v_char, const EmbedParams& p,
                      int H, int W) {
  const int n = static_cast<int>(set.entries.size());
  std::vector<double> xs, ys;
  for (const auto& e : set.entries) {
    xs.push_back(e.x / W);
    ys.push_back(e.y / H);
  }
  DiffValue xcol = DiffValue::constant({n, 1}, std::move(xs));
  DiffValue ycol = DiffValue::constant({n, 1}, std::move(ys));
  DiffValue ex = add_bias_rows(matmul(xcol, p.wx), p.bx);
  DiffValue ey = add_bias_rows(matmul(ycol, p.wy), p.by);

  // gather the non-root pixel rows from V_i, append the root as their mean
  DiffValue rmat = append_mean_row(gather_rows(v_char, set.pixel_indices));
  DiffValue er = add_bias_rows(matmul(rmat, p.wr), p.br);

  std::vector<double> ei_data;
  const std::vector<double> code = order_embedding(set.char_index);
  for (int j = 0; j < n; ++j) ei_data.insert(ei_data.end(), code.begin(), code.end());
  DiffValue ei = DiffValue::constant({n, 16}, std::move(ei_data));

  return concat_cols({ex, ey, er, ei});
}

DiffValue embed_full_graph(const FullGraph& g, const OrderedFeatureTensor& v,
                           const EmbedParams& p) {
  std::vector<DiffValue> parts;
  for (const auto& sub : g.subgraphs)
    parts.push_back(embed_nodes(sub.nodes, v.v[sub.char_index], p, v.H, v.W));
  return concat_rows(parts);
}

}  // namespace sgtr
