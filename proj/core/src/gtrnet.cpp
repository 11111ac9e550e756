#include "sgtr/gtrnet.hpp"

#include <algorithm>

#include "sgtr/blas.hpp"
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace sgtr {

// ---- parameters -----------------------------------------------------------

GcnParams GcnParams::init(int layers, int C, Rng& rng) {
  if (layers < 1 || layers > 3)
    throw std::invalid_argument("GcnParams: layer count " + std::to_string(layers) +
                                " outside {1,2,3}");
  auto lin = [&rng](int rows, int cols) {
    const double std = std::sqrt(2.0 / rows);
    std::vector<double> d(static_cast<size_t>(rows) * cols);
    for (double& v : d) v = rng.normal(0.0, std);
    return DiffValue::param({rows, cols}, std::move(d));
  };
  GcnParams p;
  p.layers = layers;
  for (int l = 0; l < layers; ++l) p.spatial_w.push_back(lin(2 * p.dim, p.dim));
  for (int l = 0; l < layers; ++l) p.contextual_w.push_back(lin(p.dim, p.dim));
  for (int r = 0; r < kMaxPoolRounds; ++r) p.readout_w.push_back(lin(2 * p.dim, p.dim));
  p.cls_w = lin(p.dim, C);
  p.cls_b = DiffValue::zeros({C}, true);
  return p;
}

void GcnParams::collect(std::map<std::string, DiffValue>& out) const {
  for (size_t l = 0; l < spatial_w.size(); ++l)
    out["gtr.spatial." + std::to_string(l) + ".w"] = spatial_w[l];
  for (size_t l = 0; l < contextual_w.size(); ++l)
    out["gtr.contextual." + std::to_string(l) + ".w"] = contextual_w[l];
  for (size_t r = 0; r < readout_w.size(); ++r)
    out["gtr.readout." + std::to_string(r) + ".w"] = readout_w[r];
  out["gtr.cls.w"] = cls_w;
  out["gtr.cls.b"] = cls_b;
}

void GcnParams::adopt(const std::map<std::string, DiffValue>& params) {
  spatial_w.clear();
  contextual_w.clear();
  readout_w.clear();
  for (int l = 0;; ++l) {
    auto it = params.find("gtr.spatial." + std::to_string(l) + ".w");
    if (it == params.end()) break;
    spatial_w.push_back(it->second);
  }
  for (int l = 0;; ++l) {
    auto it = params.find("gtr.contextual." + std::to_string(l) + ".w");
    if (it == params.end()) break;
    contextual_w.push_back(it->second);
  }
  for (int r = 0; r < kMaxPoolRounds; ++r)
    readout_w.push_back(params.at("gtr.readout." + std::to_string(r) + ".w"));
  cls_w = params.at("gtr.cls.w");
  cls_b = params.at("gtr.cls.b");
  layers = static_cast<int>(spatial_w.size());
}

// ---- normalized adjacency -------------------------------------------------

Matrix normalize_adjacency(const Matrix& a) {
  const int n = static_cast<int>(a.size());
  std::vector<double> dinv(n);
  for (int i = 0; i < n; ++i) {
    double deg = 1.0;  // self-loop from A + I
    for (int j = 0; j < n; ++j) deg += a[i][j];
    dinv[i] = 1.0 / std::sqrt(deg);
  }
  Matrix k(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double at = a[i][j] + (i == j ? 1.0 : 0.0);
      k[i][j] = dinv[i] * at * dinv[j];
    }
  return k;
}

namespace {

struct Csr {
  std::vector<int> rowptr, col;
  std::vector<double> val;
};

std::shared_ptr<Csr> to_csr(const Matrix& m) {
  auto csr = std::make_shared<Csr>();
  csr->rowptr.push_back(0);
  for (const auto& row : m) {
    for (size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) {
        csr->col.push_back(static_cast<int>(j));
        csr->val.push_back(row[j]);
      }
    csr->rowptr.push_back(static_cast<int>(csr->col.size()));
  }
  return csr;
}

// product of a constant sparse matrix with a dense value; the normalized
// adjacency keeps at most a handful of neighbors per row, so the dense gemm
// wastes nearly all its work on zeros
DiffValue spmm(const Matrix& k, const DiffValue& h) {
  const int n = static_cast<int>(k.size());
  const int d = h.dim(1);
  if (h.dim(0) != n)
    throw std::invalid_argument("spmm: " + std::to_string(n) + " rows against " +
                                std::to_string(h.dim(0)));
  auto csr = to_csr(k);
  const auto& hv = h.data();
  std::vector<double> out(static_cast<size_t>(n) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    double* dst = &out[static_cast<size_t>(i) * d];
    for (int p = csr->rowptr[i]; p < csr->rowptr[i + 1]; ++p) {
      const double v = csr->val[p];
      const double* src = &hv[static_cast<size_t>(csr->col[p]) * d];
      for (int c = 0; c < d; ++c) dst[c] += v * src[c];
    }
  }
  return make_op({n, d}, std::move(out), {h}, [csr, n, d](detail::Node& nd) {
    detail::Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* g = &nd.grad[static_cast<size_t>(i) * d];
      for (int q = csr->rowptr[i]; q < csr->rowptr[i + 1]; ++q) {
        const double v = csr->val[q];
        double* dst = &p.grad[static_cast<size_t>(csr->col[q]) * d];
        for (int c = 0; c < d; ++c) dst[c] += v * g[c];
      }
    }
  });
}

}  // namespace

// ---- GCN stages -----------------------------------------------------------

DiffValue spatial_stage(const DiffValue& x, const Matrix& k, const GcnParams& p) {
  DiffValue h = x;
  for (int l = 0; l < p.layers; ++l)
    h = relu(matmul(concat_cols({h, spmm(k, h)}), p.spatial_w[l]));
  return h;
}

Matrix contextual_adjacency(const DiffValue& xc) {
  const int n = xc.dim(0), d = xc.dim(1);
  const auto& v = xc.data();
  // cosine via one Gram-matrix gemm; the scalar pair loop dominated profiles
  std::vector<double> gram(static_cast<size_t>(n) * n);
  blas::gemm(false, true, n, n, d, 1.0, v.data(), v.data(), 0.0, gram.data());
  std::vector<double> norm(n);
  for (int i = 0; i < n; ++i) norm[i] = std::sqrt(gram[static_cast<size_t>(i) * n + i]);
  Matrix e(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double s = 0;
      if (norm[i] > 0 && norm[j] > 0) s = gram[static_cast<size_t>(i) * n + j] / (norm[i] * norm[j]);
      e[i][j] = s;
      e[j][i] = s;
    }
  return build_adjacency(e, AdjacencyMode::kDiscrete);
}

DiffValue contextual_stage(const DiffValue& xc, const Matrix& g, const GcnParams& p) {
  DiffValue h = xc;
  for (int l = 0; l < p.layers; ++l) h = relu(matmul(spmm(g, h), p.contextual_w[l]));
  return h;
}

// ---- root check -----------------------------------------------------------

namespace {

std::set<int> one_hop(const Matrix& a, int v) {
  std::set<int> out;
  for (size_t u = 0; u < a.size(); ++u)
    if (a[v][u] != 0.0) out.insert(static_cast<int>(u));
  return out;
}

}  // namespace

FullGraph root_check(FullGraph full, const RootCheckConfig& cfg) {
  if (cfg.epsilon <= 0.0 || cfg.epsilon > 1.0)
    throw std::invalid_argument("root_check: epsilon outside (0,1]");
  Rng rng(cfg.seed);
  for (auto& g : full.subgraphs) {
    const int n = static_cast<int>(g.nodes.entries.size());
    if (n < 2) continue;
    bool disagree = false;
    for (int t = 0; t < cfg.trials && !disagree; ++t) {
      int s = rng.uniform_int(0, n - 2);
      if (s >= g.root) ++s;  // any node but the current root
      const std::set<int> nr = one_hop(g.A, g.root);
      const std::set<int> ns = one_hop(g.A, s);
      std::vector<int> inter, uni;
      std::set_intersection(nr.begin(), nr.end(), ns.begin(), ns.end(),
                            std::back_inserter(inter));
      std::set_union(nr.begin(), nr.end(), ns.begin(), ns.end(), std::back_inserter(uni));
      const double iou = uni.empty() ? 1.0
                                     : static_cast<double>(inter.size()) /
                                           static_cast<double>(uni.size());
      if (iou < cfg.epsilon) disagree = true;
    }
    if (disagree) {
      // re-anchor to the most central node: maximal total similarity
      int best = 0;
      double best_total = -1e300;
      for (int pnode = 0; pnode < n; ++pnode) {
        double total = 0;
        for (int q = 0; q < n; ++q) total += g.E[pnode][q];
        if (total > best_total) {
          best_total = total;
          best = pnode;
        }
      }
      g.root = best;
      g.nodes.root_index = best;
    }
  }
  return link_subgraphs(std::move(full.subgraphs));
}

// ---- readout + pooling ----------------------------------------------------

namespace {

// element-wise max over neighbor rows; remembers the winning row per entry
DiffValue neighbor_max(const DiffValue& x, const Matrix& adj) {
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(static_cast<size_t>(n) * d, 0.0);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * d, -1);
  for (int i = 0; i < n; ++i) {
    bool first = true;
    for (int j = 0; j < n; ++j) {
      if (adj[i][j] == 0.0) continue;
      for (int c = 0; c < d; ++c) {
        const double v = x.at(static_cast<std::int64_t>(j) * d + c);
        double& cur = out[static_cast<size_t>(i) * d + c];
        if (first || v > cur) {
          cur = v;
          (*argmax)[static_cast<size_t>(i) * d + c] = j;
        }
      }
      first = false;
    }
  }
  return make_op({n, d}, std::move(out), {x}, [n, d, argmax](detail::Node& nd) {
    detail::Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) {
        const int j = (*argmax)[static_cast<size_t>(i) * d + c];
        if (j >= 0)
          p.grad[static_cast<size_t>(j) * d + c] += nd.grad[static_cast<size_t>(i) * d + c];
      }
  });
}

Matrix induced(const Matrix& a, const std::vector<int>& keep) {
  Matrix out(keep.size(), std::vector<double>(keep.size(), 0.0));
  for (size_t i = 0; i < keep.size(); ++i)
    for (size_t j = 0; j < keep.size(); ++j) out[i][j] = a[keep[i]][keep[j]];
  return out;
}

}  // namespace

DiffValue readout_step(const DiffValue& x, const Matrix& adj, const DiffValue& proj) {
  return matmul(concat_cols({x, neighbor_max(x, adj)}), proj);
}

std::vector<int> pool_graph(const std::vector<std::pair<double, double>>& pos, int root,
                            int n) {
  if (n <= 1) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const int keep = (n + 1) / 2;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto [rx, ry] = pos[root];
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (a == root) return true;  // root always survives
    if (b == root) return false;
    const double da = std::hypot(pos[a].first - rx, pos[a].second - ry);
    const double db = std::hypot(pos[b].first - rx, pos[b].second - ry);
    return da < db;  // ties fall back to node id via stable sort
  });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---- forward --------------------------------------------------------------

SequenceLogits gtr_forward(const FullGraph& full, const DiffValue& x_in,
                           const GcnParams& p, const GtrOptions& opt) {
  SequenceLogits s;
  s.length = static_cast<int>(full.subgraphs.size());
  std::vector<double> bg_row(opt.C, 0.0);
  bg_row[0] = 1.0;  // background one-hot logits for rows past the text
  if (full.node_count == 0) {
    std::vector<double> rows;
    for (int t = 0; t < opt.T; ++t) rows.insert(rows.end(), bg_row.begin(), bg_row.end());
    s.scores = DiffValue::constant({opt.T, opt.C}, std::move(rows));
    return s;
  }

  DiffValue x = x_in;
  if (opt.onehop_mask) x = mask_rows_grad(x, onehop_keep_mask(full));

  const Matrix k = normalize_adjacency(full.A);
  DiffValue xc = spatial_stage(x, k, p);
  const Matrix ac = opt.ctx_forced ? *opt.ctx_forced : contextual_adjacency(xc);
  if (opt.ctx_record) *opt.ctx_record = ac;
  const Matrix g = normalize_adjacency(ac);
  DiffValue yc = contextual_stage(xc, g, p);

  std::vector<DiffValue> rows(opt.T);
  for (size_t gi = 0; gi < full.subgraphs.size(); ++gi) {
    if (static_cast<int>(gi) >= opt.T) break;
    const auto [begin, end] = full.spans[gi];
    DiffValue h = slice_rows(yc, begin, end);
    if (opt.pool == PoolMode::kAverage) {
      h = append_mean_row(h);
      h = slice_rows(h, h.dim(0) - 1, h.dim(0));  // the mean row
    } else {
      Matrix adj = induced(full.A, [&] {
        std::vector<int> span(end - begin);
        std::iota(span.begin(), span.end(), begin);
        return span;
      }());
      std::vector<std::pair<double, double>> pos(full.pos.begin() + begin,
                                                 full.pos.begin() + end);
      int root = full.roots[gi] - begin;
      int round = 0;
      while (true) {
        h = readout_step(h, adj, p.readout_w[std::min(round, kMaxPoolRounds - 1)]);
        ++round;
        const int n = h.dim(0);
        if (n == 1) break;
        const std::vector<int> keep = pool_graph(pos, root, n);
        h = gather_rows(h, keep);
        adj = induced(adj, keep);
        std::vector<std::pair<double, double>> np;
        for (int ki : keep) np.push_back(pos[ki]);
        pos = std::move(np);
        root = static_cast<int>(std::find(keep.begin(), keep.end(), root) - keep.begin());
        if (h.dim(0) == 1) break;
      }
    }
    rows[gi] = add_bias_rows(matmul(h, p.cls_w), p.cls_b);  // {1, C}
  }
  for (int t = 0; t < opt.T; ++t)
    if (!rows[t].defined()) rows[t] = DiffValue::constant({1, opt.C}, bg_row);
  s.scores = concat_rows(rows);
  return s;
}

std::vector<double> onehop_keep_mask(const FullGraph& full) {
  std::vector<double> keep(full.node_count, 0.0);
  for (int r : full.roots) {
    keep[r] = 1.0;
    for (int u = 0; u < full.node_count; ++u)
      if (full.A[r][u] != 0.0) keep[u] = 1.0;
  }
  return keep;
}

}  // namespace sgtr
