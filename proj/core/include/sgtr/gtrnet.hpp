#pragma once

// Spatial + contextual GCN stages, root check, readout with iterative graph
// pooling, and the classification to the spatial context stream S.

#include <map>
#include <string>
#include <vector>

#include "sgtr/graphgen.hpp"
#include "sgtr/rng.hpp"
#include "sgtr/tensor.hpp"
#include "sgtr/vrseg.hpp"

namespace sgtr {

inline constexpr int kMaxPoolRounds = 8;  // covers N <= 64 (+root)

enum class PoolMode { kGraph, kAverage };

struct GcnParams {
  int layers = 2;  // L in {1,2,3}
  int dim = kEmbedDim;
  std::vector<DiffValue> spatial_w;     // L x {2d, d}
  std::vector<DiffValue> contextual_w;  // L x {d, d}
  std::vector<DiffValue> readout_w;     // kMaxPoolRounds x {2d, d}
  DiffValue cls_w, cls_b;               // {d, C}, {C}

  static GcnParams init(int layers, int C, Rng& rng);
  void collect(std::map<std::string, DiffValue>& out) const;
  void adopt(const std::map<std::string, DiffValue>& params);
};

struct RootCheckConfig {
  double epsilon = 0.75;
  int trials = 1;
  std::uint64_t seed = 0;
};

// K = D^{-1/2} (A + I) D^{-1/2}
Matrix normalize_adjacency(const Matrix& a);

// L layers of Y = relu([X ; KX] W)
DiffValue spatial_stage(const DiffValue& x, const Matrix& k, const GcnParams& p);

// discrete adjacency from pairwise cosine similarity of feature rows
Matrix contextual_adjacency(const DiffValue& xc);

// L layers of Y = relu((G X) Wc)
DiffValue contextual_stage(const DiffValue& xc, const Matrix& g, const GcnParams& p);

// IoU test (Eq.-style, threshold epsilon) between 1-hop neighbor sets of the
// centroid root and a randomly sampled alternative; on failure the root is
// re-anchored to the node with maximal total similarity. Rebuilds the root
// chain of the full graph.
FullGraph root_check(FullGraph full, const RootCheckConfig& cfg);

// x*_i = [x_i ; max over neighbors j of x_j] followed by the round's learned
// 2d -> d projection. Empty neighborhoods contribute a zero max term.
DiffValue readout_step(const DiffValue& x, const Matrix& adj, const DiffValue& proj);

// Indices (ascending) of the ceil(N/2) nodes nearest the root by pixel
// distance; root always kept, ties by node id.
std::vector<int> pool_graph(const std::vector<std::pair<double, double>>& pos, int root,
                            int n);

struct GtrOptions {
  PoolMode pool = PoolMode::kGraph;
  bool onehop_mask = true;  // restrict node-feature gradients to root 1-hops
  int T = 8;
  int C = 11;
  // structure replay hooks: ctx_forced pins the contextual adjacency,
  // ctx_record receives the one actually used
  const Matrix* ctx_forced = nullptr;
  Matrix* ctx_record = nullptr;
};

// Full reasoning pass over an (already root-checked) full graph.
SequenceLogits gtr_forward(const FullGraph& full, const DiffValue& x,
                           const GcnParams& p, const GtrOptions& opt);

// 1 for nodes in the union of the roots' 1-hop neighborhoods, else 0.
std::vector<double> onehop_keep_mask(const FullGraph& full);

}  // namespace sgtr
