#pragma once

// Two-level graph construction over the attended feature tensor: per-character
// node sets with a centroid root, similarity-based adjacency under the top-8 /
// 1-hop rule, and the root-linked full graph.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sgtr/rng.hpp"
#include "sgtr/tensor.hpp"
#include "sgtr/vrseg.hpp"

namespace sgtr {

inline constexpr int kMaxNodesPerChar = 64;  // cap before the root is appended
inline constexpr int kTopK = 8;
inline constexpr double kPruneRatio = 0.5;  // 1-hop cluster threshold, relative

struct NodeEntry {
  double x = 0, y = 0;           // pixel coordinates (root: means)
  std::vector<double> R;         // C-dim feature at (x, y) of V_i
};

struct NodeSet {
  std::vector<NodeEntry> entries;   // root appended last
  std::vector<int> pixel_indices;   // flat y*W+x per non-root entry
  int root_index = -1;
  int char_index = 0;
};

enum class AdjacencyMode { kDiscrete, kContinuous };

using Matrix = std::vector<std::vector<double>>;

struct CharGraph {
  NodeSet nodes;
  Matrix E;  // pairwise overall similarity, incl. root
  Matrix A;  // adjacency (0/1 or similarity values per mode)
  int root = -1;
  int char_index = 0;
};

struct FullGraph {
  int node_count = 0;
  Matrix A;                                   // block-diagonal + root chain
  std::vector<int> roots;                     // global node ids
  std::vector<std::pair<int, int>> spans;     // [begin, end) per subgraph
  std::vector<int> order;                     // per-node character index
  std::vector<std::pair<double, double>> pos; // per-node pixel coordinates
  std::vector<CharGraph> subgraphs;
};

// ---- similarity (Eqs. over node pairs) ------------------------------------

double position_similarity(const NodeEntry& p, const NodeEntry& q, int H, int W);
double feature_similarity(const std::vector<double>& rp, const std::vector<double>& rq);
double overall_similarity(const NodeEntry& p, const NodeEntry& q, int H, int W);
Matrix similarity_matrix(const NodeSet& set, int H, int W);

// ---- construction ---------------------------------------------------------

// forced_pixels, when non-null, bypasses the selection rules and rebuilds the
// node set from the given flat pixel indices (structure replay).
NodeSet extract_node_set(const OrderedFeatureTensor& v, const SegmentationMap& m, int i,
                         const SequenceLogits& coarse,
                         const std::vector<int>* forced_pixels = nullptr);

Matrix build_adjacency(const Matrix& e, AdjacencyMode mode);

// forced_mask, when non-null, fixes the edge structure: kept edges take value
// 1 (discrete) or the current similarity (continuous).
CharGraph make_char_graph(const OrderedFeatureTensor& v, const SegmentationMap& m, int i,
                          const SequenceLogits& coarse, AdjacencyMode mode,
                          const std::vector<int>* forced_pixels = nullptr,
                          const Matrix* forced_mask = nullptr);

FullGraph link_subgraphs(std::vector<CharGraph> graphs);

// ---- node feature embedding -----------------------------------------------

inline constexpr int kEmbedDim = 64;  // 16 + 16 + 16 + 16

struct EmbedParams {
  DiffValue wx, bx;  // {1,16}, {16}
  DiffValue wy, by;
  DiffValue wr, br;  // {C,16}, {16}

  static EmbedParams init(int C, Rng& rng);
  void collect(std::map<std::string, DiffValue>& out) const;
  void adopt(const std::map<std::string, DiffValue>& params);
};

// Sine/cosine order-index code, 16 dims, interleaved, frequency base 10000.
std::vector<double> order_embedding(int i);

// Rows: [e_x | e_y | e_R | e_i]. v_char is V[i] ({H*W, C}); feature gradients
// flow back into it through the gathered pixel rows.
DiffValue embed_nodes(const NodeSet& set, const DiffValue& v_char, const EmbedParams& p,
                      int H, int W);

// Full-graph node feature matrix (subgraph rows stacked in span order).
DiffValue embed_full_graph(const FullGraph& g, const OrderedFeatureTensor& v,
                           const EmbedParams& p);

}  // namespace sgtr
