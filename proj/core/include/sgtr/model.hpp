#pragma once

// End-to-end model assembly: VR front-end, graph reasoning, LM rescoring,
// dynamic fusion, and the combined training loss.

#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sgtr/fusion.hpp"
#include "sgtr/graphgen.hpp"
#include "sgtr/gtrnet.hpp"
#include "sgtr/lm.hpp"
#include "sgtr/vrseg.hpp"

namespace sgtr {

struct ModelConfig {
  int H = 32, W = 128, T = 8;
  std::string charset = "abcdefghij";
  int gcn_layers = 2;
  AdjacencyMode adjacency = AdjacencyMode::kDiscrete;
  PoolMode pool = PoolMode::kGraph;
  FuseMode fuse = FuseMode::kDFuse;
  KlDirection kl_direction = KlDirection::kSymmetric;
  bool use_gtr = true;
  bool use_lm = true;
  bool onehop_mask = true;
  double root_check_epsilon = 0.75;

  int num_classes() const { return static_cast<int>(charset.size()) + 1; }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Record/replay of every discrete decision in the forward pass: decoded
// length, LM conditioning path, node pixel sets, edge structure, roots and the
// contextual adjacency. The first forward records and flips replay on; later
// passes keep the recorded structure while parameter values move. Finite
// differences of the loss then probe the same differentiable function that
// backward() differentiates.
struct ForwardTrace {
  bool replay = false;
  int length = 0;
  std::vector<int> lm_prev;
  std::vector<std::vector<int>> node_pixels;  // per character
  std::vector<Matrix> adj_mask;               // per character, 0/1
  std::vector<int> roots;                     // per character, local index
  Matrix ctx_mask;
};

struct ForwardResult {
  SegmentationMap m;
  OrderAttention att;
  OrderedFeatureTensor v;
  SequenceLogits t, l, s, z;
  FullGraph graph;  // empty when GTR is disabled or no characters decoded
};

struct LossConfig {
  double lambda_seg = 1.0;
  double lambda_cc = 1.0;
  double lambda_mt = 0.0;
};

struct LossBreakdown {
  DiffValue total;
  double seg = 0, cc = 0, mt = 0;
};

class SgtrModel {
 public:
  ModelConfig cfg;
  VrParams vr;
  EmbedParams embed;
  GcnParams gcn;
  FusionParams fusion;
  NgramLM lm;

  static SgtrModel init(const ModelConfig& cfg, std::uint64_t seed);
  static SgtrModel load(const std::string& checkpoint_path);
  void save(const std::string& checkpoint_path) const;

  std::map<std::string, DiffValue> named_params() const;
  std::int64_t param_count() const;

  void fit_lm(const std::vector<SegSample>& corpus) { lm = NgramLM::fit(corpus, cfg.charset); }

  // graph_seed drives the root-check sampling; fixed per sample so the
  // forward pass is a pure function.
  ForwardResult forward(const SegSample& sample, std::uint64_t graph_seed = 0,
                        ForwardTrace* trace = nullptr) const;

  LossBreakdown loss(const SegSample& sample, const ForwardResult& fwd,
                     const LossConfig& lc,
                     const SegmentationMap* teacher_m = nullptr) const;
};

// Greedy string decode from a score matrix: per-row argmax, background rows
// dropped.
std::string decode_string(const SequenceLogits& s, const std::string& charset);

}  // namespace sgtr
