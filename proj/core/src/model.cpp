#include "sgtr/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sgtr/checkpoint.hpp"

namespace sgtr {

using nlohmann::json;

namespace {

const char* adj_name(AdjacencyMode m) {
  return m == AdjacencyMode::kDiscrete ? "discrete" : "continuous";
}
const char* pool_name(PoolMode m) { return m == PoolMode::kGraph ? "graph" : "average"; }
const char* fuse_name(FuseMode m) {
  switch (m) {
    case FuseMode::kAdd: return "add";
    case FuseMode::kConcat: return "concat";
    default: return "dfuse";
  }
}
const char* kl_name(KlDirection d) {
  switch (d) {
    case KlDirection::kLToS: return "l2s";
    case KlDirection::kSToL: return "s2l";
    default: return "sym";
  }
}

}  // namespace

json ModelConfig::to_json() const {
  return json{{"H", H},
              {"W", W},
              {"T", T},
              {"charset", charset},
              {"gcn_layers", gcn_layers},
              {"adjacency", adj_name(adjacency)},
              {"pool", pool_name(pool)},
              {"fuse", fuse_name(fuse)},
              {"kl_direction", kl_name(kl_direction)},
              {"use_gtr", use_gtr},
              {"use_lm", use_lm},
              {"onehop_mask", onehop_mask},
              {"root_check_epsilon", root_check_epsilon}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.H = j.at("H").get<int>();
  c.W = j.at("W").get<int>();
  c.T = j.at("T").get<int>();
  c.charset = j.at("charset").get<std::string>();
  c.gcn_layers = j.at("gcn_layers").get<int>();
  const std::string adj = j.at("adjacency").get<std::string>();
  c.adjacency = adj == "continuous" ? AdjacencyMode::kContinuous : AdjacencyMode::kDiscrete;
  c.pool = j.at("pool").get<std::string>() == "average" ? PoolMode::kAverage : PoolMode::kGraph;
  const std::string fuse = j.at("fuse").get<std::string>();
  c.fuse = fuse == "add" ? FuseMode::kAdd : fuse == "concat" ? FuseMode::kConcat : FuseMode::kDFuse;
  const std::string kl = j.at("kl_direction").get<std::string>();
  c.kl_direction = kl == "l2s" ? KlDirection::kLToS : kl == "s2l" ? KlDirection::kSToL : KlDirection::kSymmetric;
  c.use_gtr = j.at("use_gtr").get<bool>();
  c.use_lm = j.at("use_lm").get<bool>();
  c.onehop_mask = j.at("onehop_mask").get<bool>();
  c.root_check_epsilon = j.at("root_check_epsilon").get<double>();
  return c;
}

SgtrModel SgtrModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  SgtrModel m;
  m.cfg = cfg;
  Rng rng(seed ^ 0x5347545200000000ULL);
  const int C = cfg.num_classes();
  m.vr = VrParams::init(C, cfg.T, cfg.W, rng);
  m.embed = EmbedParams::init(C, rng);
  m.gcn = GcnParams::init(cfg.gcn_layers, C, rng);
  m.fusion = FusionParams::init(C, rng);
  m.lm = NgramLM::uniform(C);
  return m;
}

std::map<std::string, DiffValue> SgtrModel::named_params() const {
  std::map<std::string, DiffValue> out;
  vr.collect(out);
  embed.collect(out);
  gcn.collect(out);
  fusion.collect(out);
  return out;
}

std::int64_t SgtrModel::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : named_params()) n += v.size();
  return n;
}

void SgtrModel::save(const std::string& path) const {
  json config = cfg.to_json();
  config["lm"] = {{"C", lm.C}, {"logp", lm.logp}};
  save_params(named_params(), config, path);
}

SgtrModel SgtrModel::load(const std::string& path) {
  json config;
  auto params = load_params(path, &config);
  if (config.is_null())
    throw std::runtime_error("checkpoint " + path + " carries no model config");
  SgtrModel m;
  m.cfg = ModelConfig::from_json(config);
  m.vr.adopt(params);
  m.embed.adopt(params);
  m.gcn.adopt(params);
  m.fusion.adopt(params);
  if (config.contains("lm")) {
    m.lm.C = config["lm"]["C"].get<int>();
    m.lm.logp = config["lm"]["logp"].get<std::vector<double>>();
  } else {
    m.lm = NgramLM::uniform(m.cfg.num_classes());
  }
  m.gcn.layers = m.cfg.gcn_layers;
  return m;
}

ForwardResult SgtrModel::forward(const SegSample& sample, std::uint64_t graph_seed,
                                 ForwardTrace* trace) const {
  if (sample.H != cfg.H || sample.W != cfg.W)
    throw std::invalid_argument("forward: sample geometry " + std::to_string(sample.H) + "x" +
                                std::to_string(sample.W) + " does not match model " +
                                std::to_string(cfg.H) + "x" + std::to_string(cfg.W));
  const int C = cfg.num_classes();
  ForwardResult r;
  r.m = vr_forward(vr, sample.image, cfg.H, cfg.W, C);
  r.att = feature_order(vr, r.m, cfg.T);
  r.v = attend(r.m, r.att);
  r.t = decode_sequence(r.v);
  const bool replay = trace && trace->replay;
  if (replay)
    r.t.length = trace->length;
  else if (trace)
    trace->length = r.t.length;
  r.l = cfg.use_lm ? lm_rescore(r.t, lm, trace ? &trace->lm_prev : nullptr, replay) : r.t;

  if (cfg.use_gtr && r.t.length > 0) {
    std::vector<CharGraph> graphs;
    const int chars = std::min(r.t.length, cfg.T);
    for (int i = 0; i < chars; ++i)
      graphs.push_back(make_char_graph(r.v, r.m, i, r.t, cfg.adjacency,
                                       replay ? &trace->node_pixels[i] : nullptr,
                                       replay ? &trace->adj_mask[i] : nullptr));
    if (replay) {
      // restore the recorded roots instead of rerunning the sampled check
      for (int i = 0; i < chars; ++i) {
        graphs[i].root = trace->roots[i];
        graphs[i].nodes.root_index = trace->roots[i];
      }
      r.graph = link_subgraphs(std::move(graphs));
    } else {
      RootCheckConfig rc;
      rc.epsilon = cfg.root_check_epsilon;
      rc.seed = graph_seed;
      r.graph = root_check(link_subgraphs(std::move(graphs)), rc);
      if (trace) {
        trace->node_pixels.clear();
        trace->adj_mask.clear();
        trace->roots.clear();
        for (const auto& g : r.graph.subgraphs) {
          trace->node_pixels.push_back(g.nodes.pixel_indices);
          Matrix mask(g.A.size(), std::vector<double>(g.A.size(), 0.0));
          for (size_t u = 0; u < g.A.size(); ++u)
            for (size_t w = 0; w < g.A.size(); ++w)
              if (g.A[u][w] != 0.0) mask[u][w] = 1.0;
          trace->adj_mask.push_back(std::move(mask));
          trace->roots.push_back(g.root);
        }
      }
    }
    DiffValue x = embed_full_graph(r.graph, r.v, embed);
    GtrOptions opt;
    opt.pool = cfg.pool;
    opt.onehop_mask = cfg.onehop_mask;
    opt.T = cfg.T;
    opt.C = C;
    if (replay) opt.ctx_forced = &trace->ctx_mask;
    if (trace && !replay) opt.ctx_record = &trace->ctx_mask;
    r.s = gtr_forward(r.graph, x, gcn, opt);
    r.s.length = r.t.length;
  } else {
    r.s = r.t;
  }
  r.z = dynamic_fuse(r.t, r.l, r.s, fusion, cfg.fuse);
  if (trace) trace->replay = true;
  return r;
}

LossBreakdown SgtrModel::loss(const SegSample& sample, const ForwardResult& fwd,
                              const LossConfig& lc, const SegmentationMap* teacher_m) const {
  const int C = cfg.num_classes();
  // character classification per pixel
  DiffValue pix_ce = cross_entropy(fwd.m.logits, sample.class_map);
  // order segmentation: per-map pixel sum averaged over the T maps, so the
  // few hundred pixels under the Gaussian bumps are not drowned out by the
  // elementwise mean over every background pixel
  DiffValue ord_target = DiffValue::constant({cfg.T, cfg.H * cfg.W},
                                             order_targets(sample, cfg.T));
  DiffValue ord_l1 = scale(smooth_l1(fwd.att.maps, ord_target), cfg.H * cfg.W);
  // sequence classification on the fused output
  std::vector<int> seq_targets(cfg.T, 0);
  for (int i = 0; i < std::min<int>(cfg.T, sample.label.size()); ++i)
    seq_targets[i] = static_cast<int>(cfg.charset.find(sample.label[i])) + 1;
  DiffValue seq_ce = cross_entropy(fwd.z.scores, seq_targets);
  DiffValue seg = add(add(pix_ce, ord_l1), seq_ce);

  LossBreakdown out;
  out.seg = seg.item();
  DiffValue total = scale(seg, lc.lambda_seg);

  if (cfg.use_lm && cfg.use_gtr) {
    DiffValue cc = consistency_loss(fwd.l, fwd.s, std::min<int>(cfg.T, sample.length),
                                    cfg.kl_direction);
    out.cc = cc.item();
    total = add(total, scale(cc, lc.lambda_cc));
  }
  if (teacher_m != nullptr && lc.lambda_mt > 0) {
    DiffValue mt = mse(fwd.m.probs, teacher_m->probs);
    out.mt = mt.item();
    total = add(total, scale(mt, lc.lambda_mt));
  }
  out.total = total;
  return out;
}

std::string decode_string(const SequenceLogits& s, const std::string& charset) {
  const int T = s.scores.dim(0), C = s.scores.dim(1);
  std::string out;
  for (int t = 0; t < T; ++t) {
    int am = 0;
    for (int c = 1; c < C; ++c)
      if (s.scores.at(static_cast<std::int64_t>(t) * C + c) >
          s.scores.at(static_cast<std::int64_t>(t) * C + am))
        am = c;
    if (am > 0 && am <= static_cast<int>(charset.size())) out += charset[am - 1];
  }
  return out;
}

}  // namespace sgtr
