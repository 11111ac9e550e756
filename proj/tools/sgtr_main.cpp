// sgtr: corpus generation, training, evaluation, gradient checking, and
// inspection exports for the graph-based text recognition pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sgtr/checkpoint.hpp"
#include "sgtr/gradcheck.hpp"
#include "sgtr/model.hpp"
#include "sgtr/pgm.hpp"
#include "sgtr/synthdata.hpp"
#include "sgtr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sgtr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

int worker_count() {
  const char* env = std::getenv("SGTR_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

std::string config_hash(const json& j) {
  const std::size_t h = std::hash<std::string>{}(j.dump());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016zx", h);
  return buf;
}

void write_resolved_config(const std::string& out_dir, const json& cfg) {
  write_file_atomic(out_dir + "/resolved-config.json", cfg.dump(2) + "\n");
}

// flags win over the optional JSON config file
json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  json j;
  is >> j;
  return j;
}

std::vector<SegSample> load_corpus_arg(const std::string& corpus, const char* split) {
  if (fs::is_directory(corpus)) return read_corpus(corpus + "/" + split + ".corpus");
  return read_corpus(corpus);
}

// ---- gen ------------------------------------------------------------------

struct GenArgs {
  std::string out, charset = "abcdefghij", config_file;
  int n_train = 5000, n_test = 1000;
  int height = 32, width = 128, max_len = 8, min_len = 3, T = 8;
  double corrupt_level = 0.0;
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  if (a.charset.empty()) {
    std::cerr << "gen: --charset must not be empty\n";
    return kExitUsage;
  }
  for (char c : a.charset) {
    try {
      glyph_rows(c);
    } catch (const std::exception& e) {
      std::cerr << "gen: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  CorpusConfig cfg;
  cfg.charset = a.charset;
  cfg.H = a.height;
  cfg.W = a.width;
  cfg.T = a.T;
  cfg.min_len = a.min_len;
  cfg.max_len = a.max_len;
  cfg.corruption = a.corrupt_level;
  cfg.seed = a.seed;

  json resolved = {{"command", "gen"},         {"out", a.out},
                   {"charset", cfg.charset},   {"n_train", a.n_train},
                   {"n_test", a.n_test},       {"H", cfg.H},
                   {"W", cfg.W},               {"T", cfg.T},
                   {"min_len", cfg.min_len},   {"max_len", cfg.max_len},
                   {"corrupt_level", cfg.corruption}, {"seed", cfg.seed},
                   {"threads", worker_count()}};
  try {
    fs::create_directories(a.out);
    // train indices [0, n_train), test indices [n_train, n_train + n_test)
    std::vector<SegSample> train(a.n_train), test(a.n_test);
    for (int i = 0; i < a.n_train; ++i) train[i] = render_sample(cfg, i);
    for (int i = 0; i < a.n_test; ++i) test[i] = render_sample(cfg, a.n_train + i);
    write_corpus(train, a.out + "/train.corpus");
    write_corpus(test, a.out + "/test.corpus");
    json manifest = {{"n_train", a.n_train},
                     {"n_test", a.n_test},
                     {"config_hash", config_hash(resolved)}};
    write_file_atomic(a.out + "/manifest.json", manifest.dump(2) + "\n");
    write_resolved_config(a.out, resolved);
  } catch (const std::exception& e) {
    std::cerr << "gen: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string corpus, out, config_file;
  int epochs = 5, batch = 16, gcn_layers = 2;
  double lr = 1e-3;
  std::string adj = "discrete", pool = "graph", fuse = "dfuse", kl_dir = "sym";
  bool no_gtr = false, no_lm = false, mean_teacher = false;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  std::vector<SegSample> train_set, test_set;
  try {
    train_set = load_corpus_arg(a.corpus, "train");
    if (fs::is_directory(a.corpus) && fs::exists(a.corpus + "/test.corpus"))
      test_set = load_corpus_arg(a.corpus, "test");
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return kExitIo;
  }
  if (train_set.empty()) {
    std::cerr << "train: corpus is empty\n";
    return kExitIo;
  }

  ModelConfig mc;
  mc.H = train_set[0].H;
  mc.W = train_set[0].W;
  mc.gcn_layers = a.gcn_layers;
  mc.adjacency = a.adj == "continuous" ? AdjacencyMode::kContinuous : AdjacencyMode::kDiscrete;
  mc.pool = a.pool == "average" ? PoolMode::kAverage : PoolMode::kGraph;
  mc.fuse = a.fuse == "add"      ? FuseMode::kAdd
            : a.fuse == "concat" ? FuseMode::kConcat
                                 : FuseMode::kDFuse;
  mc.kl_direction = a.kl_dir == "l2s"   ? KlDirection::kLToS
                    : a.kl_dir == "s2l" ? KlDirection::kSToL
                                        : KlDirection::kSymmetric;
  mc.use_gtr = !a.no_gtr;
  mc.use_lm = !a.no_lm;
  // recover the charset from the corpus labels
  std::string charset;
  for (const auto& s : train_set)
    for (char c : s.label)
      if (charset.find(c) == std::string::npos) charset += c;
  std::sort(charset.begin(), charset.end());
  mc.charset = charset;

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.lr = a.lr;
  tc.batch = a.batch;
  tc.seed = a.seed;
  tc.mean_teacher = a.mean_teacher;
  tc.out_dir = a.out;

  json resolved = mc.to_json();
  resolved["command"] = "train";
  resolved["corpus"] = a.corpus;
  resolved["epochs"] = a.epochs;
  resolved["lr"] = a.lr;
  resolved["batch"] = a.batch;
  resolved["seed"] = a.seed;
  resolved["mean_teacher"] = a.mean_teacher;
  resolved["out"] = a.out;

  try {
    fs::create_directories(a.out);
    write_resolved_config(a.out, resolved);
    SgtrModel model = SgtrModel::init(mc, a.seed);
    std::cerr << "training: " << model.param_count() << " parameters, " << train_set.size()
              << " samples, " << a.epochs << " epochs\n";
    TrainResult r = train(model, train_set, test_set, tc, &std::cout);
    if (r.aborted_nan) {
      std::cerr << "train: non-finite loss, aborted after epoch " << r.last_epoch
                << " (last good checkpoint retained)\n";
      return kExitNumeric;
    }
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

int run_eval(const std::string& checkpoint, const std::string& corpus,
             const std::string& mode, const std::string& out_dir) {
  if (!fs::exists(checkpoint)) {
    std::cerr << "eval: checkpoint " << checkpoint << " not found\n";
    return kExitIo;
  }
  try {
    SgtrModel model = SgtrModel::load(checkpoint);
    std::vector<SegSample> samples = load_corpus_arg(corpus, "test");
    if (!samples.empty() &&
        (samples[0].H != model.cfg.H || samples[0].W != model.cfg.W)) {
      std::cerr << "eval: corpus geometry does not match checkpoint config\n";
      return kExitIo;
    }
    const EvalMetrics m = evaluate(model, samples, eval_mode_from_string(mode));
    json j = {{"mode", mode},         {"count", m.count},   {"word_acc", m.word_acc},
              {"char_acc", m.char_acc}, {"ned", m.ned},     {"pixel_acc", m.pixel_acc}};
    std::cout << j.dump() << "\n";
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_resolved_config(out_dir, json{{"command", "eval"},
                                          {"checkpoint", checkpoint},
                                          {"corpus", corpus},
                                          {"mode", mode}});
      write_file_atomic(out_dir + "/metrics.json", j.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

// ---- inspect --------------------------------------------------------------

int run_inspect(const std::string& checkpoint, const std::string& corpus, int index,
                const std::string& out_dir) {
  if (!fs::exists(checkpoint)) {
    std::cerr << "inspect: checkpoint " << checkpoint << " not found\n";
    return kExitIo;
  }
  try {
    SgtrModel model = SgtrModel::load(checkpoint);
    std::vector<SegSample> samples = load_corpus_arg(corpus, "test");
    if (index < 0 || index >= static_cast<int>(samples.size())) {
      std::cerr << "inspect: sample index " << index << " out of range\n";
      return kExitUsage;
    }
    fs::create_directories(out_dir);
    const SegSample& sample = samples[index];
    const ForwardResult r = model.forward(sample, index);
    const int H = model.cfg.H, W = model.cfg.W, C = model.cfg.num_classes();

    // input as grayscale
    std::vector<double> gray(static_cast<size_t>(H) * W);
    for (int i = 0; i < H * W; ++i)
      gray[i] = (sample.image[3 * i] + sample.image[3 * i + 1] + sample.image[3 * i + 2]) / 3;
    write_pgm(out_dir + "/input.pgm", gray, H, W);

    // segmentation energy: 1 - background probability per pixel
    std::vector<double> energy(static_cast<size_t>(H) * W);
    for (int i = 0; i < H * W; ++i)
      energy[i] = 1.0 - r.m.probs.at(static_cast<std::int64_t>(i) * C);
    write_pgm(out_dir + "/seg-energy.pgm", energy, H, W);

    // order-attention maps
    for (int t = 0; t < model.cfg.T; ++t) {
      std::vector<double> map(static_cast<size_t>(H) * W);
      for (int i = 0; i < H * W; ++i)
        map[i] = r.att.maps.at(static_cast<std::int64_t>(t) * H * W + i);
      write_pgm(out_dir + "/order-att-" + std::to_string(t) + ".pgm", map, H, W);
    }

    // per-character node similarity matrices + coordinate sidecars
    json sidecar = json::array();
    for (size_t gi = 0; gi < r.graph.subgraphs.size(); ++gi) {
      const auto& g = r.graph.subgraphs[gi];
      const int n = static_cast<int>(g.E.size());
      std::vector<double> flat;
      flat.reserve(static_cast<size_t>(n) * n);
      for (const auto& row : g.E)
        for (double v : row) flat.push_back(v);
      write_pgm(out_dir + "/similarity-char" + std::to_string(gi) + ".pgm", flat, n, n);
      json nodes = json::array();
      for (const auto& e : g.nodes.entries) nodes.push_back({{"x", e.x}, {"y", e.y}});
      sidecar.push_back({{"char_index", g.char_index},
                         {"root", g.root},
                         {"node_count", n},
                         {"nodes", nodes}});
    }
    write_file_atomic(out_dir + "/graph.json", sidecar.dump(2) + "\n");
    write_resolved_config(out_dir, json{{"command", "inspect"},
                                        {"checkpoint", checkpoint},
                                        {"corpus", corpus},
                                        {"sample_index", index}});
    json summary = {{"label", sample.label},
                    {"prediction", decode_string(r.z, model.cfg.charset)},
                    {"decoded_length", r.t.length}};
    std::cout << summary.dump() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "inspect: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, double eps, int coords, int samples_n,
                  const std::string& out_dir) {
  try {
    CorpusConfig cc;
    cc.charset = "abcde";
    cc.H = 24;
    cc.W = 48;
    cc.T = 4;
    cc.min_len = 2;
    cc.max_len = 2;
    cc.seed = seed;

    ModelConfig mc;
    mc.H = cc.H;
    mc.W = cc.W;
    mc.T = cc.T;
    mc.charset = cc.charset;
    mc.onehop_mask = false;  // the mask intentionally diverges from true grads
    SgtrModel model = SgtrModel::init(mc, seed);
    std::vector<SegSample> batch = generate_corpus(cc, samples_n);
    model.fit_lm(batch);

    std::vector<NamedParam> params;
    for (auto& [name, v] : model.named_params()) params.push_back({name, v});

    double worst = 0;
    json per_sample = json::array();
    for (int i = 0; i < samples_n; ++i) {
      const SegSample& s = batch[i];
      ForwardTrace trace;  // first call records the decision path, later calls replay it
      auto f = [&]() {
        ForwardResult fwd = model.forward(s, seed + i, &trace);
        LossConfig lc;
        return model.loss(s, fwd, lc).total;
      };
      GradCheckOptions opt;
      opt.eps = eps;
      opt.max_coords_per_param = coords;
      opt.seed = seed + i;
      opt.denom_floor = 1e-5;  // full loss has magnitude ~10; see GradCheckOptions
      const GradReport rep = grad_check(f, params, opt);
      worst = std::max(worst, rep.max_rel_error);
      per_sample.push_back({{"sample", i},
                            {"max_rel_error", rep.max_rel_error},
                            {"worst_param", rep.worst_param},
                            {"worst_coord", rep.worst_coord},
                            {"analytic", rep.analytic},
                            {"numeric", rep.numeric},
                            {"coords_checked", rep.coords_checked}});
      std::cerr << "gradcheck sample " << i << ": max rel err " << rep.max_rel_error
                << " (" << rep.worst_param << ")\n";
    }
    json j = {{"max_rel_error", worst}, {"eps", eps}, {"samples", per_sample},
              {"pass", worst < 1e-4}};
    std::cout << j.dump() << "\n";
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_resolved_config(out_dir, json{{"command", "gradcheck"},
                                          {"seed", seed},
                                          {"eps", eps},
                                          {"coords", coords},
                                          {"samples", samples_n}});
      write_file_atomic(out_dir + "/gradcheck.json", j.dump(2) + "\n");
    }
    return worst < 1e-4 ? kExitOk : kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "gradcheck: " << e.what() << "\n";
    return kExitNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S-GTR pipeline: synthetic corpora, training, evaluation, inspection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic corpus");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--n-train", gen.n_train);
  cmd_gen->add_option("--n-test", gen.n_test);
  cmd_gen->add_option("--charset", gen.charset);
  cmd_gen->add_option("--seed", gen.seed);
  cmd_gen->add_option("--corrupt-level", gen.corrupt_level);
  cmd_gen->add_option("--height", gen.height);
  cmd_gen->add_option("--width", gen.width);
  cmd_gen->add_option("--max-len", gen.max_len);
  cmd_gen->add_option("--min-len", gen.min_len);
  cmd_gen->add_option("--seq-len", gen.T, "max decoded sequence length");
  cmd_gen->add_option("--config", gen.config_file, "JSON config file (flags win)");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--corpus", tr.corpus, "corpus dir (from gen) or file")->required();
  cmd_train->add_option("--out", tr.out, "output directory")->required();
  cmd_train->add_option("--epochs", tr.epochs);
  cmd_train->add_option("--lr", tr.lr);
  cmd_train->add_option("--batch", tr.batch);
  cmd_train->add_option("--gcn-layers", tr.gcn_layers)->check(CLI::IsMember({1, 2, 3}));
  cmd_train->add_option("--adj", tr.adj)->check(CLI::IsMember({"discrete", "continuous"}));
  cmd_train->add_option("--pool", tr.pool)->check(CLI::IsMember({"graph", "average"}));
  cmd_train->add_option("--fuse", tr.fuse)->check(CLI::IsMember({"dfuse", "add", "concat"}));
  cmd_train->add_option("--kl-dir", tr.kl_dir)->check(CLI::IsMember({"sym", "l2s", "s2l"}));
  cmd_train->add_flag("--no-gtr", tr.no_gtr);
  cmd_train->add_flag("--no-lm", tr.no_lm);
  cmd_train->add_flag("--mean-teacher", tr.mean_teacher);
  cmd_train->add_option("--seed", tr.seed);
  cmd_train->add_option("--config", tr.config_file, "JSON config file (flags win)");

  std::string ev_checkpoint, ev_corpus, ev_mode = "full", ev_out;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", ev_checkpoint)->required();
  cmd_eval->add_option("--corpus", ev_corpus)->required();
  cmd_eval->add_option("--mode", ev_mode)->check(CLI::IsMember({"vr", "vr+lm", "vr+gtr", "full"}));
  cmd_eval->add_option("--out", ev_out, "optional output directory");

  std::string in_checkpoint, in_corpus, in_out;
  int in_index = 0;
  auto* cmd_inspect = app.add_subcommand("inspect", "export heatmaps for one sample");
  cmd_inspect->add_option("--checkpoint", in_checkpoint)->required();
  cmd_inspect->add_option("--corpus", in_corpus)->required();
  cmd_inspect->add_option("--sample-index", in_index);
  cmd_inspect->add_option("--out", in_out)->required();

  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-5;
  int gc_coords = 100, gc_samples = 2;
  std::string gc_out;
  auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  cmd_gc->add_option("--seed", gc_seed);
  cmd_gc->add_option("--eps", gc_eps);
  cmd_gc->add_option("--coords", gc_coords, "sub-sampled coordinates per parameter");
  cmd_gc->add_option("--samples", gc_samples);
  cmd_gc->add_option("--out", gc_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cmd_gen) {
      // optional config file: fill defaults the flags did not set
      const json jc = load_config_file(gen.config_file);
      if (!jc.empty()) {
        if (jc.contains("charset") && cmd_gen->count("--charset") == 0)
          gen.charset = jc["charset"].get<std::string>();
        if (jc.contains("corrupt_level") && cmd_gen->count("--corrupt-level") == 0)
          gen.corrupt_level = jc["corrupt_level"].get<double>();
        if (jc.contains("seed") && cmd_gen->count("--seed") == 0)
          gen.seed = jc["seed"].get<std::uint64_t>();
      }
      return run_gen(gen);
    }
    if (*cmd_train) return run_train(tr);
    if (*cmd_eval) return run_eval(ev_checkpoint, ev_corpus, ev_mode, ev_out);
    if (*cmd_inspect) return run_inspect(in_checkpoint, in_corpus, in_index, in_out);
    if (*cmd_gc) return run_gradcheck(gc_seed, gc_eps, gc_coords, gc_samples, gc_out);
  } catch (const std::exception& e) {
    std::cerr << "sgtr: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
