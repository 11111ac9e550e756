#include "sgtr/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sgtr/checkpoint.hpp"
#include "sgtr/rng.hpp"

namespace sgtr {

using nlohmann::json;

// ---- optimizer ------------------------------------------------------------

Adam::Adam(std::map<std::string, DiffValue> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_[name].assign(p.size(), 0.0);
    v_[name].assign(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [name, p] : params_) {
    auto& m = m_[name];
    auto& v = v_[name];
    auto& val = p.data();
    const auto& g = p.grad();
    for (size_t i = 0; i < val.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      val[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

// ---- evaluation -----------------------------------------------------------

int edit_distance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[m];
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "vr") return EvalMode::kVr;
  if (s == "vr+lm") return EvalMode::kVrLm;
  if (s == "vr+gtr") return EvalMode::kVrGtr;
  if (s == "full") return EvalMode::kFull;
  throw std::invalid_argument("unknown eval mode '" + s + "' (vr|vr+lm|vr+gtr|full)");
}

namespace {

std::string decode_mode(const ForwardResult& r, EvalMode mode, const std::string& charset) {
  switch (mode) {
    case EvalMode::kVr:
      return decode_string(r.t, charset);
    case EvalMode::kVrLm:
      return decode_string(r.l, charset);
    case EvalMode::kVrGtr: {
      // joint argmax of the visual and spatial log-distributions
      const int T = r.t.scores.dim(0), C = r.t.scores.dim(1);
      auto logsm = [C](const DiffValue& sc, int t, int c) {
        double mx = -1e300, z = 0;
        for (int k = 0; k < C; ++k)
          mx = std::max(mx, sc.at(static_cast<std::int64_t>(t) * C + k));
        for (int k = 0; k < C; ++k)
          z += std::exp(sc.at(static_cast<std::int64_t>(t) * C + k) - mx);
        return sc.at(static_cast<std::int64_t>(t) * C + c) - mx - std::log(z);
      };
      std::string out;
      for (int t = 0; t < T; ++t) {
        int am = 0;
        double best = -1e300;
        for (int c = 0; c < C; ++c) {
          const double v = logsm(r.t.scores, t, c) + logsm(r.s.scores, t, c);
          if (v > best) {
            best = v;
            am = c;
          }
        }
        if (am > 0 && am <= static_cast<int>(charset.size())) out += charset[am - 1];
      }
      return out;
    }
    case EvalMode::kFull:
    default:
      return decode_string(r.z, charset);
  }
}

struct SeqStats {
  int words = 0, word_hits = 0;
  int chars = 0, char_hits = 0;
  double ned_sum = 0;

  void add(const std::string& pred, const std::string& truth) {
    ++words;
    if (pred == truth) ++word_hits;
    const int dist = edit_distance(pred, truth);
    const size_t maxlen = std::max(pred.size(), truth.size());
    ned_sum += maxlen == 0 ? 1.0 : 1.0 - static_cast<double>(dist) / maxlen;
    chars += static_cast<int>(truth.size());
    for (size_t i = 0; i < std::min(pred.size(), truth.size()); ++i)
      if (pred[i] == truth[i]) ++char_hits;
  }

  double word_acc() const { return words ? static_cast<double>(word_hits) / words : 0; }
  double char_acc() const { return chars ? static_cast<double>(char_hits) / chars : 0; }
  double ned() const { return words ? ned_sum / words : 0; }
};

}  // namespace

EvalMetrics evaluate(const SgtrModel& model, const std::vector<SegSample>& samples,
                     EvalMode mode) {
  SeqStats stats;
  std::int64_t pix = 0, pix_hits = 0;
  const int C = model.cfg.num_classes();
  for (size_t i = 0; i < samples.size(); ++i) {
    const ForwardResult r = model.forward(samples[i], i);
    stats.add(decode_mode(r, mode, model.cfg.charset), samples[i].label);
    const auto& probs = r.m.probs.data();
    for (int px = 0; px < model.cfg.H * model.cfg.W; ++px) {
      int am = 0;
      for (int c = 1; c < C; ++c)
        if (probs[static_cast<size_t>(px) * C + c] > probs[static_cast<size_t>(px) * C + am])
          am = c;
      if (am == samples[i].class_map[px]) ++pix_hits;
      ++pix;
    }
  }
  EvalMetrics m;
  m.word_acc = stats.word_acc();
  m.char_acc = stats.char_acc();
  m.ned = stats.ned();
  m.pixel_acc = pix ? static_cast<double>(pix_hits) / pix : 0;
  m.count = static_cast<int>(samples.size());
  return m;
}

// ---- training -------------------------------------------------------------

namespace {

json metrics_json(const EpochMetrics& m) {
  return json{{"epoch", m.epoch},       {"split", m.split},
              {"loss_seg", m.loss_seg}, {"loss_cc", m.loss_cc},
              {"loss_mt", m.loss_mt},   {"word_acc", m.word_acc},
              {"char_acc", m.char_acc}, {"ned", m.ned}};
}

std::map<std::string, DiffValue> clone_values(const std::map<std::string, DiffValue>& src) {
  std::map<std::string, DiffValue> out;
  for (const auto& [name, v] : src) out.emplace(name, DiffValue::param(v.shape(), v.data()));
  return out;
}

// the teacher is never differentiated, so its weights are plain constants;
// this also keeps backward() from walking the teacher's conv stack when the
// student loss touches the teacher's output
std::map<std::string, DiffValue> clone_constants(const std::map<std::string, DiffValue>& src) {
  std::map<std::string, DiffValue> out;
  for (const auto& [name, v] : src)
    out.emplace(name, DiffValue::constant(v.shape(), v.data()));
  return out;
}

}  // namespace

TrainResult train(SgtrModel& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& test_set, const TrainConfig& tc,
                  std::ostream* metrics_stream) {
  if (train_set.empty()) throw std::invalid_argument("train: empty corpus");
  model.fit_lm(train_set);

  auto params = model.named_params();
  Adam opt(params, tc.lr);

  // teacher: EMA copy of the VR front-end
  std::map<std::string, DiffValue> student_vr, teacher_vr;
  model.vr.collect(student_vr);
  if (tc.mean_teacher) teacher_vr = clone_constants(student_vr);

  TrainResult result;
  std::map<std::string, DiffValue> last_good = clone_values(params);

  std::ofstream metrics_file;
  if (!tc.out_dir.empty()) {
    std::filesystem::create_directories(tc.out_dir);
    metrics_file.open(tc.out_dir + "/metrics.jsonl", std::ios::trunc);
  }
  auto emit = [&](const EpochMetrics& m) {
    result.history.push_back(m);
    const std::string line = metrics_json(m).dump();
    if (metrics_stream) (*metrics_stream) << line << '\n';
    if (metrics_file.is_open()) metrics_file << line << '\n' << std::flush;
  };

  double best_loss = 1e300;
  const int decay1 = static_cast<int>(std::ceil(2.0 * tc.epochs / 3.0));
  const int decay2 = static_cast<int>(std::ceil(5.0 * tc.epochs / 6.0));

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    double lr = tc.lr;
    if (epoch > decay1) lr /= 10.0;
    if (epoch > decay2) lr /= 10.0;
    opt.set_lr(lr);

    // linear decay of the mean-teacher weight to 0 at the final epoch
    const double lambda_mt =
        tc.mean_teacher && tc.epochs > 1
            ? tc.lambda_mt_start * (1.0 - static_cast<double>(epoch - 1) / (tc.epochs - 1))
            : (tc.mean_teacher ? tc.lambda_mt_start : 0.0);
    LossConfig lc;
    lc.lambda_seg = tc.lambda_seg;
    lc.lambda_cc = tc.lambda_cc;
    lc.lambda_mt = lambda_mt;

    Rng shuffle_rng = Rng::derive(tc.seed, 0xE50000 + epoch);
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

    EpochMetrics em;
    em.epoch = epoch;
    em.split = "train";
    SeqStats stats;
    double seg_sum = 0, cc_sum = 0, mt_sum = 0;
    int steps = 0;
    bool nan_hit = false;

    opt.zero_grad();
    int in_batch = 0;
    VrParams teacher;
    if (tc.mean_teacher) teacher.adopt(teacher_vr);
    Rng noise_rng = Rng::derive(tc.seed, 0x7E000000 + epoch);

    for (size_t k = 0; k < order.size() && !nan_hit; ++k) {
      const SegSample& sample = train_set[order[k]];
      const std::uint64_t graph_seed =
          tc.seed * 1315423911ULL + epoch * 2654435761ULL + order[k];
      ForwardResult fwd = model.forward(sample, graph_seed);

      SegmentationMap teacher_m;
      const SegmentationMap* teacher_ptr = nullptr;
      if (tc.mean_teacher && lambda_mt > 0) {
        // the teacher sees the same image under fresh noise
        std::vector<double> noisy = sample.image;
        for (double& v : noisy) v = std::clamp(v + noise_rng.normal(0.0, 0.01), 0.0, 1.0);
        teacher_m = vr_forward(teacher, noisy, model.cfg.H, model.cfg.W,
                               model.cfg.num_classes());
        teacher_ptr = &teacher_m;
      }

      LossBreakdown lb = model.loss(sample, fwd, lc, teacher_ptr);
      const double total = lb.total.item();
      if (!std::isfinite(total)) {
        nan_hit = true;
        break;
      }
      backward(scale(lb.total, 1.0 / tc.batch));
      seg_sum += lb.seg;
      cc_sum += lb.cc;
      mt_sum += lb.mt;
      ++steps;
      stats.add(decode_string(fwd.z, model.cfg.charset), sample.label);

      if (++in_batch == tc.batch || k + 1 == order.size()) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
        if (tc.mean_teacher) {
          model.vr.collect(student_vr);
          ema_update(teacher_vr, student_vr, tc.ema_alpha);
          teacher.adopt(teacher_vr);
        }
      }
    }

    if (nan_hit) {
      // restore the last epoch that finished cleanly
      for (auto& [name, p] : params) p.data() = last_good.at(name).data();
      result.aborted_nan = true;
      result.last_epoch = epoch - 1;
      if (!tc.out_dir.empty()) model.save(tc.out_dir + "/checkpoint-final.json");
      return result;
    }

    em.loss_seg = steps ? seg_sum / steps : 0;
    em.loss_cc = steps ? cc_sum / steps : 0;
    em.loss_mt = steps ? mt_sum / steps : 0;
    em.word_acc = stats.word_acc();
    em.char_acc = stats.char_acc();
    em.ned = stats.ned();
    emit(em);
    result.last_epoch = epoch;
    last_good = clone_values(params);

    const double epoch_loss =
        em.loss_seg * lc.lambda_seg + em.loss_cc * lc.lambda_cc + em.loss_mt * lambda_mt;
    if (!tc.out_dir.empty() && epoch_loss < best_loss) {
      best_loss = epoch_loss;
      model.save(tc.out_dir + "/checkpoint-best.json");
    }
  }

  if (!tc.out_dir.empty()) model.save(tc.out_dir + "/checkpoint-final.json");

  if (tc.eval_test_after && !test_set.empty()) {
    const EvalMetrics m = evaluate(model, test_set, EvalMode::kFull);
    EpochMetrics em;
    em.epoch = tc.epochs;
    em.split = "test";
    em.word_acc = m.word_acc;
    em.char_acc = m.char_acc;
    em.ned = m.ned;
    emit(em);
  }
  return result;
}

}  // namespace sgtr
