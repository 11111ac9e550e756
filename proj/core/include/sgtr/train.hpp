#pragma once

// Adam training loop, metrics stream, and evaluation.

#include <iosfwd>
#include <string>
#include <vector>

#include "sgtr/model.hpp"

namespace sgtr {

struct TrainConfig {
  int epochs = 5;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 0;
  double lambda_seg = 1.0;
  double lambda_cc = 1.0;
  bool mean_teacher = false;
  double ema_alpha = 0.999;
  double lambda_mt_start = 1.0;  // decays linearly to 0 over the epochs
  std::string out_dir;           // when set: checkpoints + metrics.jsonl
  bool eval_test_after = true;
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  double loss_seg = 0, loss_cc = 0, loss_mt = 0;
  double word_acc = 0, char_acc = 0, ned = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  bool aborted_nan = false;
  int last_epoch = 0;
};

enum class EvalMode { kVr, kVrLm, kVrGtr, kFull };

struct EvalMetrics {
  double word_acc = 0, char_acc = 0, ned = 0, pixel_acc = 0;
  int count = 0;
};

class Adam {
 public:
  Adam(std::map<std::string, DiffValue> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void set_lr(double lr) { lr_ = lr; }
  void step();
  void zero_grad();

 private:
  std::map<std::string, DiffValue> params_;
  std::map<std::string, std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// metrics_stream, when non-null, receives one JSON object per line.
TrainResult train(SgtrModel& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& test_set, const TrainConfig& tc,
                  std::ostream* metrics_stream = nullptr);

EvalMetrics evaluate(const SgtrModel& model, const std::vector<SegSample>& samples,
                     EvalMode mode);

EvalMode eval_mode_from_string(const std::string& s);

int edit_distance(const std::string& a, const std::string& b);

}  // namespace sgtr
