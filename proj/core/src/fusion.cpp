#include "sgtr/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace sgtr {

FusionParams FusionParams::init(int C, Rng& rng) {
  auto lin = [&rng](int rows, int cols) {
    const double std = std::sqrt(2.0 / rows);
    std::vector<double> d(static_cast<size_t>(rows) * cols);
    for (double& v : d) v = rng.normal(0.0, std);
    return DiffValue::param({rows, cols}, std::move(d));
  };
  FusionParams p;
  p.w0 = lin(3 * C, C);
  p.b0 = DiffValue::zeros({C}, true);
  p.w1 = lin(3 * C, C);
  p.b1 = DiffValue::zeros({C}, true);
  return p;
}

void FusionParams::collect(std::map<std::string, DiffValue>& out) const {
  out["fuse.w0"] = w0;
  out["fuse.b0"] = b0;
  out["fuse.w1"] = w1;
  out["fuse.b1"] = b1;
}

void FusionParams::adopt(const std::map<std::string, DiffValue>& params) {
  w0 = params.at("fuse.w0");
  b0 = params.at("fuse.b0");
  w1 = params.at("fuse.w1");
  b1 = params.at("fuse.b1");
}

SequenceLogits dynamic_fuse(const SequenceLogits& t, const SequenceLogits& l,
                            const SequenceLogits& s, const FusionParams& p,
                            FuseMode mode) {
  SequenceLogits out;
  out.length = t.length;
  switch (mode) {
    case FuseMode::kAdd:
      out.scores = add(add(t.scores, l.scores), s.scores);
      break;
    case FuseMode::kConcat: {
      DiffValue cat = concat_cols({t.scores, l.scores, s.scores});
      out.scores = add_bias_rows(matmul(cat, p.w1), p.b1);
      break;
    }
    case FuseMode::kDFuse: {
      DiffValue cat = concat_cols({t.scores, l.scores, s.scores});
      DiffValue q = sigmoid(add_bias_rows(matmul(cat, p.w0), p.b0));
      out.scores = mul(q, add_bias_rows(matmul(cat, p.w1), p.b1));
      break;
    }
  }
  return out;
}

DiffValue consistency_loss(const SequenceLogits& l, const SequenceLogits& s, int length,
                           KlDirection dir) {
  if (length <= 0) return DiffValue::scalar(0.0);
  DiffValue lr = slice_rows(l.scores, 0, length);
  DiffValue sr = slice_rows(s.scores, 0, length);
  switch (dir) {
    case KlDirection::kLToS:
      return kl_div(lr, sr);
    case KlDirection::kSToL:
      return kl_div(sr, lr);
    case KlDirection::kSymmetric:
    default:
      return scale(add(kl_div(lr, sr), kl_div(sr, lr)), 0.5);
  }
}

void ema_update(std::map<std::string, DiffValue>& teacher,
                const std::map<std::string, DiffValue>& student, double alpha) {
  for (auto& [name, tv] : teacher) {
    auto it = student.find(name);
    if (it == student.end())
      throw std::invalid_argument("ema_update: student is missing parameter " + name);
    const DiffValue& sv = it->second;
    if (tv.shape() != sv.shape())
      throw std::invalid_argument("ema_update: shape drift on " + name + ": " +
                                  shape_str(tv.shape()) + " vs " + shape_str(sv.shape()));
    auto& td = tv.data();
    const auto& sd = sv.data();
    for (size_t i = 0; i < td.size(); ++i) td[i] = alpha * td[i] + (1.0 - alpha) * sd[i];
  }
}

}  // namespace sgtr
