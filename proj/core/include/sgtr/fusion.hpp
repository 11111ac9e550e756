#pragma once

// Dynamic fusion of the visual / linguistic / spatial streams plus the
// mutual-learning consistency loss and mean-teacher EMA update.

#include <map>
#include <string>

#include "sgtr/rng.hpp"
#include "sgtr/tensor.hpp"
#include "sgtr/vrseg.hpp"

namespace sgtr {

enum class FuseMode { kDFuse, kAdd, kConcat };

enum class KlDirection { kSymmetric, kLToS, kSToL };

struct FusionParams {
  DiffValue w0, b0;  // {3C, C}, {C}
  DiffValue w1, b1;

  static FusionParams init(int C, Rng& rng);
  void collect(std::map<std::string, DiffValue>& out) const;
  void adopt(const std::map<std::string, DiffValue>& params);
};

// Z = sigmoid(W0 [T;L;S]) .* (W1 [T;L;S]) per row; "Add" and "Concat" are the
// ablation alternatives.
SequenceLogits dynamic_fuse(const SequenceLogits& t, const SequenceLogits& l,
                            const SequenceLogits& s, const FusionParams& p,
                            FuseMode mode);

// Symmetrized KL between the row distributions of L and S, averaged over the
// first `length` rows. Zero rows -> zero loss.
DiffValue consistency_loss(const SequenceLogits& l, const SequenceLogits& s, int length,
                           KlDirection dir = KlDirection::kSymmetric);

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, elementwise over
// matching names. Throws on shape drift.
void ema_update(std::map<std::string, DiffValue>& teacher,
                const std::map<std::string, DiffValue>& student, double alpha);

}  // namespace sgtr
