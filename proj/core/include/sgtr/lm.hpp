#pragma once

// Character bigram language model with add-1 smoothing. Stands in for a
// heavier LM behind the same rescoring interface.

#include <string>
#include <vector>

#include "sgtr/synthdata.hpp"
#include "sgtr/vrseg.hpp"

namespace sgtr {

struct NgramLM {
  int order = 2;
  int C = 0;                  // classes incl. background; index C = start token
  std::vector<double> logp;   // (C+1) x (C+1): log P(next | prev)

  double log_prob(int next, int prev) const {
    return logp[static_cast<size_t>(prev) * (C + 1) + next];
  }

  static NgramLM fit(const std::vector<SegSample>& corpus, const std::string& charset);
  static NgramLM uniform(int C);
};

// L[t] = log softmax(T[t]) + log P(c | argmax of row t-1); rows at or beyond
// the decoded length pass through unchanged. prev_io, when non-null, records
// the per-row conditioning decisions (replay=false) or replays them
// (replay=true) so the rescoring stays on a fixed decision path while the
// underlying scores move.
SequenceLogits lm_rescore(const SequenceLogits& t, const NgramLM& lm,
                          std::vector<int>* prev_io = nullptr, bool replay = false);

}  // namespace sgtr
