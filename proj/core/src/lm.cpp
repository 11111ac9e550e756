#include "sgtr/lm.hpp"

#include <cmath>
#include <stdexcept>

namespace sgtr {

NgramLM NgramLM::fit(const std::vector<SegSample>& corpus, const std::string& charset) {
  NgramLM lm;
  lm.C = static_cast<int>(charset.size()) + 1;
  const int n = lm.C + 1;
  const int start = lm.C;
  std::vector<double> counts(static_cast<size_t>(n) * n, 1.0);  // add-1 smoothing
  for (const auto& s : corpus) {
    int prev = start;
    for (char c : s.label) {
      const auto pos = charset.find(c);
      if (pos == std::string::npos)
        throw std::invalid_argument(std::string("NgramLM::fit: label symbol '") + c +
                                    "' not in charset");
      const int cls = static_cast<int>(pos) + 1;
      counts[static_cast<size_t>(prev) * n + cls] += 1.0;
      prev = cls;
    }
  }
  lm.logp.resize(counts.size());
  for (int p = 0; p < n; ++p) {
    double z = 0;
    for (int c = 0; c < n; ++c) z += counts[static_cast<size_t>(p) * n + c];
    for (int c = 0; c < n; ++c)
      lm.logp[static_cast<size_t>(p) * n + c] =
          std::log(counts[static_cast<size_t>(p) * n + c] / z);
  }
  return lm;
}

NgramLM NgramLM::uniform(int C) {
  NgramLM lm;
  lm.C = C;
  const int n = C + 1;
  lm.logp.assign(static_cast<size_t>(n) * n, -std::log(static_cast<double>(n)));
  return lm;
}

SequenceLogits lm_rescore(const SequenceLogits& t, const NgramLM& lm,
                          std::vector<int>* prev_io, bool replay) {
  const int T = t.scores.dim(0), C = t.scores.dim(1);
  if (C != lm.C)
    throw std::invalid_argument("lm_rescore: " + std::to_string(C) + " classes vs LM with " +
                                std::to_string(lm.C));
  if (prev_io && !replay) prev_io->clear();
  DiffValue logsm = log_clamped(softmax_rows(t.scores));
  std::vector<DiffValue> rows;
  int prev = lm.C;  // start token
  for (int tt = 0; tt < T; ++tt) {
    DiffValue raw = slice_rows(t.scores, tt, tt + 1);
    if (tt >= t.length) {
      rows.push_back(raw);
      continue;
    }
    std::vector<double> bias(C);
    for (int c = 0; c < C; ++c) bias[c] = lm.log_prob(c, prev);
    rows.push_back(add(slice_rows(logsm, tt, tt + 1), DiffValue::constant({1, C}, bias)));
    // condition the next row on this row's hard decision
    if (prev_io && replay) {
      prev = prev_io->at(tt);
      continue;
    }
    int am = 0;
    for (int c = 1; c < C; ++c)
      if (t.scores.at(static_cast<std::int64_t>(tt) * C + c) >
          t.scores.at(static_cast<std::int64_t>(tt) * C + am))
        am = c;
    prev = am;
    if (prev_io) prev_io->push_back(am);
  }
  SequenceLogits out;
  out.scores = concat_rows(rows);
  out.length = t.length;
  return out;
}

}  // namespace sgtr
