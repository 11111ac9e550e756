#pragma once

// Small visual-recognition front-end: full-resolution conv segmentation head
// producing the per-pixel class map M, a 2-conv ordering head producing T
// attention maps, the attended tensor V and the coarse sequence decode.

#include <map>
#include <string>
#include <vector>

#include "sgtr/rng.hpp"
#include "sgtr/synthdata.hpp"
#include "sgtr/tensor.hpp"

namespace sgtr {

struct VrParams {
  // segmentation trunk: 3x3 convs 3 -> 16 -> 32 -> 32, then 1x1 to C logits
  DiffValue conv1_w, conv1_b;
  DiffValue conv2_w, conv2_b;
  DiffValue conv3_w, conv3_b;
  DiffValue cls_w, cls_b;
  // ordering head on probs: a wide dilated horizontal conv (C -> 16, kernel
  // spans the image width) followed by a 3x3 conv to T sigmoid maps
  DiffValue ord1_w, ord1_b;
  DiffValue ord2_w, ord2_b;

  static VrParams init(int C, int T, int W, Rng& rng);
  void collect(std::map<std::string, DiffValue>& out) const;
  void adopt(const std::map<std::string, DiffValue>& params);
};

struct SegmentationMap {
  int H = 0, W = 0, C = 0;
  DiffValue logits;  // {H*W, C}
  DiffValue probs;   // {H*W, C}, per-pixel softmax of logits
};

struct OrderAttention {
  int T = 0, H = 0, W = 0;
  DiffValue maps;  // {T, H*W}, values in (0,1)
};

struct OrderedFeatureTensor {
  int T = 0, H = 0, W = 0, C = 0;
  std::vector<DiffValue> v;  // per t: {H*W, C}, v[t] = probs .* maps[t]
};

struct SequenceLogits {
  DiffValue scores;  // {T, C}
  int length = 0;
};

// horizontal dilation of the first ordering conv; its kernel width is chosen
// so the dilated span covers the whole image width
inline constexpr int kOrdDilation = 4;
int order_kernel_width(int W);

SegmentationMap vr_forward(const VrParams& p, const std::vector<double>& image, int H,
                           int W, int C);

OrderAttention feature_order(const VrParams& p, const SegmentationMap& m, int T);

OrderedFeatureTensor attend(const SegmentationMap& m, const OrderAttention& att);

// scores[t,c] = log(sum_hw V[t,h,w,c] + 1e-12); length counts maps whose
// non-background mass exceeds 0.05 * max_t(mass).
SequenceLogits decode_sequence(const OrderedFeatureTensor& v);

// Ground-truth order supervision: Gaussian bumps (sigma 2 px) at the
// character centroids, zero maps for t >= length. Shape {T, H*W}.
std::vector<double> order_targets(const SegSample& s, int T, double sigma = 2.0);

}  // namespace sgtr
