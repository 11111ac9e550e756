#include "sgtr/vrseg.hpp"

#include <cmath>
#include <stdexcept>

namespace sgtr {

namespace {

DiffValue he_init(Shape shape, Rng& rng) {
  std::int64_t fan_in = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> d(numel(shape));
  for (double& v : d) v = rng.normal(0.0, std);
  return DiffValue::param(std::move(shape), std::move(d));
}

}  // namespace

int order_kernel_width(int W) {
  int kw = W / kOrdDilation + 1;
  if (kw % 2 == 0) ++kw;
  return kw;
}

VrParams VrParams::init(int C, int T, int W, Rng& rng) {
  VrParams p;
  p.conv1_w = he_init({3, 3, 3, 16}, rng);
  p.conv1_b = DiffValue::zeros({16}, true);
  p.conv2_w = he_init({3, 3, 16, 32}, rng);
  p.conv2_b = DiffValue::zeros({32}, true);
  p.conv3_w = he_init({3, 3, 32, 32}, rng);
  p.conv3_b = DiffValue::zeros({32}, true);
  p.cls_w = he_init({1, 1, 32, C}, rng);
  p.cls_b = DiffValue::zeros({C}, true);
  // the first ordering conv spans the full image width (dilated), so a map
  // can depend on how much character mass lies to its left; a local kernel
  // cannot express the order index at all
  p.ord1_w = he_init({1, order_kernel_width(W), C, 16}, rng);
  p.ord1_b = DiffValue::zeros({16}, true);
  p.ord2_w = he_init({3, 3, 16, T}, rng);
  p.ord2_b = DiffValue::zeros({T}, true);
  return p;
}

void VrParams::collect(std::map<std::string, DiffValue>& out) const {
  out["vr.conv1.w"] = conv1_w;
  out["vr.conv1.b"] = conv1_b;
  out["vr.conv2.w"] = conv2_w;
  out["vr.conv2.b"] = conv2_b;
  out["vr.conv3.w"] = conv3_w;
  out["vr.conv3.b"] = conv3_b;
  out["vr.cls.w"] = cls_w;
  out["vr.cls.b"] = cls_b;
  out["vr.ord1.w"] = ord1_w;
  out["vr.ord1.b"] = ord1_b;
  out["vr.ord2.w"] = ord2_w;
  out["vr.ord2.b"] = ord2_b;
}

void VrParams::adopt(const std::map<std::string, DiffValue>& params) {
  conv1_w = params.at("vr.conv1.w");
  conv1_b = params.at("vr.conv1.b");
  conv2_w = params.at("vr.conv2.w");
  conv2_b = params.at("vr.conv2.b");
  conv3_w = params.at("vr.conv3.w");
  conv3_b = params.at("vr.conv3.b");
  cls_w = params.at("vr.cls.w");
  cls_b = params.at("vr.cls.b");
  ord1_w = params.at("vr.ord1.w");
  ord1_b = params.at("vr.ord1.b");
  ord2_w = params.at("vr.ord2.w");
  ord2_b = params.at("vr.ord2.b");
}

SegmentationMap vr_forward(const VrParams& p, const std::vector<double>& image, int H,
                           int W, int C) {
  if (static_cast<int>(image.size()) != H * W * 3)
    throw std::invalid_argument("vr_forward: image has " + std::to_string(image.size()) +
                                " values, expected " + std::to_string(H * W * 3));
  DiffValue x = DiffValue::constant({H, W, 3}, image);
  x = relu(conv2d(x, p.conv1_w, p.conv1_b));
  x = relu(conv2d(x, p.conv2_w, p.conv2_b));
  x = relu(conv2d(x, p.conv3_w, p.conv3_b));
  DiffValue logits = reshape(conv2d(x, p.cls_w, p.cls_b), {H * W, C});
  SegmentationMap m;
  m.H = H;
  m.W = W;
  m.C = C;
  m.logits = logits;
  m.probs = softmax_rows(logits);
  return m;
}

OrderAttention feature_order(const VrParams& p, const SegmentationMap& m, int T) {
  DiffValue x = reshape(m.probs, {m.H, m.W, m.C});
  x = relu(conv2d(x, p.ord1_w, p.ord1_b, 1, kOrdDilation));
  x = sigmoid(conv2d(x, p.ord2_w, p.ord2_b));  // {H, W, T}
  OrderAttention att;
  att.T = T;
  att.H = m.H;
  att.W = m.W;
  att.maps = transpose(reshape(x, {m.H * m.W, T}));  // {T, H*W}
  return att;
}

OrderedFeatureTensor attend(const SegmentationMap& m, const OrderAttention& att) {
  if (att.H != m.H || att.W != m.W)
    throw std::invalid_argument("attend: map geometry mismatch");
  OrderedFeatureTensor v;
  v.T = att.T;
  v.H = m.H;
  v.W = m.W;
  v.C = m.C;
  for (int t = 0; t < att.T; ++t) {
    DiffValue row = slice_rows(att.maps, t, t + 1);       // {1, H*W}
    DiffValue s = reshape(row, {m.H * m.W});              // per-pixel weights
    v.v.push_back(scale_rows(m.probs, s));                // {H*W, C}
  }
  return v;
}

SequenceLogits decode_sequence(const OrderedFeatureTensor& v) {
  const int T = v.T, C = v.C;
  const int HW = v.H * v.W;
  // per-character class mass, then log
  std::vector<double> scores(static_cast<size_t>(T) * C);
  std::vector<double> nonbg_mass(T, 0.0);
  for (int t = 0; t < T; ++t) {
    const auto& d = v.v[t].data();
    for (int i = 0; i < HW; ++i)
      for (int c = 0; c < C; ++c) scores[static_cast<size_t>(t) * C + c] += d[static_cast<size_t>(i) * C + c];
    for (int c = 1; c < C; ++c) nonbg_mass[t] += scores[static_cast<size_t>(t) * C + c];
    for (int c = 0; c < C; ++c) {
      double& s = scores[static_cast<size_t>(t) * C + c];
      s = std::log(s + kLogFloor);
    }
  }
  std::vector<DiffValue> parents(v.v);
  DiffValue sc = make_op({T, C}, std::move(scores), std::move(parents), [T, C, HW](detail::Node& n) {
    for (int t = 0; t < T; ++t) {
      detail::Node& p = *n.parents[t];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      // d log(mass+eps) / dV = 1/(mass+eps) for every contributing pixel
      std::vector<double> g(C);
      for (int c = 0; c < C; ++c)
        g[c] = n.grad[static_cast<size_t>(t) * C + c] *
               std::exp(-n.value[static_cast<size_t>(t) * C + c]);
      for (int i = 0; i < HW; ++i) {
        double* row = &p.grad[static_cast<size_t>(i) * C];
        for (int c = 0; c < C; ++c) row[c] += g[c];
      }
    }
  });
  double max_mass = 0;
  for (double m : nonbg_mass) max_mass = std::max(max_mass, m);
  const double tau = 0.05 * max_mass;
  int length = 0;
  for (double m : nonbg_mass)
    if (m > tau) ++length;
  SequenceLogits out;
  out.scores = sc;
  out.length = length;
  return out;
}

std::vector<double> order_targets(const SegSample& s, int T, double sigma) {
  std::vector<double> out(static_cast<size_t>(T) * s.H * s.W, 0.0);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int t = 0; t < std::min<int>(T, s.order_centers.size()); ++t) {
    const auto [cx, cy] = s.order_centers[t];
    for (int y = 0; y < s.H; ++y)
      for (int x = 0; x < s.W; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        out[(static_cast<size_t>(t) * s.H + y) * s.W + x] = std::exp(-d2 * inv2s2);
      }
  }
  return out;
}

}  // namespace sgtr
