#include "sgtr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "sgtr/blas.hpp"

namespace sgtr {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::uint64_t next_node_id() { return g_next_id.fetch_add(1); }

}  // namespace detail

using detail::Node;

static std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value,
                                      bool requires_grad) {
  if (static_cast<std::int64_t>(value.size()) != numel(shape))
    throw std::invalid_argument("tensor data length " + std::to_string(value.size()) +
                                " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = detail::next_node_id();
  if (requires_grad) n->ensure_grad();
  return n;
}

DiffValue make_op(Shape shape, std::vector<double> value,
                  std::vector<DiffValue> parents,
                  std::function<void(Node&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto n = new_node(std::move(shape), std::move(value), rg);
  if (rg) {
    for (const auto& p : parents) n->parents.push_back(p.shared_node());
    n->backward_fn = std::move(backward_fn);
  }
  return DiffValue(std::move(n));
}

DiffValue DiffValue::constant(Shape shape, std::vector<double> data) {
  return DiffValue(new_node(std::move(shape), std::move(data), false));
}

DiffValue DiffValue::param(Shape shape, std::vector<double> data) {
  return DiffValue(new_node(std::move(shape), std::move(data), true));
}

DiffValue DiffValue::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(numel(shape), 0.0);
  return DiffValue(new_node(std::move(shape), std::move(d), requires_grad));
}

DiffValue DiffValue::scalar(double v) { return constant({1}, {v}); }

double DiffValue::item() const {
  if (n_->value.size() != 1)
    throw std::invalid_argument("item() on non-scalar tensor " + shape_str(n_->shape));
  return n_->value[0];
}

void DiffValue::zero_grad() {
  if (n_->requires_grad) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

// ---- helpers --------------------------------------------------------------

static void check_same_shape(const DiffValue& a, const DiffValue& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

static void accumulate(Node& dst, const std::vector<double>& g) {
  if (!dst.requires_grad) return;
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

// ---- arithmetic -----------------------------------------------------------

DiffValue add(const DiffValue& a, const DiffValue& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

DiffValue sub(const DiffValue& a, const DiffValue& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    Node& p = *n.parents[1];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
    }
  });
}

DiffValue mul(const DiffValue& a, const DiffValue& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

DiffValue scale(const DiffValue& a, double k) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= k;
  return make_op(a.shape(), std::move(out), {a}, [k](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += k * n.grad[i];
    }
  });
}

DiffValue matmul(const DiffValue& a, const DiffValue& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
  std::vector<double> out(static_cast<size_t>(N) * M);
  blas::gemm(false, false, N, M, K, 1.0, a.data().data(), b.data().data(), 0.0, out.data());
  return make_op({N, M}, std::move(out), {a, b}, [N, K, M](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // a.grad += g * b^T
      blas::gemm(false, true, N, K, M, 1.0, n.grad.data(), pb.value.data(), 1.0, pa.grad.data());
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // b.grad += a^T * g
      blas::gemm(true, false, K, M, N, 1.0, pa.value.data(), n.grad.data(), 1.0, pb.grad.data());
    }
  });
}

DiffValue add_bias_rows(const DiffValue& x, const DiffValue& bias) {
  if (x.shape().size() != 2 || bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
    throw std::invalid_argument("add_bias_rows: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(bias.shape()));
  const int R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.data());
  const auto& bd = bias.data();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[static_cast<size_t>(r) * C + c] += bd[c];
  return make_op(x.shape(), std::move(out), {x, bias}, [R, C](Node& n) {
    accumulate(*n.parents[0], n.grad);
    Node& pb = *n.parents[1];
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) pb.grad[c] += n.grad[static_cast<size_t>(r) * C + c];
    }
  });
}

DiffValue reshape(const DiffValue& x, Shape shape) {
  if (numel(shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_op(std::move(shape), x.data(), {x},
                 [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

DiffValue transpose(const DiffValue& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(x.shape()));
  const int R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.size());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      out[static_cast<size_t>(c) * R + r] = x.data()[static_cast<size_t>(r) * C + c];
  return make_op({C, R}, std::move(out), {x}, [R, C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          p.grad[static_cast<size_t>(r) * C + c] += n.grad[static_cast<size_t>(c) * R + r];
    }
  });
}

DiffValue scale_rows(const DiffValue& x, const DiffValue& s) {
  if (x.shape().size() != 2 || s.size() != x.dim(0))
    throw std::invalid_argument("scale_rows: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(s.shape()));
  const int R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.data());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[static_cast<size_t>(r) * C + c] *= s.at(r);
  return make_op(x.shape(), std::move(out), {x, s}, [R, C](Node& n) {
    Node& px = *n.parents[0];
    Node& ps = *n.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          px.grad[static_cast<size_t>(r) * C + c] +=
              n.grad[static_cast<size_t>(r) * C + c] * ps.value[r];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      for (int r = 0; r < R; ++r) {
        double acc = 0;
        for (int c = 0; c < C; ++c)
          acc += n.grad[static_cast<size_t>(r) * C + c] *
                 px.value[static_cast<size_t>(r) * C + c];
        ps.grad[r] += acc;
      }
    }
  });
}

DiffValue concat_rows(const std::vector<DiffValue>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int C = parts[0].dim(1);
  int Rtot = 0;
  std::vector<int> rows;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.dim(1) != C)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
    rows.push_back(p.dim(0));
    Rtot += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(Rtot) * C);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op({Rtot, C}, std::move(out), parts, [rows, C](Node& n) {
    size_t off = 0;
    for (size_t pi = 0; pi < n.parents.size(); ++pi) {
      Node& p = *n.parents[pi];
      const size_t len = static_cast<size_t>(rows[pi]) * C;
      if (p.requires_grad) {
        p.ensure_grad();
        for (size_t i = 0; i < len; ++i) p.grad[i] += n.grad[off + i];
      }
      off += len;
    }
  });
}

DiffValue concat_cols(const std::vector<DiffValue>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int R = parts[0].dim(0);
  int Ctot = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.dim(0) != R)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
    Ctot += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(R) * Ctot);
  int off = 0;
  for (const auto& p : parts) {
    const int C = p.dim(1);
    for (int r = 0; r < R; ++r)
      std::memcpy(&out[static_cast<size_t>(r) * Ctot + off],
                  &p.data()[static_cast<size_t>(r) * C], sizeof(double) * C);
    off += C;
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_op({R, Ctot}, std::move(out), parts, [R, Ctot, widths](Node& n) {
    int off = 0;
    for (size_t pi = 0; pi < n.parents.size(); ++pi) {
      Node& p = *n.parents[pi];
      const int C = widths[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c)
            p.grad[static_cast<size_t>(r) * C + c] +=
                n.grad[static_cast<size_t>(r) * Ctot + off + c];
      }
      off += C;
    }
  });
}

DiffValue slice_rows(const DiffValue& x, int begin, int end) {
  const int R = x.dim(0), C = x.dim(1);
  if (begin < 0 || end > R || begin > end)
    throw std::invalid_argument("slice_rows: [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") of " + shape_str(x.shape()));
  std::vector<double> out(x.data().begin() + static_cast<size_t>(begin) * C,
                          x.data().begin() + static_cast<size_t>(end) * C);
  return make_op({end - begin, C}, std::move(out), {x}, [begin, C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        p.grad[static_cast<size_t>(begin) * C + i] += n.grad[i];
    }
  });
}

DiffValue gather_rows(const DiffValue& x, std::vector<int> indices) {
  const int R = x.dim(0), C = x.dim(1);
  for (int i : indices)
    if (i < 0 || i >= R)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                  " out of range for " + shape_str(x.shape()));
  std::vector<double> out(indices.size() * static_cast<size_t>(C));
  for (size_t r = 0; r < indices.size(); ++r)
    std::memcpy(&out[r * C], &x.data()[static_cast<size_t>(indices[r]) * C],
                sizeof(double) * C);
  const int Rn = static_cast<int>(indices.size());
  return make_op({Rn, C}, std::move(out), {x}, [indices = std::move(indices), C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t r = 0; r < indices.size(); ++r)
        for (int c = 0; c < C; ++c)
          p.grad[static_cast<size_t>(indices[r]) * C + c] += n.grad[r * C + c];
    }
  });
}

DiffValue append_mean_row(const DiffValue& x) {
  const int R = x.dim(0), C = x.dim(1);
  if (R == 0) throw std::invalid_argument("append_mean_row: empty input");
  std::vector<double> out(x.data());
  out.resize(static_cast<size_t>(R + 1) * C, 0.0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      out[static_cast<size_t>(R) * C + c] += x.data()[static_cast<size_t>(r) * C + c] / R;
  return make_op({R + 1, C}, std::move(out), {x}, [R, C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          p.grad[static_cast<size_t>(r) * C + c] +=
              n.grad[static_cast<size_t>(r) * C + c] +
              n.grad[static_cast<size_t>(R) * C + c] / R;
    }
  });
}

DiffValue sum(const DiffValue& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return make_op({1}, {s}, {x}, [](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (double& g : p.grad) g += n.grad[0];
    }
  });
}

DiffValue mean_all(const DiffValue& x) { return scale(sum(x), 1.0 / x.size()); }

DiffValue mask_rows_grad(const DiffValue& x, std::vector<double> keep) {
  const int R = x.dim(0), C = x.dim(1);
  if (static_cast<int>(keep.size()) != R)
    throw std::invalid_argument("mask_rows_grad: mask length " + std::to_string(keep.size()) +
                                " vs rows " + std::to_string(R));
  return make_op(x.shape(), x.data(), {x}, [keep = std::move(keep), C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t r = 0; r < keep.size(); ++r)
        for (int c = 0; c < C; ++c)
          p.grad[r * C + c] += keep[r] * n.grad[r * C + c];
    }
  });
}

// ---- activations ----------------------------------------------------------

DiffValue relu(const DiffValue& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0 ? v : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        if (p.value[i] > 0) p.grad[i] += n.grad[i];
    }
  });
}

DiffValue sigmoid(const DiffValue& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) {
        const double s = n.value[i];
        p.grad[i] += n.grad[i] * s * (1.0 - s);
      }
    }
  });
}

DiffValue softmax_rows(const DiffValue& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("softmax_rows: expected 2-D, got " + shape_str(x.shape()));
  const int R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.data());
  for (int r = 0; r < R; ++r) {
    double* row = &out[static_cast<size_t>(r) * C];
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (int c = 0; c < C; ++c) row[c] /= z;
  }
  return make_op(x.shape(), std::move(out), {x}, [R, C](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (int r = 0; r < R; ++r) {
        const double* s = &n.value[static_cast<size_t>(r) * C];
        const double* g = &n.grad[static_cast<size_t>(r) * C];
        double dot = 0;
        for (int c = 0; c < C; ++c) dot += s[c] * g[c];
        for (int c = 0; c < C; ++c)
          p.grad[static_cast<size_t>(r) * C + c] += s[c] * (g[c] - dot);
      }
    }
  });
}

DiffValue log_clamped(const DiffValue& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = std::log(std::max(v, kLogFloor));
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        if (p.value[i] > kLogFloor) p.grad[i] += n.grad[i] / p.value[i];
    }
  });
}

// ---- convolution ----------------------------------------------------------

namespace {

// im2col for odd-kernel same-padding conv; rows = H*W, cols = KH*KW*Cin.
// Writes every cell of col exactly once, so the buffer may be uninitialized.
void im2col(const std::vector<double>& x, int H, int W, int Cin, int KH, int KW, int DH,
            int DW, double* col) {
  const int pad_h = (KH - 1) * DH / 2;
  const int pad_w = (KW - 1) * DW / 2;
  const int cols = KH * KW * Cin;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double* dst = col + (static_cast<size_t>(h) * W + w) * cols;
      for (int kh = 0; kh < KH; ++kh) {
        const int ih = h + kh * DH - pad_h;
        if (ih < 0 || ih >= H) {
          std::fill(dst + kh * KW * Cin, dst + (kh + 1) * KW * Cin, 0.0);
          continue;
        }
        for (int kw = 0; kw < KW; ++kw) {
          const int iw = w + kw * DW - pad_w;
          if (iw < 0 || iw >= W)
            std::fill(dst + (kh * KW + kw) * Cin, dst + (kh * KW + kw + 1) * Cin, 0.0);
          else
            std::memcpy(dst + (kh * KW + kw) * Cin,
                        &x[(static_cast<size_t>(ih) * W + iw) * Cin], sizeof(double) * Cin);
        }
      }
    }
}

void col2im_accum(const double* col, int H, int W, int Cin, int KH, int KW, int DH,
                  int DW, std::vector<double>& x) {
  const int pad_h = (KH - 1) * DH / 2;
  const int pad_w = (KW - 1) * DW / 2;
  const int cols = KH * KW * Cin;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const double* src = col + (static_cast<size_t>(h) * W + w) * cols;
      for (int kh = 0; kh < KH; ++kh) {
        const int ih = h + kh * DH - pad_h;
        if (ih < 0 || ih >= H) continue;
        for (int kw = 0; kw < KW; ++kw) {
          const int iw = w + kw * DW - pad_w;
          if (iw < 0 || iw >= W) continue;
          double* dst = &x[(static_cast<size_t>(ih) * W + iw) * Cin];
          const double* s = src + (kh * KW + kw) * Cin;
          for (int c = 0; c < Cin; ++c) dst[c] += s[c];
        }
      }
    }
}

}  // namespace

DiffValue conv2d(const DiffValue& x, const DiffValue& w, const DiffValue& bias, int dil_h,
                 int dil_w) {
  if (x.shape().size() != 3 || w.shape().size() != 4 || w.dim(0) % 2 == 0 ||
      w.dim(1) % 2 == 0 || w.dim(2) != x.dim(2) || bias.dim(0) != w.dim(3) || dil_h < 1 ||
      dil_w < 1)
    throw std::invalid_argument("conv2d: shapes " + shape_str(x.shape()) + ", " +
                                shape_str(w.shape()) + ", " + shape_str(bias.shape()));
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int KH = w.dim(0), KW = w.dim(1), Cout = w.dim(3);
  const int rows = H * W, cols = KH * KW * Cin;

  // kept alive for the backward pass; left uninitialized, im2col fills it
  std::shared_ptr<double[]> col(new double[static_cast<size_t>(rows) * cols]);
  im2col(x.data(), H, W, Cin, KH, KW, dil_h, dil_w, col.get());
  std::vector<double> out(static_cast<size_t>(rows) * Cout);
  blas::gemm(false, false, rows, Cout, cols, 1.0, col.get(), w.data().data(), 0.0,
             out.data());
  const auto& bd = bias.data();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < Cout; ++c) out[static_cast<size_t>(r) * Cout + c] += bd[c];

  return make_op({H, W, Cout}, std::move(out), {x, w, bias},
                 [H, W, Cin, KH, KW, dil_h, dil_w, Cout, rows, cols, col](Node& n) {
                   Node& px = *n.parents[0];
                   Node& pw = *n.parents[1];
                   Node& pb = *n.parents[2];
                   if (pw.requires_grad) {
                     pw.ensure_grad();
                     // w.grad += col^T * g
                     blas::gemm(true, false, cols, Cout, rows, 1.0, col.get(),
                                n.grad.data(), 1.0, pw.grad.data());
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     for (int r = 0; r < rows; ++r)
                       for (int c = 0; c < Cout; ++c)
                         pb.grad[c] += n.grad[static_cast<size_t>(r) * Cout + c];
                   }
                   if (px.requires_grad) {
                     px.ensure_grad();
                     // uninitialized scratch, gemm with beta 0 overwrites all of it
                     std::unique_ptr<double[]> gcol(
                         new double[static_cast<size_t>(rows) * cols]);
                     // gcol = g * w^T
                     blas::gemm(false, true, rows, cols, Cout, 1.0, n.grad.data(),
                                pw.value.data(), 0.0, gcol.get());
                     col2im_accum(gcol.get(), H, W, Cin, KH, KW, dil_h, dil_w, px.grad);
                   }
                 });
}

// ---- losses ---------------------------------------------------------------

DiffValue cross_entropy(const DiffValue& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("cross_entropy: expected 2-D logits, got " +
                                shape_str(logits.shape()));
  const int R = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(targets.size()) != R)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(R) + " rows");
  for (int r = 0; r < R; ++r)
    if (targets[r] < 0 || targets[r] >= C)
      throw std::invalid_argument("cross_entropy: invalid class index " +
                                  std::to_string(targets[r]) + " in row " + std::to_string(r));
  DiffValue p = softmax_rows(logits);
  double loss = 0;
  for (int r = 0; r < R; ++r)
    loss -= std::log(std::max(p.at(static_cast<std::int64_t>(r) * C + targets[r]), kLogFloor));
  loss /= R;
  return make_op({1}, {loss}, {p}, [R, C, targets](Node& n) {
    Node& pp = *n.parents[0];
    if (pp.requires_grad) {
      pp.ensure_grad();
      for (int r = 0; r < R; ++r) {
        const size_t i = static_cast<size_t>(r) * C + targets[r];
        pp.grad[i] += n.grad[0] * (-1.0 / (R * std::max(pp.value[i], kLogFloor)));
      }
    }
  });
}

DiffValue kl_div(const DiffValue& p_logits, const DiffValue& q_logits) {
  check_same_shape(p_logits, q_logits, "kl_div");
  const int R = p_logits.dim(0), C = p_logits.dim(1);
  DiffValue p = softmax_rows(p_logits);
  DiffValue q = softmax_rows(q_logits);
  double loss = 0;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const size_t i = static_cast<size_t>(r) * C + c;
      const double pv = std::max(p.at(i), kLogFloor);
      const double qv = std::max(q.at(i), kLogFloor);
      loss += pv * (std::log(pv) - std::log(qv));
    }
  loss /= R;
  return make_op({1}, {loss}, {p, q}, [R, C](Node& n) {
    Node& pp = *n.parents[0];
    Node& pq = *n.parents[1];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        const size_t i = static_cast<size_t>(r) * C + c;
        const double pv = std::max(pp.value[i], kLogFloor);
        const double qv = std::max(pq.value[i], kLogFloor);
        // clamped coordinates enter the loss as constants: no gradient there
        if (pp.requires_grad && pp.value[i] >= kLogFloor) {
          pp.ensure_grad();
          pp.grad[i] += n.grad[0] * (std::log(pv) - std::log(qv) + 1.0) / R;
        }
        if (pq.requires_grad && pq.value[i] >= kLogFloor) {
          pq.ensure_grad();
          pq.grad[i] += n.grad[0] * (-pv / qv) / R;
        }
      }
  });
}

DiffValue mse(const DiffValue& a, const DiffValue& b) {
  check_same_shape(a, b, "mse");
  const double n = static_cast<double>(a.size());
  double loss = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double r = a.at(i) - b.at(i);
    loss += r * r;
  }
  loss /= n;
  return make_op({1}, {loss}, {a, b}, [n](Node& nd) {
    Node& pa = *nd.parents[0];
    Node& pb = *nd.parents[1];
    for (size_t i = 0; i < pa.value.size(); ++i) {
      const double g = nd.grad[0] * 2.0 * (pa.value[i] - pb.value[i]) / n;
      if (pa.requires_grad) {
        pa.ensure_grad();
        pa.grad[i] += g;
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        pb.grad[i] -= g;
      }
    }
  });
}

DiffValue smooth_l1(const DiffValue& a, const DiffValue& b) {
  check_same_shape(a, b, "smooth_l1");
  const double n = static_cast<double>(a.size());
  double loss = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double r = a.at(i) - b.at(i);
    loss += std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
  }
  loss /= n;
  return make_op({1}, {loss}, {a, b}, [n](Node& nd) {
    Node& pa = *nd.parents[0];
    Node& pb = *nd.parents[1];
    for (size_t i = 0; i < pa.value.size(); ++i) {
      const double r = pa.value[i] - pb.value[i];
      const double d = std::abs(r) < 1.0 ? r : (r > 0 ? 1.0 : -1.0);
      const double g = nd.grad[0] * d / n;
      if (pa.requires_grad) {
        pa.ensure_grad();
        pa.grad[i] += g;
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        pb.grad[i] -= g;
      }
    }
  });
}

// ---- backward pass --------------------------------------------------------

void backward(const DiffValue& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  // Collect reachable nodes, then process in descending creation order. Node
  // ids are assigned at insertion, so this is a deterministic topological order
  // of the (acyclic) tape.
  std::vector<Node*> reach;
  std::vector<Node*> stack{loss.node()};
  std::unordered_map<Node*, bool> seen;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = true;
    reach.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(reach.begin(), reach.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });
  // Interior (non-leaf) grads are scratch for this pass; leaf grads accumulate
  // across passes.
  for (Node* n : reach)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  Node* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : reach)
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
}

}  // namespace sgtr
