#pragma once

// Dense double-precision tensors with a minimal reverse-mode autodiff tape.
// Every trainable operation in the repo is composed from these primitives.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sgtr {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order, fixes backward traversal order
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads grad, accumulates into parents

  void ensure_grad();
};

}  // namespace detail

// Shared handle to a node of the computation graph. Copies alias the same
// underlying tensor.
class DiffValue {
 public:
  DiffValue() = default;

  static DiffValue constant(Shape shape, std::vector<double> data);
  static DiffValue param(Shape shape, std::vector<double> data);
  static DiffValue zeros(Shape shape, bool requires_grad = false);
  static DiffValue scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& grad() const { return n_->grad; }
  std::vector<double>& grad() { return n_->grad; }

  double item() const;  // scalar tensors only
  double at(std::int64_t i) const { return n_->value[i]; }

  void zero_grad();

  detail::Node* node() const { return n_.get(); }
  std::shared_ptr<detail::Node> shared_node() const { return n_; }

 private:
  explicit DiffValue(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node> n_;

  friend DiffValue make_op(Shape shape, std::vector<double> value,
                           std::vector<DiffValue> parents,
                           std::function<void(detail::Node&)> backward_fn);
};

// Internal helper for defining new ops; exposed so modules can add
// special-purpose ops (gather, neighbor-max, ...) without touching this file.
DiffValue make_op(Shape shape, std::vector<double> value,
                  std::vector<DiffValue> parents,
                  std::function<void(detail::Node&)> backward_fn);

// ---- arithmetic -----------------------------------------------------------

DiffValue add(const DiffValue& a, const DiffValue& b);
DiffValue sub(const DiffValue& a, const DiffValue& b);
DiffValue mul(const DiffValue& a, const DiffValue& b);  // element-wise
DiffValue scale(const DiffValue& a, double k);
DiffValue matmul(const DiffValue& a, const DiffValue& b);
DiffValue add_bias_rows(const DiffValue& x, const DiffValue& bias);
DiffValue reshape(const DiffValue& x, Shape shape);
DiffValue transpose(const DiffValue& x);  // 2-D
DiffValue scale_rows(const DiffValue& x, const DiffValue& s);  // x[r,c] * s[r]
DiffValue concat_cols(const std::vector<DiffValue>& parts);
DiffValue concat_rows(const std::vector<DiffValue>& parts);
DiffValue slice_rows(const DiffValue& x, int begin, int end);
DiffValue gather_rows(const DiffValue& x, std::vector<int> indices);
DiffValue append_mean_row(const DiffValue& x);
DiffValue sum(const DiffValue& x);
DiffValue mean_all(const DiffValue& x);
// Identity forward; backward multiplies row r of the incoming gradient by
// keep[r] (0 or 1). Carrier of the 1-hop gradient restriction.
DiffValue mask_rows_grad(const DiffValue& x, std::vector<double> keep);

// ---- activations ----------------------------------------------------------

DiffValue relu(const DiffValue& x);
DiffValue sigmoid(const DiffValue& x);
DiffValue softmax_rows(const DiffValue& x);  // 2-D, max-subtracted
DiffValue log_clamped(const DiffValue& x);   // log(max(x, kLogFloor))

// ---- convolution ----------------------------------------------------------

// x: {H,W,Cin}, w: {KH,KW,Cin,Cout} with odd KH/KW, bias: {Cout}; same padding,
// stride 1, optional per-axis dilation.
DiffValue conv2d(const DiffValue& x, const DiffValue& w, const DiffValue& bias,
                 int dil_h = 1, int dil_w = 1);

// ---- losses (scalar outputs) ----------------------------------------------

inline constexpr double kLogFloor = 1e-12;  // clamp for log/division inputs

DiffValue cross_entropy(const DiffValue& logits, const std::vector<int>& targets);
DiffValue kl_div(const DiffValue& p_logits, const DiffValue& q_logits);
DiffValue mse(const DiffValue& a, const DiffValue& b);
DiffValue smooth_l1(const DiffValue& a, const DiffValue& b);

// ---- backward pass --------------------------------------------------------

// Populates grad of every reachable requires_grad node. Repeated calls
// without zeroing accumulate.
void backward(const DiffValue& loss);

}  // namespace sgtr
