#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace metacritic {

/// Thrown when an operation rejects its inputs (shape mismatch, bad
/// attribute, non-finite value where finiteness is required).
class OpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

/// Differentiable operations. Composite entries (convolutions, pooling,
/// normalization, mean) expand into the primitive ones when applied.
enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  Reciprocal,
  Exp,
  Log,
  Sqrt,
  Matmul,
  MatmulBt,
  MatmulTa,
  Transpose,
  Relu,
  ReluMask,
  Sigmoid,
  Softmax,
  LogSoftmax,
  NllLoss,
  MseLoss,
  Sum,
  Mean,
  SumAxis,
  BroadcastTo,
  SumToShape,
  Reshape,
  Concat,
  SliceAxis,
  PadAxis,
  GatherPad,
  ScatterPad,
  Conv1d,
  Conv2d,
  MaxPool2d,
  AvgPool2d,
  GlobalAvgPool,
  BatchNormRunning,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Reciprocal: return "reciprocal";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Matmul: return "matmul";
    case Op::MatmulBt: return "matmul_bt";
    case Op::MatmulTa: return "matmul_ta";
    case Op::Transpose: return "transpose";
    case Op::Relu: return "relu";
    case Op::ReluMask: return "relu_mask";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::NllLoss: return "nll_loss";
    case Op::MseLoss: return "mse_loss";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumAxis: return "sum_axis";
    case Op::BroadcastTo: return "broadcast_to";
    case Op::SumToShape: return "sum_to_shape";
    case Op::Reshape: return "reshape";
    case Op::Concat: return "concat";
    case Op::SliceAxis: return "slice_axis";
    case Op::PadAxis: return "pad_axis";
    case Op::GatherPad: return "gather_pad";
    case Op::ScatterPad: return "scatter_pad";
    case Op::Conv1d: return "conv1d";
    case Op::Conv2d: return "conv2d";
    case Op::MaxPool2d: return "max_pool2d";
    case Op::AvgPool2d: return "avg_pool2d";
    case Op::GlobalAvgPool: return "global_avg_pool";
    case Op::BatchNormRunning: return "batch_norm_running";
  }
  return "?";
}

using AttrValue = std::variant<std::int64_t, double, std::string,
                               std::vector<std::int64_t>, std::vector<double>>;

/// Attribute map for an operation (kernel sizes, pads, axes, ...).
class AttrMap {
 public:
  AttrMap() = default;

  AttrMap& set(const std::string& key, AttrValue value) {
    entries_[key] = std::move(value);
    return *this;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::int64_t get_int(const std::string& key) const {
    return std::get<std::int64_t>(at(key));
  }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::get<std::int64_t>(it->second);
  }
  double get_double(const std::string& key) const {
    return std::get<double>(at(key));
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : std::get<double>(it->second);
  }
  const std::vector<std::int64_t>& get_ints(const std::string& key) const {
    return std::get<std::vector<std::int64_t>>(at(key));
  }
  const std::vector<double>& get_doubles(const std::string& key) const {
    return std::get<std::vector<double>>(at(key));
  }
  const std::string& get_string(const std::string& key) const {
    return std::get<std::string>(at(key));
  }

 private:
  const AttrValue& at(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw OpError("missing attribute '" + key + "'");
    return it->second;
  }

  std::map<std::string, AttrValue> entries_;
};

class GraphNode;

/// N-dimensional array of doubles, optionally attached to a graph node.
/// Value semantics: copies share immutable storage. A Tensor without a
/// node behaves as a constant under differentiation.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
         std::shared_ptr<GraphNode> node = nullptr)
      : shape_(std::move(shape)), data_(std::move(data)), node_(std::move(node)) {
    if (!data_ || data_->size() != numel_of(shape_)) {
      throw OpError("tensor: storage size does not match shape " +
                    shape_str(shape_));
    }
  }

  static Tensor from_values(Shape shape, std::vector<double> values) {
    auto data = std::make_shared<std::vector<double>>(std::move(values));
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel_of(shape);
    return from_values(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = numel_of(shape);
    return from_values(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return from_values({1}, {value}); }

  /// Leaf with a graph node; gradients can be requested for it.
  static Tensor leaf(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  const std::vector<double>& values() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& storage() const {
    return data_;
  }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (numel() != 1) {
      throw OpError("item: tensor " + shape_str(shape_) + " is not scalar");
    }
    return (*data_)[0];
  }

  const std::shared_ptr<GraphNode>& node() const { return node_; }
  bool has_node() const { return static_cast<bool>(node_); }

  /// Same values, no graph history.
  Tensor detached() const { return Tensor(shape_, data_); }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<GraphNode> node_;
};

/// One recorded operation. Holds the op id, its attributes, the input
/// tensors (whose own nodes form the acyclic graph), and the produced
/// values, which backward rules may reconstruct as a Tensor.
class GraphNode : public std::enable_shared_from_this<GraphNode> {
 public:
  GraphNode(Op op, AttrMap attrs, std::vector<Tensor> inputs, Shape out_shape,
            std::shared_ptr<const std::vector<double>> out_data)
      : op_(op),
        attrs_(std::move(attrs)),
        inputs_(std::move(inputs)),
        out_shape_(std::move(out_shape)),
        out_data_(std::move(out_data)) {}

  Op op() const { return op_; }
  const AttrMap& attrs() const { return attrs_; }
  const std::vector<Tensor>& inputs() const { return inputs_; }
  const Tensor& input(std::size_t i) const { return inputs_[i]; }
  const Shape& out_shape() const { return out_shape_; }

  /// The node's output as a tensor that still points at this node.
  Tensor output() {
    return Tensor(out_shape_, out_data_, shared_from_this());
  }

 private:
  Op op_;
  AttrMap attrs_;
  std::vector<Tensor> inputs_;
  Shape out_shape_;
  std::shared_ptr<const std::vector<double>> out_data_;
};

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Scoped switch for graph recording. With recording off, operations
/// produce plain constant tensors; backward passes run under `GradMode
/// guard(retain)` so retained gradients are themselves differentiable.
class GradMode {
 public:
  explicit GradMode(bool enabled) : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = enabled;
  }
  ~GradMode() { detail::grad_mode_flag() = previous_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

inline Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  auto data = std::make_shared<std::vector<double>>(std::move(values));
  auto node = std::make_shared<GraphNode>(Op::Leaf, AttrMap{},
                                          std::vector<Tensor>{}, shape, data);
  return Tensor(std::move(shape), std::move(data), std::move(node));
}

}  // namespace metacritic
