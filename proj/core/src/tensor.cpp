#include "jamba/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "jamba/errors.hpp"
#include "node.hpp"

namespace jamba {

namespace {

thread_local bool g_grad_enabled = true;

void round_to_float(std::vector<double>& values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, DType dtype,
                                        bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    fail(ErrorKind::kShapeMismatch, "tensor of shape " + shape_str(shape) + " given " +
                                        std::to_string(values.size()) + " values");
  }
  require_finite(values, "tensor construction");
  if (dtype == DType::kReal32) round_to_float(values);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) fail(ErrorKind::kInvalidArgument, "use of an undefined tensor");
  return *node;
}

}  // namespace

std::string_view to_string(DType dtype) {
  return dtype == DType::kReal64 ? "f64" : "f32";
}

DType parse_dtype(std::string_view name) {
  if (name == "f64" || name == "real64" || name == "float64") return DType::kReal64;
  if (name == "f32" || name == "real32" || name == "float32") return DType::kReal32;
  fail(ErrorKind::kInvalidArgument, "unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_bytes(DType dtype) { return dtype == DType::kReal64 ? 8 : 4; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

void require_finite(std::span<const double> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(ErrorKind::kNonFinite,
           std::string(what) + " produced a non-finite value at element " + std::to_string(i));
    }
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), dtype, false));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), dtype, false));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, DType dtype) {
  return Tensor(make_leaf(std::move(shape), std::move(values), dtype, false));
}

Tensor Tensor::scalar(double value, DType dtype) {
  return Tensor(make_leaf({}, {value}, dtype, false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values, DType dtype) {
  return Tensor(make_leaf(std::move(shape), std::move(values), dtype, true));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::size(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    fail(ErrorKind::kShapeMismatch, "axis " + std::to_string(axis) + " out of range for " +
                                        shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }
DType Tensor::dtype() const { return checked(node_).dtype; }
bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) fail(ErrorKind::kInvalidArgument, "requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked(node_).inputs.empty(); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) fail(ErrorKind::kInvalidArgument, "cannot mutate the output of an op");
  return node_->value;
}

double Tensor::item() const {
  const auto& n = checked(node_);
  if (n.value.size() != 1) {
    fail(ErrorKind::kShapeMismatch, "item() on tensor of shape " + shape_str(n.shape));
  }
  return n.value[0];
}

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  auto node = std::make_shared<detail::Node>();
  node->shape = n.shape;
  node->dtype = n.dtype;
  node->value = n.value;
  node->op = "leaf";
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::span<const Tensor> inputs, BackwardFn backward,
                 std::optional<DType> dtype) {
  if (values.size() != shape_numel(shape)) {
    fail(ErrorKind::kInternal, std::string(name) + " produced " + std::to_string(values.size()) +
                                   " values for shape " + shape_str(shape));
  }
  require_finite(values, name);

  DType out_dtype = DType::kReal32;
  bool any_input = false;
  bool needs_grad = false;
  for (const auto& t : inputs) {
    const auto& n = checked(t.node());
    any_input = true;
    if (n.dtype == DType::kReal64) out_dtype = DType::kReal64;
    needs_grad = needs_grad || n.requires_grad;
  }
  if (!any_input) out_dtype = DType::kReal64;
  if (dtype) out_dtype = *dtype;
  if (out_dtype == DType::kReal32) round_to_float(values);

  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->dtype = out_dtype;
  node->value = std::move(values);
  node->op = std::string(name);
  if (needs_grad && g_grad_enabled && backward) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  const auto& root = checked(loss.node());
  if (root.value.size() != 1) {
    fail(ErrorKind::kShapeMismatch, "backward() needs a scalar loss, got " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::unordered_set<detail::Node*> on_stack;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  on_stack.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (!child->requires_grad) continue;
      if (on_stack.count(child)) fail(ErrorKind::kInternal, "cycle in computation record");
      if (visited.insert(child).second) {
        on_stack.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      on_stack.erase(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    std::vector<double*> sinks;
    sinks.reserve(node->inputs.size());
    for (const auto& in : node->inputs) {
      sinks.push_back(in->requires_grad ? in->grad_buffer() : nullptr);
    }
    node->grad_buffer();
    node->backward(node->value, node->grad, GradSinks(std::move(sinks)));
  }
  // Release the record so intermediate buffers are freed with the loss.
  for (detail::Node* node : order) {
    if (!node->inputs.empty()) {
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

}  // namespace jamba
