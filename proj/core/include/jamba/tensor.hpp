#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace jamba {

enum class DType : std::uint8_t { kReal64, kReal32 };

std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view name);
std::size_t dtype_bytes(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major array of reals with an optional link into the reverse-mode
// computation record. Values are stored as double; real32 tensors hold values
// rounded to single precision after every producing operation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kReal64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kReal64);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            DType dtype = DType::kReal64);
  static Tensor scalar(double value, DType dtype = DType::kReal64);
  // Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values,
                          DType dtype = DType::kReal64);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Extent of an axis; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  std::span<const double> data() const;
  // Only valid on leaves; used by optimizers and initializers.
  std::span<double> mutable_data();
  double item() const;

  // Empty until something accumulates into it.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no computation record.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables recording for the lifetime of the guard (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gradient buffers of an op's inputs, indexed like the input list. A null
// entry means that input does not need a gradient.
class GradSinks {
 public:
  explicit GradSinks(std::vector<double*> sinks) : sinks_(std::move(sinks)) {}
  double* operator[](std::size_t i) const { return sinks_[i]; }
  std::size_t size() const { return sinks_.size(); }

 private:
  std::vector<double*> sinks_;
};

// Accumulates input gradients given the op output and its gradient.
using BackwardFn = std::function<void(std::span<const double> out,
                                      std::span<const double> grad_out,
                                      const GradSinks& sinks)>;

// Creates an op result. When recording is enabled and some input requires a
// gradient, `backward` is attached; otherwise it is dropped. The result dtype
// is real64 if any input is real64, unless `dtype` overrides it. Raises
// kNonFinite when a produced value is not finite.
Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::span<const Tensor> inputs, BackwardFn backward,
                 std::optional<DType> dtype = std::nullopt);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor that requires a gradient; recorded closures are released.
void backward(const Tensor& loss);

// Raises kNonFinite naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, std::string_view what);

}  // namespace jamba
