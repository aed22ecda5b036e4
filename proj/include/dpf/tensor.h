#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dpf {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

const char* dtype_name(DType dtype);

/// Rank-4 NCHW extent. Every tensor in the library has exactly this rank.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Raised for any shape/dtype contract violation of an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a consumed graph is reused or gradients would be clobbered.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

namespace detail {

struct TensorImpl;

/// One recorded operation on the tape. `backward` receives the gradient of the
/// node's output and emits gradients for each input through `emit`.
struct Node {
  using Emit = std::function<void(std::size_t input, const Buffer& grad)>;
  using BackwardFn = std::function<void(const Buffer& out_grad, const Emit& emit)>;

  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  std::uint64_t seq = 0;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::kF32;
  Buffer data;
  std::unique_ptr<Buffer> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  std::shared_ptr<Node> grad_fn;
};

Buffer make_buffer(DType dtype, std::size_t n, double fill = 0.0);

}  // namespace detail

struct BackwardOptions {
  /// Add into gradients left over from a previous backward instead of rejecting.
  bool accumulate = false;
};

/// Reference-semantics handle onto a dense NCHW buffer that may participate in
/// the define-by-run differentiation tape. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kF32);
  static Tensor full(Shape shape, double value, DType dtype = DType::kF32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::kF32);
  static Tensor scalar(double value, DType dtype = DType::kF32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  DType dtype() const;
  std::int64_t numel() const { return shape().numel(); }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  /// Keep the gradient of a non-leaf tensor after backward.
  Tensor& retain_grad();
  bool is_leaf() const;

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  double item() const;
  double at(std::int64_t flat) const;
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  void set(std::int64_t flat, double value);
  std::vector<double> values() const;
  void copy_values_from(const Tensor& other);

  bool has_grad() const;
  /// Gradient as a detached tensor; throws if none was computed.
  Tensor grad() const;
  std::vector<double> grad_values() const;
  void zero_grad();

  /// Deep copy of values, no graph history.
  Tensor clone() const;
  Tensor to(DType dtype) const;

  void backward(BackwardOptions options = {}) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::kF32) return f(float{});
  return f(double{});
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::kF32;
  } else {
    static_assert(std::is_same_v<T, double>);
    return DType::kF64;
  }
}

namespace detail {

/// Create the output tensor of an op and, if any input needs a gradient and
/// grad mode is on, attach a tape node.
Tensor make_result(Shape shape, DType dtype, Buffer data, std::string op,
                   std::vector<Tensor> inputs, Node::BackwardFn backward);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace dpf
