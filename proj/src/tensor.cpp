#include "dpf/tensor.h"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dpf {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{1};

template <typename T>
std::vector<T>& as_vec(Buffer& b) {
  return std::get<std::vector<T>>(b);
}

void add_into(Buffer& dst, const Buffer& src) {
  std::visit(
      [&](auto& d) {
        using V = std::decay_t<decltype(d)>;
        const auto& s = std::get<V>(src);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
      },
      dst);
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::kF32 ? "f32" : "f64"; }

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace detail {

Buffer make_buffer(DType dtype, std::size_t n, double fill) {
  if (dtype == DType::kF32) return std::vector<float>(n, static_cast<float>(fill));
  return std::vector<double>(n, fill);
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, DType dtype, Buffer data, std::string op,
                   std::vector<Tensor> inputs, Node::BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) needs = true;
    }
  }
  if (needs) {
    auto node = std::make_shared<Node>();
    node->op = std::move(op);
    node->backward = std::move(backward);
    node->seq = g_next_seq.fetch_add(1);
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.impl());
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(shape, 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in shape " + shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data = detail::make_buffer(dtype, static_cast<std::size_t>(shape.numel()), value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape.str());
  }
  Tensor t = zeros(shape, dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1, 1, 1, 1}, value, dtype); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

DType Tensor::dtype() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->dtype;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->grad_fn && !value) {
    throw GraphError("cannot clear requires_grad on a non-leaf tensor; use stop_gradient");
  }
  impl_->requires_grad = value;
  return *this;
}

Tensor& Tensor::retain_grad() {
  impl_->retain_grad = true;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

template <typename T>
std::span<T> Tensor::data() {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) +
                     ", requested " + dtype_name(dtype_of<T>()));
  }
  return std::span<T>(as_vec<T>(impl_->data));
}

template <typename T>
std::span<const T> Tensor::data() const {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) +
                     ", requested " + dtype_name(dtype_of<T>()));
  }
  return std::span<const T>(std::get<std::vector<T>>(impl_->data));
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return at(0);
}

double Tensor::at(std::int64_t flat) const {
  return std::visit([&](const auto& v) { return static_cast<double>(v.at(flat)); },
                    impl_->data);
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = shape();
  return at(((n * s.c + c) * s.h + h) * s.w + w);
}

void Tensor::set(std::int64_t flat, double value) {
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v.at(flat) = static_cast<T>(value);
      },
      impl_->data);
}

std::vector<double> Tensor::values() const {
  return std::visit(
      [](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl_->data);
}

void Tensor::copy_values_from(const Tensor& other) {
  if (other.shape() != shape()) {
    throw ShapeError("copy_values_from: shape " + other.shape().str() + " vs " +
                     shape().str());
  }
  std::visit(
      [&](auto& dst) {
        using T = typename std::decay_t<decltype(dst)>::value_type;
        std::visit(
            [&](const auto& src) {
              for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
            },
            other.impl_->data);
      },
      impl_->data);
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

Tensor Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = *impl_->grad;
  return Tensor(std::move(impl));
}

std::vector<double> Tensor::grad_values() const {
  if (!has_grad()) return std::vector<double>(static_cast<std::size_t>(numel()), 0.0);
  return grad().values();
}

void Tensor::zero_grad() { impl_->grad.reset(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
  Tensor out = zeros(shape(), dtype);
  out.copy_values_from(*this);
  return out;
}

void Tensor::backward(BackwardOptions options) const {
  if (!impl_) throw std::logic_error("backward on undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape().str());
  }
  if (!impl_->requires_grad) {
    throw GraphError("backward on a tensor that does not require grad");
  }

  // Collect the reachable subgraph; nodes and leaves needing gradients.
  // Holding shared_ptrs keeps every impl alive while nodes release their inputs.
  std::vector<std::shared_ptr<detail::TensorImpl>> alive;
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::shared_ptr<detail::TensorImpl>> stack{impl_};
  while (!stack.empty()) {
    std::shared_ptr<detail::TensorImpl> sp = std::move(stack.back());
    stack.pop_back();
    detail::TensorImpl* t = sp.get();
    if (t == nullptr || !t->requires_grad || !seen.insert(t).second) continue;
    order.push_back(t);
    alive.push_back(std::move(sp));
    if (t->grad_fn) {
      if (t->grad_fn->consumed) {
        throw GraphError("graph node '" + t->grad_fn->op +
                         "' was already consumed by a previous backward; rebuild the graph");
      }
      for (const auto& in : t->grad_fn->inputs) stack.push_back(in);
    }
  }
  if (!options.accumulate) {
    for (detail::TensorImpl* t : order) {
      if (!t->grad_fn && t->grad) {
        throw GraphError(
            "leaf tensor " + t->shape.str() +
            " already holds a gradient; call zero_grad() or pass accumulate=true");
      }
    }
  }

  // Inputs are always recorded before outputs, so descending sequence number
  // is a valid reverse topological order.
  std::vector<detail::TensorImpl*> nodes;
  for (detail::TensorImpl* t : order) {
    if (t->grad_fn) nodes.push_back(t);
  }
  std::sort(nodes.begin(), nodes.end(),
            [](auto* a, auto* b) { return a->grad_fn->seq > b->grad_fn->seq; });

  std::unordered_map<detail::TensorImpl*, Buffer> pending;
  pending.emplace(impl_.get(), detail::make_buffer(impl_->dtype, 1, 1.0));

  auto deliver = [&](detail::TensorImpl* target, const Buffer& g) {
    if (target == nullptr || !target->requires_grad) return;
    if (!target->grad_fn) {
      if (target->grad) {
        add_into(*target->grad, g);
      } else {
        target->grad = std::make_unique<Buffer>(g);
      }
      return;
    }
    auto it = pending.find(target);
    if (it == pending.end()) {
      pending.emplace(target, g);
    } else {
      add_into(it->second, g);
    }
  };

  for (detail::TensorImpl* t : nodes) {
    auto it = pending.find(t);
    auto node = t->grad_fn;
    if (it != pending.end()) {
      Buffer out_grad = std::move(it->second);
      pending.erase(it);
      if (t->retain_grad) t->grad = std::make_unique<Buffer>(out_grad);
      node->backward(out_grad, [&](std::size_t input, const Buffer& g) {
        deliver(node->inputs.at(input).get(), g);
      });
    }
    node->consumed = true;
    node->backward = nullptr;
    node->inputs.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

}  // namespace dpf
