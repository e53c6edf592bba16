#include "karma/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "karma/error.hpp"

namespace karma {
namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got shape " +
                     to_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Extents3 extents3(const Shape& shape) {
  switch (shape.size()) {
    case 1:
      return {1, 1, shape[0]};
    case 2:
      return {1, shape[0], shape[1]};
    case 3:
      return {shape[0], shape[1], shape[2]};
    default:
      throw ShapeError("unsupported rank for shape " + to_string(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(element_count(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (element_count(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(element_count(shape)) +
                     " elements, buffer has " + std::to_string(data.size()));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw ContractError("non-finite tensor element at flat index " + std::to_string(i));
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return impl_->data[0];
}

void Tensor::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

void Tape::record(std::string_view op, Tensor output, BackwardFn fn) {
  if (consumed_) throw ContractError("cannot record '" + std::string(op) + "' on a consumed tape");
  nodes_.push_back(Node{op, std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad() || loss.tape_id() != id_) {
    throw ContractError("loss was not produced by this tape");
  }
  if (!std::isfinite(loss.item())) throw ContractError("loss is not finite");
  consumed_ = true;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
  nodes_.clear();
  nodes_.shrink_to_fit();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* TapeScope::active() { return g_active_tape; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = TapeScope::active();
  if (tape == nullptr) throw ContractError("backward called without an active tape");
  tape->backward(loss);
}

namespace detail {

Tensor make_output(Shape shape, std::span<const Tensor> inputs) {
  bool track = false;
  if (g_active_tape != nullptr) {
    track = std::any_of(inputs.begin(), inputs.end(),
                        [](const Tensor& t) { return t.requires_grad(); });
  }
  return Tensor::zeros(std::move(shape), track);
}

Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool track = false;
  if (g_active_tape != nullptr) {
    for (const Tensor* t : inputs) track = track || t->requires_grad();
  }
  return Tensor::zeros(std::move(shape), track);
}

void record(std::string_view op, const Tensor& output, Tape::BackwardFn fn) {
  if (!output.requires_grad()) return;
  Tape* tape = g_active_tape;
  // make_output only tracks under an active tape, so tape is non-null here.
  Tensor out = output;
  out.bind_tape(tape->id());
  tape->record(op, std::move(out), std::move(fn));
}

}  // namespace detail

}  // namespace karma
