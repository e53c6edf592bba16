#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace karma {

using Shape = std::vector<std::size_t>;

constexpr std::size_t kMaxRank = 3;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// A rank-3 view of a shape: rank 1 is (1, 1, n), rank 2 is (1, m, n).
/// Row-wise primitives treat the last axis as the feature axis and everything
/// before it as rows; batched primitives treat axis 0 of a rank-3 tensor as the batch.
struct Extents3 {
  std::size_t batch;
  std::size_t rows;
  std::size_t cols;
};
Extents3 extents3(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
};

/// Shared handle to a dense row-major fp64 array of rank 1..3.
///
/// Values are fixed once an operation has produced them; only gradient buffers and
/// parameter storage (through `mutable_data`, used by optimizers and initializers)
/// change afterwards. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  /// Throws ShapeError if the buffer length disagrees with the shape and
  /// ContractError if any element is not finite.
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }
  Extents3 extents() const { return extents3(impl_->shape); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() const { return impl_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() const { return impl_->grad; }
  void zero_grad() const;

  /// Deep copy of the values without gradient tracking.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  std::uint64_t tape_id() const { return impl_->tape_id; }

  /// Internal: used by primitives and the tape.
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  void bind_tape(std::uint64_t id) { impl_->tape_id = id; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of differentiable operations.
///
/// Operations record a node only when a tape is active on the calling thread and at
/// least one input requires a gradient. `backward` replays nodes in reverse creation
/// order exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::string_view op, Tensor output, BackwardFn fn);
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::string_view op;
    Tensor output;
    BackwardFn backward;
  };
  std::uint64_t id_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

/// Makes a tape the active one for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  static Tape* active();

 private:
  Tape* previous_;
};

/// Disables recording on the current thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Reverse-mode sweep from a scalar loss recorded on the active tape.
void backward(const Tensor& loss);

namespace detail {

/// Allocates an op output. It tracks gradients iff a tape is active and any input does.
Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs);
Tensor make_output(Shape shape, std::span<const Tensor> inputs);
/// Records `fn` on the active tape when `output` tracks gradients.
void record(std::string_view op, const Tensor& output, Tape::BackwardFn fn);

}  // namespace detail

}  // namespace karma
