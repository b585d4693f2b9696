#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Handle of a recorded node: which tape, which slot.
struct NodeRef {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

// Dense row-major float64 array. Copies share the underlying buffer; use
// clone() for a deep copy. A tensor becomes part of the computation graph
// when it is watched by, or produced on, the thread's active Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  std::span<const double> data() const;
  // Writes go to the shared buffer. Only optimizers and initializers should
  // mutate, and never while a tape holds the tensor.
  std::span<double> mutable_data();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  const std::optional<NodeRef>& node() const { return node_; }
  void set_node(std::optional<NodeRef> node) { node_ = node; }

  Tensor clone() const;   // deep copy, detached
  Tensor detach() const;  // shared buffer, detached

  bool same_buffer(const Tensor& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
  std::optional<NodeRef> node_;
};

// Gradient slot handed to a backward closure; empty when that input does not
// need a gradient.
using GradSpan = std::span<double>;
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<GradSpan> input_grads)>;

class Gradients;

// Append-only record of operations for one reverse-mode sweep. Constructing a
// Tape makes it the active tape on the current thread until it is destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Register a leaf; the tensor's node handle is set in place.
  void watch(Tensor& leaf);
  bool tracks(const Tensor& t) const;

  // Record an op result. Inputs that are not tracked get an empty grad slot.
  Tensor record(Tensor result, std::span<const Tensor* const> inputs, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t serial() const { return serial_; }

  Gradients backward(const Tensor& loss);

 private:
  struct Node {
    std::vector<std::optional<std::size_t>> parents;
    std::size_t numel = 0;
    Shape shape;
    BackwardFn backward;  // empty for leaves
  };

  std::vector<Node> nodes_;
  std::uint64_t serial_;
  Tape* previous_;
  bool consumed_ = false;
};

// Result of Tape::backward: one gradient per node reached from the loss.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::uint64_t tape, std::vector<Shape> shapes,
            std::vector<std::vector<double>> grads);

  // Gradient w.r.t. a watched leaf (zeros if no gradient flowed to it).
  Tensor of(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;

 private:
  std::uint64_t tape_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

// True when an op on `inputs` should be recorded on the active tape.
bool any_tracked(std::initializer_list<const Tensor*> inputs);

}  // namespace dtq
