#include "dtq/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dtq/errors.hpp"

namespace dtq {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_serial{1};

#ifndef NDEBUG
bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero dimension");
  }
  if (shape_numel(shape_) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(data.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank does not match shape " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw RangeError("index out of range for " + shape_str(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

Tensor Tensor::clone() const {
  if (!data_) return {};
  return Tensor(shape_, *data_, requires_grad_);
}

Tensor Tensor::detach() const {
  Tensor out = *this;
  out.node_.reset();
  return out;
}

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)), previous_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::watch(Tensor& leaf) {
  if (!leaf.defined()) throw ContractError("cannot watch an empty tensor");
  if (tracks(leaf)) return;
  Node node;
  node.numel = leaf.numel();
  node.shape = leaf.shape();
  nodes_.push_back(std::move(node));
  leaf.set_node(NodeRef{serial_, nodes_.size() - 1});
}

bool Tape::tracks(const Tensor& t) const {
  return t.node().has_value() && t.node()->tape == serial_;
}

Tensor Tape::record(Tensor result, std::span<const Tensor* const> inputs, BackwardFn backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Tensor* in : inputs) inputs_finite = inputs_finite && all_finite(in->data());
  if (inputs_finite && !all_finite(result.data())) {
    throw ContractError("non-finite value produced from finite inputs");
  }
#endif
  Node node;
  node.numel = result.numel();
  node.shape = result.shape();
  node.backward = std::move(backward);
  node.parents.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (tracks(*in)) {
      node.parents.emplace_back(in->node()->index);
    } else {
      node.parents.emplace_back(std::nullopt);
    }
  }
  nodes_.push_back(std::move(node));
  result.set_node(NodeRef{serial_, nodes_.size() - 1});
  return result;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!tracks(loss)) throw ContractError("loss is not on this tape");
  if (consumed_) throw ContractError("tape already consumed by a backward pass");
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  const std::size_t root = loss.node()->index;
  grads[root].assign(1, 1.0);

  std::vector<GradSpan> slots;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads[i].empty() || !node.backward) continue;
    slots.assign(node.parents.size(), GradSpan{});
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      if (!node.parents[p]) continue;
      const std::size_t parent = *node.parents[p];
      if (grads[parent].empty()) grads[parent].assign(nodes_[parent].numel, 0.0);
      slots[p] = GradSpan(grads[parent]);
    }
    node.backward(grads[i], slots);
    // Interior gradients are no longer needed once propagated.
    node.backward = nullptr;
    if (!node.parents.empty()) std::vector<double>().swap(grads[i]);
  }

  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& node : nodes_) shapes.push_back(node.shape);
  return Gradients(serial_, std::move(shapes), std::move(grads));
}

Gradients::Gradients(std::uint64_t tape, std::vector<Shape> shapes,
                     std::vector<std::vector<double>> grads)
    : tape_(tape), shapes_(std::move(shapes)), grads_(std::move(grads)) {}

bool Gradients::reached(const Tensor& leaf) const {
  return leaf.node() && leaf.node()->tape == tape_ && leaf.node()->index < grads_.size() &&
         !grads_[leaf.node()->index].empty();
}

Tensor Gradients::of(const Tensor& leaf) const {
  if (!leaf.node() || leaf.node()->tape != tape_) {
    throw ContractError("tensor was not watched on the tape that produced these gradients");
  }
  const std::size_t i = leaf.node()->index;
  if (grads_[i].empty()) return Tensor::zeros(shapes_[i]);
  return Tensor(shapes_[i], grads_[i]);
}

bool any_tracked(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [tape](const Tensor* t) { return t && tape->tracks(*t); });
}

}  // namespace dtq
