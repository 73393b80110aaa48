#include "mein/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace mein {

namespace {
thread_local bool g_recording = true;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }
bool NoGradGuard::recording() { return g_recording; }

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<Node<T>> node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::constant(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return from_node(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  std::vector<T> values(shape_numel(shape), T(0));
  auto t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = requires_grad;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T v) {
  return constant({1}, {v});
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  return s[0];
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  return s[1];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_string(node_->shape) + " is not a scalar");
  }
  return node_->value[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (node_->parents.size() != 0 || node_->backward) {
    throw GraphError("set_requires_grad: only leaf tensors can change their gradient flag");
  }
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (node_->value.size() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " + shape_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           std::vector<BasicTensor<T>> parents,
                           std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs = false;
  if (NoGradGuard::recording()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template class BasicTensor<float>;
template class BasicTensor<double>;

template BasicTensor<float> make_result(const char*, Shape, std::vector<float>,
                                        std::vector<BasicTensor<float>>,
                                        std::function<void(Node<float>&)>);
template BasicTensor<double> make_result(const char*, Shape, std::vector<double>,
                                         std::vector<BasicTensor<double>>,
                                         std::function<void(Node<double>&)>);

}  // namespace mein
