#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "nfuse/tensor.hpp"

namespace nfuse {

// Define-by-run record of differentiable operations.
//
// Operations executed while a TapeScope is active append one node each,
// provided at least one input is tracked. backward() replays the nodes in
// reverse recording order. A tape is meant to live for one forward pass.
template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::string op;
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    BackwardFn backward;
  };

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  void record(std::string op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
              BackwardFn backward);

  // Resets every gradient reachable through the tape, seeds d(loss)/d(loss) = 1
  // and runs each node's backward rule once. Returns the number of nodes
  // replayed. Throws if the loss is untracked or not a single element.
  std::size_t backward(BasicTensor<T> loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // The tape that operations on this thread currently record into, if any.
  static BasicTape* active();

 private:
  template <typename>
  friend class BasicTapeScope;
  static BasicTape*& active_slot();

  std::vector<Node> nodes_;
};

// Makes a tape active for the current thread for the lifetime of the scope.
template <typename T>
class BasicTapeScope {
 public:
  explicit BasicTapeScope(BasicTape<T>& tape) : previous_(BasicTape<T>::active_slot()) {
    BasicTape<T>::active_slot() = &tape;
  }
  ~BasicTapeScope() { BasicTape<T>::active_slot() = previous_; }
  BasicTapeScope(const BasicTapeScope&) = delete;
  BasicTapeScope& operator=(const BasicTapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

using Tape = BasicTape<float>;
using TapeScope = BasicTapeScope<float>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace nfuse
