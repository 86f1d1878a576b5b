#include "nfuse/tape.hpp"

#include <algorithm>

#include "nfuse/error.hpp"

namespace nfuse {

template <typename T>
BasicTape<T>*& BasicTape<T>::active_slot() {
  thread_local BasicTape* slot = nullptr;
  return slot;
}

template <typename T>
BasicTape<T>* BasicTape<T>::active() {
  return active_slot();
}

template <typename T>
void BasicTape<T>::record(std::string op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                          BackwardFn backward) {
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
std::size_t BasicTape<T>::backward(BasicTensor<T> loss) {
  if (!loss.tracked()) fail(ErrorCategory::kArgument, "backward() called on an untracked tensor");
  if (loss.numel() != 1) {
    fail(ErrorCategory::kShape, "backward() needs a one-element loss, got shape " + shape_to_string(loss.shape()));
  }
  const bool recorded = std::any_of(nodes_.begin(), nodes_.end(),
                                    [&](const Node& n) { return n.output.shares_storage_with(loss); });
  if (!recorded) fail(ErrorCategory::kArgument, "backward() loss was not produced on this tape");

  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (in.tracked()) in.zero_grad();
    }
    node.output.zero_grad();
  }
  loss.mutable_grad()[0] = T(1);

  std::size_t replayed = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
    ++replayed;
  }
  return replayed;
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace nfuse
