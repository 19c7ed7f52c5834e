#pragma once

#include <functional>
#include <string>
#include <vector>

#include "segforge/tensor.hpp"

namespace segforge {

// Thread-local switch for tape recording. Evaluation passes run under a
// NoGradGuard so no graph is kept alive.
class GradMode {
 public:
  static bool enabled() noexcept { return flag(); }
  static void set_enabled(bool on) noexcept { flag() = on; }

 private:
  static bool& flag() noexcept {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// One recorded operation. The backward closure owns whatever forward-time
// context it needs and accumulates into the inputs' gradients, reading the
// gradient of the output.
struct TapeNode {
  std::string op_kind;
  std::vector<std::uint64_t> input_ids;
  std::uint64_t output_id = 0;
  std::function<void()> backward;
};

// Append-only record of the current forward pass. One tape per thread and
// scalar type; independent threads never share one.
template <typename T>
class Tape {
 public:
  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void push(TapeNode node) { nodes_.push_back(std::move(node)); }
  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

// True when an operation over `inputs` must be recorded.
template <typename T>
bool needs_tape(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Records `fn` as the backward of an op producing `output` from `inputs`.
// Marks the output as requiring a gradient.
template <typename T>
void record(std::string op_kind, std::initializer_list<const BasicTensor<T>*> inputs,
            BasicTensor<T>& output, std::function<void()> fn) {
  TapeNode node;
  node.op_kind = std::move(op_kind);
  for (const auto* t : inputs) {
    if (t && t->defined()) node.input_ids.push_back(t->id());
  }
  node.output_id = output.id();
  node.backward = std::move(fn);
  output.set_requires_grad(true);
  Tape<T>::active().push(std::move(node));
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// requires_grad tensor reachable from `loss`; the tape is cleared afterwards.
template <typename T>
void backward(BasicTensor<T>& loss) {
  auto& tape = Tape<T>::active();
  if (tape.empty()) throw ContractError("backward() called with an empty tape");
  if (loss.numel() != 1) {
    tape.clear();
    throw ContractError("backward() needs a scalar loss, got shape " + loss.shape().str());
  }
  loss.grad()[0] += T(1);
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) it->backward();
  tape.clear();
}

}  // namespace segforge
