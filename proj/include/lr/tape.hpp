#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "lr/tensor.hpp"

namespace lr {

// Records primitive operations in execution order. Appending preserves the
// topological invariant (an operation's inputs always exist before it), so
// backward is a single reverse sweep. Gradient buffers of every tensor the
// tape touches are zeroed at the start of backward; running backward twice
// therefore reproduces, not doubles, the gradients.
class Tape {
  public:
    // `rule` reads output.grad() and accumulates into the inputs' grads.
    // Called once per node during the reverse sweep.
    void record(std::vector<Tensor> inputs, std::vector<bool> input_needs_grad,
                const Tensor& output, std::function<void()> rule);

    // True if `t` was produced by an operation recorded on this tape.
    bool produced(const Tensor& t) const {
        return produced_.count(t.id()) != 0;
    }

    // A tensor participates in differentiation if it is a marked leaf or an
    // intermediate of this tape.
    bool wants_grad(const Tensor& t) const {
        return t.requires_grad() || produced(t);
    }

    size_t node_count() const { return nodes_.size(); }

    void backward(const Tensor& loss);

  private:
    struct Node {
        std::vector<Tensor> inputs;
        std::vector<bool> input_needs_grad;
        Tensor output;
        std::function<void()> rule;
    };

    std::vector<Node> nodes_;
    std::unordered_set<const void*> produced_;
};

// Reverse-topological gradient accumulation from a scalar loss produced by
// this tape. Populates .grad() on every tensor that wants a gradient.
void backward(Tape& tape, const Tensor& loss);

}  // namespace lr
