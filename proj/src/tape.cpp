#include "lr/tape.hpp"

namespace lr {

void Tape::record(std::vector<Tensor> inputs, std::vector<bool> input_needs_grad,
                  const Tensor& output, std::function<void()> rule) {
    produced_.insert(output.id());
    nodes_.push_back(Node{std::move(inputs), std::move(input_needs_grad), output, std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !produced(loss)) {
        throw UsageError("backward: loss was not produced by this tape");
    }
    if (loss.size() != 1) {
        throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }

    // Fresh zero buffers for everything this tape touches.
    std::unordered_set<const void*> zeroed;
    auto zero_once = [&zeroed](Tensor& t) {
        if (zeroed.insert(t.id()).second) t.zero_grad();
    };
    for (Node& node : nodes_) {
        zero_once(node.output);
        for (size_t i = 0; i < node.inputs.size(); ++i) {
            if (node.input_needs_grad[i]) zero_once(node.inputs[i]);
        }
    }

    Tensor loss_mut = loss;
    loss_mut.grad_mut()[0] = Real{1};

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->rule) it->rule();
    }
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace lr
