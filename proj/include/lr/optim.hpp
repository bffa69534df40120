#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lr/tensor.hpp"

namespace lr {

struct AdamConfig {
    Real lr = Real{1e-3};
    Real beta1 = Real{0.9};
    Real beta2 = Real{0.999};
    Real eps = Real{1e-8};
};

// First/second moment buffers plus the shared step counter, one entry per
// parameter in construction order.
class AdamState {
  public:
    explicit AdamState(std::span<const Tensor> params);

    int64_t step_count() const { return t_; }

  private:
    friend void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    int64_t t_ = 0;
};

// Bias-corrected Adam update in place. Parameters without a gradient buffer
// are treated as having zero gradient. Throws StateError if the state does
// not match the parameter list.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

}  // namespace lr
