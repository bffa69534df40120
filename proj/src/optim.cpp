#include "lr/optim.hpp"

#include <cmath>

namespace lr {

AdamState::AdamState(std::span<const Tensor> params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor& p : params) {
        m_.emplace_back(static_cast<size_t>(p.size()), Real{0});
        v_.emplace_back(static_cast<size_t>(p.size()), Real{0});
    }
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
    if (params.size() != state.m_.size()) {
        throw StateError("adam_step: state holds " + std::to_string(state.m_.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (static_cast<size_t>(params[i].size()) != state.m_[i].size()) {
            throw StateError("adam_step: parameter " + std::to_string(i) + " has " +
                             std::to_string(params[i].size()) + " elements, state has " +
                             std::to_string(state.m_[i].size()));
        }
    }

    state.t_ += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.t_));

    for (size_t i = 0; i < params.size(); ++i) {
        auto pd = params[i].mutable_data();
        std::span<const Real> gd;
        if (params[i].has_grad()) gd = params[i].grad();
        auto& m = state.m_[i];
        auto& v = state.v_[i];
        for (size_t j = 0; j < pd.size(); ++j) {
            const Real g = gd.empty() ? Real{0} : gd[j];
            m[j] = cfg.beta1 * m[j] + (Real{1} - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (Real{1} - cfg.beta2) * g * g;
            const Real mhat = static_cast<Real>(m[j] / bc1);
            const Real vhat = static_cast<Real>(v[j] / bc2);
            pd[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace lr
