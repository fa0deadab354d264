#pragma once

#include <cmath>
#include <span>
#include <string>
#include <unordered_map>

#include "memmlp/autodiff.hpp"

namespace memmlp {

template <typename T>
struct AdamWConfig {
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
    T weight_decay = static_cast<T>(1e-4);
};

// Decoupled-decay Adam. Weight decay is applied to the value before the
// bias-corrected moment update.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig<T> cfg = {}) : cfg_(cfg) {}

    const AdamWConfig<T>& config() const { return cfg_; }
    long step_count() const { return step_; }

    void step(std::span<Parameter<T>* const> params, T lr) {
        ++step_;
        const T bc1 = T{1} - std::pow(cfg_.beta1, static_cast<T>(step_));
        const T bc2 = T{1} - std::pow(cfg_.beta2, static_cast<T>(step_));
        for (Parameter<T>* p : params) {
            if (p->frozen) throw ContractError("adamw: frozen parameter '" + p->id + "'");
            Moments& m = moments_[p->id];
            if (m.m1.numel() == 0) {
                m.m1 = Tensor<T>::zeros(p->value.shape);
                m.m2 = Tensor<T>::zeros(p->value.shape);
            }
            for (std::size_t i = 0; i < p->value.numel(); ++i) {
                p->value.data[i] *= (T{1} - lr * cfg_.weight_decay);
                const T g = p->grad.data[i];
                m.m1.data[i] = cfg_.beta1 * m.m1.data[i] + (T{1} - cfg_.beta1) * g;
                m.m2.data[i] = cfg_.beta2 * m.m2.data[i] + (T{1} - cfg_.beta2) * g * g;
                const T mhat = m.m1.data[i] / bc1;
                const T vhat = m.m2.data[i] / bc2;
                p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    struct Moments {
        Tensor<T> m1, m2;
    };
    AdamWConfig<T> cfg_;
    std::unordered_map<std::string, Moments> moments_;
    long step_ = 0;
};

// Step-function schedule: lr0 until drop_at, lr1 afterwards.
inline double lr_schedule(long step, long drop_at = 225000, double lr0 = 3e-4, double lr1 = 1e-5) {
    if (step < 0) throw RangeError("lr_schedule: negative step");
    return step < drop_at ? lr0 : lr1;
}

// Milestone decay used for the prior: lr0 scaled by `factor` at each
// milestone epoch passed.
inline double milestone_lr(int epoch, double lr0, double factor, std::span<const int> milestones) {
    double lr = lr0;
    for (int m : milestones)
        if (epoch >= m) lr *= factor;
    return lr;
}

}  // namespace memmlp
