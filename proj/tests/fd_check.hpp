#pragma once

#include <functional>
#include <vector>

#include <memmlp/autodiff.hpp>

// Central finite-difference gradient oracle. A builder constructs the scalar
// loss from leaf variables; the analytic gradient from the tape is compared
// against (f(x+h) - f(x-h)) / 2h per component at f64.

namespace testutil {

using memmlp::Tape;
using memmlp::Tensor;
using memmlp::Var;

using LossBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    return tape.value(build(tape, vars)).data[0];
}

inline double fd_rel_err_component(const LossBuilder& build,
                                   std::vector<Tensor<double>>& inputs, std::size_t i,
                                   std::size_t c, double analytic, double h) {
    const double x0 = inputs[i].data[c];
    inputs[i].data[c] = x0 + h;
    const double fp = eval_loss(build, inputs);
    inputs[i].data[c] = x0 - h;
    const double fm = eval_loss(build, inputs);
    inputs[i].data[c] = x0;
    const double fd = (fp - fm) / (2.0 * h);
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4});
}

// Returns the worst relative error across all input components. A component
// that disagrees is re-checked at a much smaller step: L1 terms have kinks,
// and a straddled kink vanishes once h drops below the kink distance, while
// a genuinely wrong gradient disagrees at every step size.
inline double fd_max_rel_error(const LossBuilder& build, std::vector<Tensor<double>> inputs) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var loss = build(tape, vars);
    if (tape.value(loss).numel() != 1) throw memmlp::ContractError("fd: loss not scalar");
    tape.backward(loss);
    std::vector<Tensor<double>> analytic;
    for (Var v : vars) analytic.push_back(tape.grad(v));

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < inputs[i].numel(); ++c) {
            const double a = analytic[i].data[c];
            const double h = 1e-5 * std::max(1.0, std::abs(inputs[i].data[c]));
            double err = fd_rel_err_component(build, inputs, i, c, a, h);
            if (err > 5e-5) err = std::min(err, fd_rel_err_component(build, inputs, i, c, a, h / 64.0));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// Scalarize an arbitrary-shaped output with fixed weights so every output
// component contributes to the gradient. The weights must be drawn once per
// check; the loss builder is re-evaluated by the differencing loop and has
// to stay a pure function.
inline Var weighted_sum(Tape<double>& tape, Var out, const Tensor<double>& w) {
    return tape.sum(tape.mul(out, tape.input(w)));
}

inline Tensor<double> draw_weights(std::vector<std::size_t> shape, memmlp::Rng& rng) {
    Tensor<double> w(std::move(shape));
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
    return w;
}

}  // namespace testutil
