#pragma once

#include <memmlp/model.hpp>
#include <memmlp/synth.hpp>

// Shared tiny-config fixture: prior + model + one window sample with a fixed
// memory context and fixed blend tensors, so the loss is a pure function of
// the model parameters (what the finite-difference sweeps need).

namespace testutil {

using namespace memmlp;

template <typename T>
struct TinySetup {
    MemMLPConfig mcfg;
    VqVaeConfig pcfg;
    Skeleton skel = default_skeleton();
    MemMLP<T> model;
    VqVae<T> prior;
    WindowSample<T> sample;
    MemoryContext<T> ctx;
    BlendTensors<T> blend;
};

inline MemMLPConfig tiny_model_cfg() {
    MemMLPConfig cfg;
    cfg.t_window = 4;
    cfg.d = 8;
    cfg.depth = 2;
    cfg.conv_kernel = 3;
    cfg.memory_layers = {2};
    cfg.predictor_depth = 1;
    cfg.latent = 6;
    return cfg;
}

inline VqVaeConfig tiny_prior_cfg() {
    VqVaeConfig cfg;
    cfg.t_window = 4;
    cfg.width = 12;
    cfg.l_enc = 2;
    cfg.l_dec = 1;
    cfg.latent = 6;
    cfg.codebook = 4;
    return cfg;
}

template <typename T>
TinySetup<T> make_tiny_setup(std::uint64_t seed) {
    TinySetup<T> s{tiny_model_cfg(),
                   tiny_prior_cfg(),
                   default_skeleton(),
                   MemMLP<T>::create(tiny_model_cfg(), seed),
                   VqVae<T>::create(tiny_prior_cfg(), seed + 1),
                   {},
                   {},
                   {}};
    s.prior.freeze();
    const MotionClip clip = synth_generate(SynthKind::walk, seed, 0.5, 60.0, s.skel);
    std::vector<MotionClip> clips{clip};
    auto data = make_dataset<T>(clips, s.skel, s.mcfg.t_window, 9);
    s.sample = data.samples.at(0);
    auto [k, e] = s.prior.encode_quantize(s.sample.x_prev, s.sample.target_prev);
    s.ctx = MemoryContext<T>{s.sample.x_prev, s.sample.target_prev, std::move(e)};
    Rng blend_rng(seed + 2);
    s.blend = blend_sampled<T>(s.mcfg, blend_rng);
    return s;
}

// Full training loss of the fixed sample. Pure in the model parameters.
template <typename T>
double tiny_loss_value(TinySetup<T>& s) {
    Tape<T> tape;
    auto out = s.model.forward(tape, tape.input(s.sample.x), &s.ctx, &s.blend);
    auto [gt_rot, gt_pos] = split_target(s.sample.target);
    Var gr = tape.input(std::move(gt_rot));
    Var gp = tape.input(std::move(gt_pos));
    std::array<Var, 4> losses{loss_theta(tape, out.rot, gr),
                              loss_rot_velocity(tape, out.rot, gr),
                              loss_position(tape, out.pos, gp),
                              loss_pos_velocity(tape, out.pos, gp, s.skel.lower)};
    Var total = total_loss(tape, losses, tape.param(s.model.loss_s), s.mcfg.weighting,
                           s.mcfg.manual_lambda);
    return static_cast<double>(tape.value(total).data[0]);
}

// Analytic gradients vs central differences over every model parameter.
// Returns the worst relative error; caps the per-parameter component count
// when max_per_param > 0.
template <typename T>
double tiny_fd_max_rel_err(TinySetup<T>& s, std::size_t max_per_param = 0) {
    auto params = s.model.params();
    for (auto* p : params) p->zero_grad();
    {
        Tape<T> tape;
        auto out = s.model.forward(tape, tape.input(s.sample.x), &s.ctx, &s.blend);
        auto [gt_rot, gt_pos] = split_target(s.sample.target);
        Var gr = tape.input(std::move(gt_rot));
        Var gp = tape.input(std::move(gt_pos));
        std::array<Var, 4> losses{loss_theta(tape, out.rot, gr),
                                  loss_rot_velocity(tape, out.rot, gr),
                                  loss_position(tape, out.pos, gp),
                                  loss_pos_velocity(tape, out.pos, gp, s.skel.lower)};
        Var total = total_loss(tape, losses, tape.param(s.model.loss_s), s.mcfg.weighting,
                               s.mcfg.manual_lambda);
        tape.backward(total);
    }
    auto component_err = [&](Parameter<T>* p, std::size_t c, double a, double h) {
        const double x0 = static_cast<double>(p->value.data[c]);
        p->value.data[c] = static_cast<T>(x0 + h);
        const double fp = tiny_loss_value(s);
        p->value.data[c] = static_cast<T>(x0 - h);
        const double fm = tiny_loss_value(s);
        p->value.data[c] = static_cast<T>(x0);
        const double fd = (fp - fm) / (2.0 * h);
        return std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
    };
    double worst = 0.0;
    for (auto* p : params) {
        const std::size_t count = max_per_param == 0
                                      ? p->value.numel()
                                      : std::min(p->value.numel(), max_per_param);
        for (std::size_t c = 0; c < count; ++c) {
            const double a = static_cast<double>(p->grad.data[c]);
            const double h = 1e-5 * std::max(1.0, std::abs(static_cast<double>(p->value.data[c])));
            double err = component_err(p, c, a, h);
            // L1 kinks: a straddled corner disappears at a smaller step,
            // a wrong gradient does not
            if (err > 1e-4) err = std::min(err, component_err(p, c, a, h / 64.0));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace testutil
