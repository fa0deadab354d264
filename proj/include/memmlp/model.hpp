#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "memmlp/optim.hpp"
#include "memmlp/vqvae.hpp"

// Mem-MLP: residual MLP backbone over T x 54 sparse windows, memory blocks
// injected after selected layers, and a two-branch predictor emitting 6D
// rotations and global positions for all 22 joints.

namespace memmlp {

enum class BlendMode { fixed, sampled };
enum class LossWeighting { homoscedastic, manual };

struct MemMLPConfig {
    int t_window = 41;
    int d = 256;           // latent width
    int depth = 8;         // L stacked MLP-blocks
    int conv_kernel = 3;
    std::vector<int> memory_layers = {2, 4, 6, 8};
    int predictor_depth = 2;
    bool multi_head = true;
    int latent = 256;      // prior code-vector width (d_zs)

    BlendMode infer_blend = BlendMode::fixed;
    double blend_value = 0.5;

    LossWeighting weighting = LossWeighting::homoscedastic;
    std::array<double, 4> manual_lambda = {1.0, 30.0, 0.5, 0.1};  // theta, rv, p, fv

    void validate() const {
        if (t_window < 2) throw DomainError("config: T must be >= 2");
        if (d < 1 || depth < 1 || predictor_depth < 1 || latent < 1)
            throw DomainError("config: dimensions must be positive");
        if (conv_kernel < 1 || conv_kernel % 2 == 0)
            throw DomainError("config: conv kernel must be odd and positive");
        for (int l : memory_layers)
            if (l < 1 || l > depth) throw DomainError("config: memory layer outside 1..L");
    }

    nlohmann::json to_json() const {
        return {{"t_window", t_window},
                {"d", d},
                {"depth", depth},
                {"conv_kernel", conv_kernel},
                {"memory_layers", memory_layers},
                {"predictor_depth", predictor_depth},
                {"multi_head", multi_head},
                {"latent", latent},
                {"infer_blend", infer_blend == BlendMode::fixed ? "fixed" : "sampled"},
                {"blend_value", blend_value},
                {"weighting", weighting == LossWeighting::homoscedastic ? "homoscedastic" : "manual"},
                {"manual_lambda", manual_lambda}};
    }

    static MemMLPConfig from_json(const nlohmann::json& j) {
        MemMLPConfig c;
        c.t_window = j.at("t_window").get<int>();
        c.d = j.at("d").get<int>();
        c.depth = j.at("depth").get<int>();
        c.conv_kernel = j.at("conv_kernel").get<int>();
        c.memory_layers = j.at("memory_layers").get<std::vector<int>>();
        c.predictor_depth = j.at("predictor_depth").get<int>();
        c.multi_head = j.at("multi_head").get<bool>();
        c.latent = j.at("latent").get<int>();
        c.infer_blend = j.at("infer_blend").get<std::string>() == "fixed" ? BlendMode::fixed
                                                                          : BlendMode::sampled;
        c.blend_value = j.at("blend_value").get<double>();
        c.weighting = j.at("weighting").get<std::string>() == "manual" ? LossWeighting::manual
                                                                       : LossWeighting::homoscedastic;
        c.manual_lambda = j.at("manual_lambda").get<std::array<double, 4>>();
        c.validate();
        return c;
    }
};

// Values fed into the memory blocks for one window: the previous sparse
// window, the previous full-body window (ground truth in training, the
// model's own prediction or zeros at inference), and the prior code-vector.
template <typename T>
struct MemoryContext {
    Tensor<T> x_prev;      // T x 54
    Tensor<T> theta_prev;  // T x 198
    Tensor<T> e_k;         // 1 x latent
};

// Per-memory-layer blend coefficients m (and 1-m precomputed), each T x d.
template <typename T>
struct BlendTensors {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> one_minus_m;
};

template <typename T>
BlendTensors<T> blend_constant(const MemMLPConfig& cfg, double value) {
    BlendTensors<T> b;
    const std::vector<std::size_t> shape{static_cast<std::size_t>(cfg.t_window),
                                         static_cast<std::size_t>(cfg.d)};
    for (std::size_t i = 0; i < cfg.memory_layers.size(); ++i) {
        b.m.push_back(Tensor<T>::full(shape, static_cast<T>(value)));
        b.one_minus_m.push_back(Tensor<T>::full(shape, static_cast<T>(1.0 - value)));
    }
    return b;
}

template <typename T>
BlendTensors<T> blend_sampled(const MemMLPConfig& cfg, Rng& rng) {
    BlendTensors<T> b;
    const std::vector<std::size_t> shape{static_cast<std::size_t>(cfg.t_window),
                                         static_cast<std::size_t>(cfg.d)};
    for (std::size_t i = 0; i < cfg.memory_layers.size(); ++i) {
        Tensor<T> m(shape);
        Tensor<T> om(shape);
        for (std::size_t k = 0; k < m.numel(); ++k) {
            m.data[k] = static_cast<T>(rng.uniform());
            om.data[k] = T{1} - m.data[k];
        }
        b.m.push_back(std::move(m));
        b.one_minus_m.push_back(std::move(om));
    }
    return b;
}

template <typename T>
BlendTensors<T> infer_blend(const MemMLPConfig& cfg, Rng& rng) {
    return cfg.infer_blend == BlendMode::fixed ? blend_constant<T>(cfg, cfg.blend_value)
                                               : blend_sampled<T>(cfg, rng);
}

template <typename T>
struct MemMLP {
    struct Block {
        Parameter<T> conv_w, conv_b, ln_g, ln_b, lin_w, lin_b;
    };
    struct Proj {
        Parameter<T> w, b, ln_g, ln_b;  // linear -> layernorm -> SiLU
    };
    struct MemoryBlock {
        Proj x_proj, theta_proj, e_proj;
        Parameter<T> fus_w, fus_b;  // 2d -> d after concatenation
    };
    struct Branch {
        std::vector<Block> blocks;
        Parameter<T> head_w, head_b;
    };

    MemMLPConfig cfg;
    Parameter<T> in_w, in_b;
    std::vector<Block> blocks;
    std::vector<MemoryBlock> memory;  // aligned with cfg.memory_layers
    Branch rot_branch;
    Branch pos_branch;  // unused when !multi_head
    Parameter<T> loss_s;  // 1 x 4 log-variances (theta, rv, p, fv)

    static MemMLP create(const MemMLPConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        MemMLP m;
        m.cfg = cfg;
        Rng rng(seed);
        auto lin = [&](const std::string& id, int din, int dout) {
            const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(din)));
            return Parameter<T>(id, Tensor<T>::uniform({static_cast<std::size_t>(din),
                                                        static_cast<std::size_t>(dout)},
                                                       rng, -bound, bound));
        };
        auto bias = [](const std::string& id, int d) {
            return Parameter<T>(id, Tensor<T>::zeros({1, static_cast<std::size_t>(d)}));
        };
        auto block = [&](const std::string& p) {
            const int k = cfg.conv_kernel, d = cfg.d;
            const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(k * d)));
            Block b{Parameter<T>(p + ".conv_w",
                                 Tensor<T>::uniform({static_cast<std::size_t>(k),
                                                     static_cast<std::size_t>(d),
                                                     static_cast<std::size_t>(d)},
                                                    rng, -bound, bound)),
                    bias(p + ".conv_b", d),
                    Parameter<T>(p + ".ln_g", Tensor<T>::full({1, static_cast<std::size_t>(d)}, T{1})),
                    bias(p + ".ln_b", d), lin(p + ".lin_w", d, d), bias(p + ".lin_b", d)};
            return b;
        };
        auto proj = [&](const std::string& p, int din) {
            Proj pr{lin(p + ".w", din, cfg.d), bias(p + ".b", cfg.d),
                    Parameter<T>(p + ".ln_g", Tensor<T>::full({1, static_cast<std::size_t>(cfg.d)}, T{1})),
                    bias(p + ".ln_b", cfg.d)};
            return pr;
        };
        m.in_w = lin("in.w", kSparseDim, cfg.d);
        m.in_b = bias("in.b", cfg.d);
        for (int l = 0; l < cfg.depth; ++l) m.blocks.push_back(block("blk" + std::to_string(l + 1)));
        for (int l : cfg.memory_layers) {
            const std::string p = "mem" + std::to_string(l);
            MemoryBlock mb{proj(p + ".x", kSparseDim), proj(p + ".theta", kTargetDim),
                           proj(p + ".e", cfg.latent), lin(p + ".fus_w", 2 * cfg.d, cfg.d),
                           bias(p + ".fus_b", cfg.d)};
            m.memory.push_back(std::move(mb));
        }
        auto branch = [&](const std::string& p, int out_dim) {
            Branch br;
            for (int l = 0; l < cfg.predictor_depth; ++l)
                br.blocks.push_back(block(p + ".blk" + std::to_string(l + 1)));
            br.head_w = lin(p + ".head_w", cfg.d, out_dim);
            br.head_b = bias(p + ".head_b", out_dim);
            return br;
        };
        m.rot_branch = branch("rot", kNumJoints * 6);
        if (cfg.multi_head) m.pos_branch = branch("pos", kNumJoints * 3);
        m.loss_s = Parameter<T>("loss_s", Tensor<T>::zeros({1, 4}));
        return m;
    }

    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out{&in_w, &in_b};
        auto add_block = [&](Block& b) {
            out.push_back(&b.conv_w);
            out.push_back(&b.conv_b);
            out.push_back(&b.ln_g);
            out.push_back(&b.ln_b);
            out.push_back(&b.lin_w);
            out.push_back(&b.lin_b);
        };
        for (auto& b : blocks) add_block(b);
        for (auto& mb : memory) {
            for (Proj* p : {&mb.x_proj, &mb.theta_proj, &mb.e_proj}) {
                out.push_back(&p->w);
                out.push_back(&p->b);
                out.push_back(&p->ln_g);
                out.push_back(&p->ln_b);
            }
            out.push_back(&mb.fus_w);
            out.push_back(&mb.fus_b);
        }
        for (auto& b : rot_branch.blocks) add_block(b);
        out.push_back(&rot_branch.head_w);
        out.push_back(&rot_branch.head_b);
        if (cfg.multi_head) {
            for (auto& b : pos_branch.blocks) add_block(b);
            out.push_back(&pos_branch.head_w);
            out.push_back(&pos_branch.head_b);
        }
        out.push_back(&loss_s);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (Parameter<T>* p : params()) n += p->value.numel();
        return n;
    }

    // conv1d -> layernorm -> SiLU -> linear, with a residual add of the input.
    Var mlp_block(Tape<T>& tape, Var h, Block& b) {
        Var y = tape.conv1d(h, tape.param(b.conv_w), tape.param(b.conv_b));
        y = tape.layernorm(y, tape.param(b.ln_g), tape.param(b.ln_b));
        y = tape.silu(y);
        y = tape.linear(y, tape.param(b.lin_w), tape.param(b.lin_b));
        return tape.add(h, y);
    }

    Var apply_proj(Tape<T>& tape, Var x, Proj& p) {
        Var y = tape.linear(x, tape.param(p.w), tape.param(p.b));
        y = tape.layernorm(y, tape.param(p.ln_g), tape.param(p.ln_b));
        return tape.silu(y);
    }

    // Z_l = Z_x + (m * Z_theta + (1 - m) * Z_E)
    Var memory_feature(Tape<T>& tape, MemoryBlock& mb, Var x_prev, Var theta_prev, Var e_k,
                       const Tensor<T>& m, const Tensor<T>& one_minus_m) {
        Var zx = apply_proj(tape, x_prev, mb.x_proj);
        Var zth = apply_proj(tape, theta_prev, mb.theta_proj);
        Var ze = tape.broadcast_rows(apply_proj(tape, e_k, mb.e_proj),
                                     static_cast<std::size_t>(cfg.t_window));
        Var zm = tape.add(tape.mul(tape.input(m), zth), tape.mul(tape.input(one_minus_m), ze));
        return tape.add(zx, zm);
    }

    struct Output {
        Var backbone;  // H_L, T x d
        Var rot;       // T x 132
        Var pos;       // T x 66 (invalid when !multi_head)
    };

    Output forward(Tape<T>& tape, Var x, const MemoryContext<T>* ctx,
                   const BlendTensors<T>* blend) {
        if (!cfg.memory_layers.empty()) {
            if (ctx == nullptr || blend == nullptr ||
                blend->m.size() != cfg.memory_layers.size())
                throw ContractError("forward: memory context required for configured layers");
        }
        Var x_prev{}, theta_prev{}, e_k{};
        if (!cfg.memory_layers.empty()) {
            x_prev = tape.input(ctx->x_prev);
            theta_prev = tape.input(ctx->theta_prev);
            e_k = tape.input(ctx->e_k);
        }
        Var h = tape.linear(x, tape.param(in_w), tape.param(in_b));
        for (int l = 1; l <= cfg.depth; ++l) {
            h = mlp_block(tape, h, blocks[l - 1]);
            const auto it = std::find(cfg.memory_layers.begin(), cfg.memory_layers.end(), l);
            if (it != cfg.memory_layers.end()) {
                const std::size_t mi = static_cast<std::size_t>(it - cfg.memory_layers.begin());
                Var zl = memory_feature(tape, memory[mi], x_prev, theta_prev, e_k, blend->m[mi],
                                        blend->one_minus_m[mi]);
                h = tape.linear(tape.concat_cols(h, zl), tape.param(memory[mi].fus_w),
                                tape.param(memory[mi].fus_b));
            }
        }
        auto run_branch = [&](Branch& br) {
            Var b = h;
            for (auto& blk : br.blocks) b = mlp_block(tape, b, blk);
            return tape.linear(b, tape.param(br.head_w), tape.param(br.head_b));
        };
        Output out;
        out.backbone = h;
        out.rot = run_branch(rot_branch);
        if (cfg.multi_head) out.pos = run_branch(pos_branch);
        return out;
    }
};

// ---- losses, Eqs. (1)-(5) ----

template <typename T>
Var loss_theta(Tape<T>& tape, Var pred, Var gt) {
    const std::size_t t_len = tape.value(pred).rows();
    return tape.scale(tape.sum(tape.abs(tape.sub(pred, gt))),
                      static_cast<T>(1.0 / static_cast<double>(t_len)));
}

template <typename T>
Var loss_rot_velocity(Tape<T>& tape, Var pred, Var gt) {
    const std::size_t t_len = tape.value(pred).rows();
    if (t_len < 2) throw ShapeError("loss_rot_velocity: needs T >= 2");
    return tape.scale(tape.sum(tape.abs(tape.sub(tape.time_diff(pred), tape.time_diff(gt)))),
                      static_cast<T>(1.0 / static_cast<double>(t_len - 1)));
}

template <typename T>
Var loss_position(Tape<T>& tape, Var pred, Var gt) {
    return loss_theta(tape, pred, gt);  // same normalization, L1 over joints/dims
}

template <typename T>
Var loss_pos_velocity(Tape<T>& tape, Var pred, Var gt, std::span<const int> lower_set) {
    std::vector<std::size_t> cols;
    for (int j : lower_set)
        for (int k = 0; k < 3; ++k) cols.push_back(static_cast<std::size_t>(3 * j + k));
    return loss_rot_velocity(tape, tape.select_cols(pred, cols), tape.select_cols(gt, cols));
}

// Homoscedastic: sum_i exp(-s_i) L_i + s_i with trainable s. Manual: fixed
// lambda weights. Invalid loss vars (single-head training) are skipped.
template <typename T>
Var total_loss(Tape<T>& tape, const std::array<Var, 4>& losses, Var s,
               LossWeighting weighting, const std::array<double, 4>& lambda) {
    Var total{};
    auto add_term = [&](Var term) { total = total.valid() ? tape.add(total, term) : term; };
    for (int i = 0; i < 4; ++i) {
        if (!losses[i].valid()) continue;
        if (weighting == LossWeighting::homoscedastic) {
            Var si = tape.slice_cols(s, static_cast<std::size_t>(i), 1);
            add_term(tape.add(tape.mul_scalar(losses[i], tape.exp(tape.neg(si))), si));
        } else {
            add_term(tape.scale(losses[i], static_cast<T>(lambda[i])));
        }
    }
    return total;
}

// ---- training ----

struct TrainOptions {
    long steps = 300000;
    int batch = 256;
    double lr0 = 3e-4;
    double lr1 = 1e-5;
    long drop_at = 225000;
    std::uint64_t seed = 1;
    long log_every = 100;
    bool verbose = false;
};

struct LossRecord {
    double theta = 0, rot_velocity = 0, position = 0, pos_velocity = 0;
    double total = 0;
    double lr = 0;
};

template <typename T>
LossRecord train_step(MemMLP<T>& model, VqVae<T>& prior, std::span<const WindowSample<T>> batch,
                      AdamW<T>& opt, long step_index, Rng& rng, const Skeleton& skel,
                      const TrainOptions& opts) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    if (!model.cfg.memory_layers.empty()) {
        if (!prior.frozen()) throw ContractError("train_step: prior must be frozen");
        if (prior.cfg.t_window != model.cfg.t_window || prior.cfg.latent != model.cfg.latent)
            throw ShapeError("train_step: prior/model window or latent mismatch");
    }
    Tape<T> tape;
    const T inv_b = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    std::array<Var, 4> sums{};
    auto accumulate = [&](int i, Var v) {
        Var scaled = tape.scale(v, inv_b);
        sums[i] = sums[i].valid() ? tape.add(sums[i], scaled) : scaled;
    };
    for (const WindowSample<T>& s : batch) {
        MemoryContext<T> ctx;
        BlendTensors<T> blend;
        const bool use_memory = !model.cfg.memory_layers.empty();
        if (use_memory) {
            auto [k, e] = prior.encode_quantize(s.x_prev, s.target_prev);
            ctx = MemoryContext<T>{s.x_prev, s.target_prev, std::move(e)};
            blend = blend_sampled<T>(model.cfg, rng);
        }
        auto out = model.forward(tape, tape.input(s.x), use_memory ? &ctx : nullptr,
                                 use_memory ? &blend : nullptr);
        auto [gt_rot, gt_pos] = split_target(s.target);
        Var gt_rot_v = tape.input(std::move(gt_rot));
        accumulate(0, loss_theta(tape, out.rot, gt_rot_v));
        accumulate(1, loss_rot_velocity(tape, out.rot, gt_rot_v));
        if (model.cfg.multi_head) {
            Var gt_pos_v = tape.input(std::move(gt_pos));
            accumulate(2, loss_position(tape, out.pos, gt_pos_v));
            accumulate(3, loss_pos_velocity(tape, out.pos, gt_pos_v, skel.lower));
        }
    }
    Var total = total_loss(tape, sums, tape.param(model.loss_s), model.cfg.weighting,
                           model.cfg.manual_lambda);
    auto params = model.params();
    for (Parameter<T>* p : params) p->zero_grad();
    tape.backward(total);
    const double lr = lr_schedule(step_index, opts.drop_at, opts.lr0, opts.lr1);
    opt.step(std::span<Parameter<T>* const>(params), static_cast<T>(lr));

    LossRecord rec;
    rec.theta = static_cast<double>(tape.value(sums[0]).data[0]);
    rec.rot_velocity = static_cast<double>(tape.value(sums[1]).data[0]);
    if (model.cfg.multi_head) {
        rec.position = static_cast<double>(tape.value(sums[2]).data[0]);
        rec.pos_velocity = static_cast<double>(tape.value(sums[3]).data[0]);
    }
    rec.total = static_cast<double>(tape.value(total).data[0]);
    rec.lr = lr;
    return rec;
}

template <typename T>
std::vector<LossRecord> train_model(MemMLP<T>& model, VqVae<T>& prior, const Dataset<T>& data,
                                    const Skeleton& skel, const TrainOptions& opts) {
    if (data.samples.empty()) throw DomainError("train: empty dataset");
    AdamW<T> opt;  // beta (0.9, 0.999), eps 1e-8, weight decay 1e-4
    Rng rng(opts.seed);
    std::vector<LossRecord> history;
    std::vector<WindowSample<T>> batch;
    for (long step = 0; step < opts.steps; ++step) {
        batch.clear();
        for (int i = 0; i < opts.batch; ++i)
            batch.push_back(data.samples[rng.uniform_int(data.samples.size())]);
        LossRecord rec = train_step(model, prior, std::span<const WindowSample<T>>(batch), opt,
                                    step, rng, skel, opts);
        history.push_back(rec);
        if (opts.verbose && (step % opts.log_every == 0 || step + 1 == opts.steps))
            std::fprintf(stderr, "[train] step %ld total %.6f (theta %.4f rv %.4f p %.4f fv %.4f)\n",
                         step, rec.total, rec.theta, rec.rot_velocity, rec.position,
                         rec.pos_velocity);
    }
    return history;
}

// ---- checkpointing ----

template <typename T>
void save_model(MemMLP<T>& model, const std::string& path) {
    auto params = model.params();
    std::vector<const Parameter<T>*> cparams(params.begin(), params.end());
    save_checkpoint<T>(path, "memmlp", model.cfg.to_json().dump(),
                       std::span<const Parameter<T>* const>(cparams));
}

template <typename T>
MemMLP<T> load_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "memmlp") throw IoError("not a memmlp checkpoint: " + path);
    MemMLPConfig cfg;
    try {
        cfg = MemMLPConfig::from_json(nlohmann::json::parse(ck.config_json));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model config: ") + e.what());
    }
    MemMLP<T> model = MemMLP<T>::create(cfg, 0);
    auto params = model.params();
    restore_params<T>(ck, std::span<Parameter<T>* const>(params));
    return model;
}

}  // namespace memmlp
