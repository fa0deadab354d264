#pragma once

#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "memmlp/autodiff.hpp"
#include "memmlp/checkpoint.hpp"
#include "memmlp/features.hpp"
#include "memmlp/optim.hpp"

// Motion prior: MLP VQ-VAE over (X^{t-1}, Theta^{t-1}) windows. The encoder
// runs per-frame blocks (layernorm -> linear -> SiLU), mean-pools over time
// and projects to the latent; quantization picks the nearest codebook entry;
// the decoder expands the code-vector back to a T x 198 window. Once trained
// the prior is frozen and only encode/quantize are used downstream.

namespace memmlp {

struct VqVaeConfig {
    int t_window = 41;
    int width = 512;
    int l_enc = 4;
    int l_dec = 1;
    int latent = 256;      // d_zs
    int codebook = 64;     // K
    double beta_commit = 0.25;

    void validate() const {
        if (t_window < 2 || width < 1 || l_enc < 1 || l_dec < 1 || latent < 1 || codebook < 1)
            throw DomainError("vqvae config: dimensions must be positive");
    }

    nlohmann::json to_json() const {
        return {{"t_window", t_window}, {"width", width},   {"l_enc", l_enc},
                {"l_dec", l_dec},       {"latent", latent}, {"codebook", codebook},
                {"beta_commit", beta_commit}};
    }

    static VqVaeConfig from_json(const nlohmann::json& j) {
        VqVaeConfig c;
        c.t_window = j.at("t_window").get<int>();
        c.width = j.at("width").get<int>();
        c.l_enc = j.at("l_enc").get<int>();
        c.l_dec = j.at("l_dec").get<int>();
        c.latent = j.at("latent").get<int>();
        c.codebook = j.at("codebook").get<int>();
        c.beta_commit = j.at("beta_commit").get<double>();
        c.validate();
        return c;
    }
};

template <typename T>
struct VqVae {
    struct MlpBlock {
        Parameter<T> ln_g, ln_b, w, b;
    };

    VqVaeConfig cfg;
    std::vector<MlpBlock> enc;
    Parameter<T> enc_out_w, enc_out_b;
    Parameter<T> codebook;
    std::vector<MlpBlock> dec;
    Parameter<T> dec_out_w, dec_out_b;
    std::vector<std::uint64_t> usage;  // quantization counts seen in training

    static VqVae create(const VqVaeConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        VqVae v;
        v.cfg = cfg;
        Rng rng(seed);
        auto lin_w = [&](const std::string& id, int din, int dout) {
            const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(din)));
            return Parameter<T>(id, Tensor<T>::uniform({static_cast<std::size_t>(din),
                                                        static_cast<std::size_t>(dout)},
                                                       rng, -bound, bound));
        };
        auto make_block = [&](const std::string& prefix, int din, int dout) {
            MlpBlock b{Parameter<T>(prefix + ".ln_g", Tensor<T>::full({1, static_cast<std::size_t>(din)}, T{1})),
                       Parameter<T>(prefix + ".ln_b", Tensor<T>::zeros({1, static_cast<std::size_t>(din)})),
                       lin_w(prefix + ".w", din, dout),
                       Parameter<T>(prefix + ".b", Tensor<T>::zeros({1, static_cast<std::size_t>(dout)}))};
            return b;
        };
        const int in_dim = kSparseDim + kTargetDim;  // 252
        for (int i = 0; i < cfg.l_enc; ++i)
            v.enc.push_back(make_block("enc" + std::to_string(i), i == 0 ? in_dim : cfg.width, cfg.width));
        v.enc_out_w = lin_w("enc_out.w", cfg.width, cfg.latent);
        v.enc_out_b = Parameter<T>("enc_out.b", Tensor<T>::zeros({1, static_cast<std::size_t>(cfg.latent)}));
        const T cb_bound = static_cast<T>(1.0 / cfg.codebook);
        v.codebook = Parameter<T>("codebook", Tensor<T>::uniform({static_cast<std::size_t>(cfg.codebook),
                                                                  static_cast<std::size_t>(cfg.latent)},
                                                                 rng, -cb_bound, cb_bound));
        for (int i = 0; i < cfg.l_dec; ++i)
            v.dec.push_back(make_block("dec" + std::to_string(i), i == 0 ? cfg.latent : cfg.width, cfg.width));
        v.dec_out_w = lin_w("dec_out.w", cfg.width, cfg.t_window * kTargetDim);
        v.dec_out_b = Parameter<T>("dec_out.b",
                                   Tensor<T>::zeros({1, static_cast<std::size_t>(cfg.t_window * kTargetDim)}));
        v.usage.assign(cfg.codebook, 0);
        return v;
    }

    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out;
        for (auto& b : enc) {
            out.push_back(&b.ln_g);
            out.push_back(&b.ln_b);
            out.push_back(&b.w);
            out.push_back(&b.b);
        }
        out.push_back(&enc_out_w);
        out.push_back(&enc_out_b);
        out.push_back(&codebook);
        for (auto& b : dec) {
            out.push_back(&b.ln_g);
            out.push_back(&b.ln_b);
            out.push_back(&b.w);
            out.push_back(&b.b);
        }
        out.push_back(&dec_out_w);
        out.push_back(&dec_out_b);
        return out;
    }

    bool frozen() const { return enc_out_w.frozen; }

    void freeze() {
        for (Parameter<T>* p : params()) p->frozen = true;
    }

    // z_s = f_enc([X^{t-1}; Theta^{t-1}]) in R^{latent}
    Var encode(Tape<T>& tape, Var x_prev, Var theta_prev) {
        if (tape.value(x_prev).cols() != kSparseDim ||
            tape.value(theta_prev).cols() != kTargetDim ||
            tape.value(x_prev).rows() != static_cast<std::size_t>(cfg.t_window))
            throw ShapeError("vqvae encode: bad window shapes");
        Var h = tape.concat_cols(x_prev, theta_prev);
        for (auto& b : enc)
            h = tape.silu(tape.linear(tape.layernorm(h, tape.param(b.ln_g), tape.param(b.ln_b)),
                                      tape.param(b.w), tape.param(b.b)));
        return tape.linear(tape.mean_rows(h), tape.param(enc_out_w), tape.param(enc_out_b));
    }

    Var decode(Tape<T>& tape, Var z) {
        Var h = z;
        for (auto& b : dec)
            h = tape.silu(tape.linear(tape.layernorm(h, tape.param(b.ln_g), tape.param(b.ln_b)),
                                      tape.param(b.w), tape.param(b.b)));
        Var flat = tape.linear(h, tape.param(dec_out_w), tape.param(dec_out_b));
        return tape.reshape(flat, {static_cast<std::size_t>(cfg.t_window), kTargetDim});
    }

    // Nearest codebook entry by Euclidean distance, ties to the lowest index.
    std::pair<int, Tensor<T>> quantize(const Tensor<T>& z) const {
        if (z.numel() != static_cast<std::size_t>(cfg.latent)) throw ShapeError("quantize: bad latent");
        const std::size_t k = codebook.value.rows(), d = codebook.value.cols();
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t row = 0; row < k; ++row) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = static_cast<double>(z.data[c]) -
                                    static_cast<double>(codebook.value(row, c));
                d2 += diff * diff;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = static_cast<int>(row);
            }
        }
        Tensor<T> e({1, d});
        for (std::size_t c = 0; c < d; ++c) e.data[c] = codebook.value(best, c);
        return {best, std::move(e)};
    }

    // Value-level encode + quantize used by the frozen prior downstream.
    std::pair<int, Tensor<T>> encode_quantize(const Tensor<T>& x_prev,
                                              const Tensor<T>& theta_prev) {
        Tape<T> tape;
        Var z = encode(tape, tape.input(x_prev), tape.input(theta_prev));
        return quantize(tape.value(z));
    }
};

// L = L1(recon rotations, gt rotations)/T + ||sg(z) - e_k||^2 + beta*||z - sg(e_k)||^2
template <typename T>
Var vqvae_loss(Tape<T>& tape, Var recon_theta, Var gt_theta, Var z, Var e_k, double beta_commit) {
    std::vector<std::size_t> rot_idx;
    for (int i = 0; i < kNumJoints; ++i)
        for (int k = 0; k < 6; ++k) rot_idx.push_back(static_cast<std::size_t>(9 * i + k));
    const std::size_t t_len = tape.value(recon_theta).rows();
    Var rec = tape.scale(
        tape.sum(tape.abs(tape.sub(tape.select_cols(recon_theta, rot_idx),
                                   tape.select_cols(gt_theta, rot_idx)))),
        static_cast<T>(1.0 / static_cast<double>(t_len)));
    Var d_dict = tape.sub(tape.stopgrad(z), e_k);
    Var dict = tape.sum(tape.mul(d_dict, d_dict));
    Var d_com = tape.sub(z, tape.stopgrad(e_k));
    Var commit = tape.sum(tape.mul(d_com, d_com));
    return tape.add(tape.add(rec, dict), tape.scale(commit, static_cast<T>(beta_commit)));
}

// Forward pass with the straight-through estimator: decoder gradients reach
// z unchanged, the codebook learns only from the dictionary term.
template <typename T>
struct VqVaeForward {
    Var loss;
    Var recon;
    int code = -1;
};

template <typename T>
VqVaeForward<T> vqvae_forward(VqVae<T>& model, Tape<T>& tape, Var x_prev, Var theta_prev) {
    Var z = model.encode(tape, x_prev, theta_prev);
    const auto [k, e_val] = model.quantize(tape.value(z));
    Var e_k = tape.select_row(tape.param(model.codebook), static_cast<std::size_t>(k));
    Var z_q = tape.add(z, tape.stopgrad(tape.sub(e_k, z)));
    Var recon = model.decode(tape, z_q);
    Var loss = vqvae_loss(tape, recon, theta_prev, z, e_k, model.cfg.beta_commit);
    return {loss, recon, k};
}

struct VqVaeTrainOptions {
    int epochs = 100;
    int batch = 256;
    double lr0 = 1e-4;
    double decay_factor = 0.2;
    std::vector<int> milestones = {20, 50, 70};
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct VqVaeTrainReport {
    std::vector<double> epoch_loss;
};

template <typename T>
VqVaeTrainReport train_vqvae(VqVae<T>& model, const Dataset<T>& data,
                             const VqVaeTrainOptions& opts) {
    if (data.samples.empty()) throw DomainError("train_vqvae: empty dataset");
    if (model.frozen()) throw ContractError("train_vqvae: model already frozen");
    AdamWConfig<T> acfg;
    acfg.beta1 = static_cast<T>(0.9);
    acfg.beta2 = static_cast<T>(0.99);
    acfg.weight_decay = static_cast<T>(1e-4);
    AdamW<T> opt(acfg);
    auto params = model.params();
    Rng rng(opts.seed);
    VqVaeTrainReport report;
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        // Fisher-Yates with the deterministic rng
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        const double lr = milestone_lr(epoch, opts.lr0, opts.decay_factor, opts.milestones);
        double epoch_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += opts.batch) {
            const std::size_t b1 = std::min(order.size(), b0 + opts.batch);
            Tape<T> tape;
            Var total{};
            for (std::size_t i = b0; i < b1; ++i) {
                const WindowSample<T>& s = data.samples[order[i]];
                auto fwd = vqvae_forward(model, tape, tape.input(s.x), tape.input(s.target));
                model.usage[fwd.code] += 1;
                Var scaled = tape.scale(fwd.loss, static_cast<T>(1.0 / static_cast<double>(b1 - b0)));
                total = total.valid() ? tape.add(total, scaled) : scaled;
            }
            for (Parameter<T>* p : params) p->zero_grad();
            tape.backward(total);
            opt.step(std::span<Parameter<T>* const>(params), static_cast<T>(lr));
            epoch_sum += static_cast<double>(tape.value(total).data[0]);
            ++batches;
        }
        report.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
        if (opts.verbose)
            std::fprintf(stderr, "[vqvae] epoch %d loss %.6f lr %.2e\n", epoch + 1,
                         report.epoch_loss.back(), lr);
    }
    model.freeze();
    return report;
}

template <typename T>
void save_prior(VqVae<T>& model, const std::string& path) {
    auto params = model.params();
    std::vector<const Parameter<T>*> cparams(params.begin(), params.end());
    save_checkpoint<T>(path, "vqvae", model.cfg.to_json().dump(),
                       std::span<const Parameter<T>* const>(cparams));
    std::ofstream usage(path + ".usage.txt");
    for (std::size_t i = 0; i < model.usage.size(); ++i)
        usage << i << " " << model.usage[i] << "\n";
}

template <typename T>
VqVae<T> load_prior(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "vqvae") throw IoError("not a vqvae checkpoint: " + path);
    VqVaeConfig cfg;
    try {
        cfg = VqVaeConfig::from_json(nlohmann::json::parse(ck.config_json));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("vqvae config: ") + e.what());
    }
    VqVae<T> model = VqVae<T>::create(cfg, 0);
    auto params = model.params();
    restore_params<T>(ck, std::span<Parameter<T>* const>(params));
    model.freeze();
    return model;
}

}  // namespace memmlp
