#include <doctest.h>

#include <cstdio>
#include <memmlp/synth.hpp>
#include <memmlp/vqvae.hpp>

#include "fd_check.hpp"
#include "helpers.hpp"

using namespace memmlp;

namespace {

VqVaeConfig tiny_cfg() {
    VqVaeConfig cfg;
    cfg.t_window = 8;
    cfg.width = 24;
    cfg.l_enc = 2;
    cfg.l_dec = 1;
    cfg.latent = 12;
    cfg.codebook = 6;
    return cfg;
}

template <typename T>
Dataset<T> tiny_dataset(int t_window, int clips = 2) {
    const Skeleton skel = default_skeleton();
    std::vector<MotionClip> cs;
    for (int i = 0; i < clips; ++i)
        cs.push_back(synth_generate(SynthKind::walk, 100 + i, 1.0, 60.0, skel));
    return make_dataset<T>(cs, skel, t_window, 7);
}

}  // namespace

TEST_CASE("encode is deterministic with the configured latent width") {
    auto model = VqVae<double>::create(tiny_cfg(), 5);
    const auto data = tiny_dataset<double>(8, 1);
    REQUIRE(!data.samples.empty());
    const auto& s = data.samples[0];
    Tape<double> t1, t2;
    Var z1 = model.encode(t1, t1.input(s.x), t1.input(s.target));
    Var z2 = model.encode(t2, t2.input(s.x), t2.input(s.target));
    CHECK(t1.value(z1).numel() == 12);
    CHECK(t1.value(z1) == t2.value(z2));
    CHECK_THROWS_AS(model.encode(t1, t1.input(Tensor<double>::zeros({8, 10})),
                                 t1.input(s.target)),
                    ShapeError);
}

TEST_CASE("quantize picks the nearest entry with deterministic ties") {
    auto model = VqVae<double>::create(tiny_cfg(), 6);
    SUBCASE("exact codebook row maps to itself") {
        Tensor<double> z({1, 12});
        for (int c = 0; c < 12; ++c) z.data[c] = model.codebook.value(4, c);
        const auto [k, e] = model.quantize(z);
        CHECK(k == 4);
        for (int c = 0; c < 12; ++c) CHECK(e.data[c] == model.codebook.value(4, c));
    }
    SUBCASE("two-entry hand case") {
        VqVaeConfig cfg = tiny_cfg();
        cfg.codebook = 2;
        auto m2 = VqVae<double>::create(cfg, 6);
        for (int c = 0; c < 12; ++c) {
            m2.codebook.value(0, c) = 0.0;
            m2.codebook.value(1, c) = 1.0;
        }
        const auto [k, e] = m2.quantize(Tensor<double>::full({1, 12}, 0.1));
        CHECK(k == 0);
    }
    SUBCASE("ties break to the lowest index") {
        auto m3 = VqVae<double>::create(tiny_cfg(), 6);
        for (int c = 0; c < 12; ++c) {
            m3.codebook.value(2, c) = 0.5;
            m3.codebook.value(5, c) = 0.5;  // duplicate entry later in the book
        }
        const auto [k, e] = m3.quantize(Tensor<double>::full({1, 12}, 0.5));
        CHECK(k == 2);
    }
    SUBCASE("brute-force oracle over 1000 random latents") {
        Rng rng(31);
        for (int i = 0; i < 1000; ++i) {
            Tensor<double> z = testutil::random_tensor({1, 12}, rng, -0.5, 0.5);
            const auto [k, e] = model.quantize(z);
            int best = 0;
            double best_d = 1e300;
            for (int row = 0; row < 6; ++row) {
                double d = 0;
                for (int c = 0; c < 12; ++c) {
                    const double diff = z.data[c] - model.codebook.value(row, c);
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = row;
                }
            }
            CHECK(k == best);
        }
    }
}

TEST_CASE("vqvae loss endpoints") {
    auto model = VqVae<double>::create(tiny_cfg(), 7);
    Tape<double> tape;
    Rng rng(8);
    Tensor<double> theta = testutil::random_tensor({8, 198}, rng);
    Var gt = tape.input(theta);
    Var e_k = tape.select_row(tape.param(model.codebook), 1);

    SUBCASE("perfect reconstruction with z on the codebook gives zero") {
        Var z = tape.select_row(tape.param(model.codebook), 1);
        Var loss = vqvae_loss(tape, gt, gt, z, e_k, 0.25);
        CHECK(tape.value(loss).data[0] == doctest::Approx(0.0));
    }
    SUBCASE("beta 0 with z = e_k leaves the pure reconstruction L1") {
        Tensor<double> recon = testutil::random_tensor({8, 198}, rng);
        Var z = tape.select_row(tape.param(model.codebook), 1);
        Var loss = vqvae_loss(tape, tape.input(recon), gt, z, e_k, 0.0);
        double expect = 0.0;
        for (int r = 0; r < 8; ++r)
            for (int i = 0; i < 22; ++i)
                for (int k = 0; k < 6; ++k)
                    expect += std::abs(recon(r, 9 * i + k) - theta(r, 9 * i + k));
        expect /= 8.0;
        CHECK(tape.value(loss).data[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("commitment gradient respects the stop-gradient") {
    // d/dz of beta*||z - sg(e)||^2 is 2*beta*(z - e); the dictionary term
    // contributes nothing to z.
    Rng rng(9);
    Tensor<double> z0 = testutil::random_tensor({1, 6}, rng);
    Tensor<double> e0 = testutil::random_tensor({1, 6}, rng);
    const double beta = 0.25;
    Tape<double> tape;
    Var z = tape.variable(z0);
    Var d_dict = tape.sub(tape.stopgrad(z), tape.input(e0));
    Var d_com = tape.sub(z, tape.stopgrad(tape.input(e0)));
    Var loss = tape.add(tape.sum(tape.mul(d_dict, d_dict)),
                        tape.scale(tape.sum(tape.mul(d_com, d_com)), beta));
    tape.backward(loss);
    for (int c = 0; c < 6; ++c)
        CHECK(tape.grad(z).data[c] ==
              doctest::Approx(2.0 * beta * (z0.data[c] - e0.data[c])).epsilon(1e-12));
}

TEST_CASE("codebook learns only through the dictionary term") {
    auto model = VqVae<double>::create(tiny_cfg(), 10);
    const auto data = tiny_dataset<double>(8, 1);
    const auto& s = data.samples[0];

    auto grad_norm_with = [&](bool with_dict) {
        Tape<double> tape;
        Var z = model.encode(tape, tape.input(s.x), tape.input(s.target));
        const auto [k, e_val] = model.quantize(tape.value(z));
        Var e_k = tape.select_row(tape.param(model.codebook), static_cast<std::size_t>(k));
        Var z_q = tape.add(z, tape.stopgrad(tape.sub(e_k, z)));
        Var recon = model.decode(tape, z_q);
        const auto& rot_idx = target_rot_cols();
        Var loss = tape.scale(
            tape.sum(tape.abs(tape.sub(tape.select_cols(recon, rot_idx),
                                       tape.select_cols(tape.input(s.target), rot_idx)))),
            1.0 / 8.0);
        Var d_com = tape.sub(z, tape.stopgrad(e_k));
        loss = tape.add(loss, tape.scale(tape.sum(tape.mul(d_com, d_com)), 0.25));
        if (with_dict) {
            Var d_dict = tape.sub(tape.stopgrad(z), e_k);
            loss = tape.add(loss, tape.sum(tape.mul(d_dict, d_dict)));
        }
        model.codebook.zero_grad();
        tape.backward(loss);
        double n = 0;
        for (double g : model.codebook.grad.data) n += g * g;
        return std::sqrt(n);
    };
    CHECK(grad_norm_with(false) == 0.0);
    CHECK(grad_norm_with(true) > 0.0);
}

TEST_CASE("encoder finite-difference gradients") {
    VqVaeConfig cfg = tiny_cfg();
    cfg.t_window = 3;
    cfg.width = 6;
    cfg.latent = 4;
    auto model = VqVae<double>::create(cfg, 12);
    Rng rng(13);
    Tensor<double> x = testutil::random_tensor({3, 54}, rng);
    Tensor<double> th = testutil::random_tensor({3, 198}, rng);
    const Tensor<double> w = testutil::draw_weights({1, 4}, rng);

    auto loss_value = [&]() {
        Tape<double> tape;
        Var z = model.encode(tape, tape.input(x), tape.input(th));
        return tape.value(testutil::weighted_sum(tape, z, w)).data[0];
    };
    Tape<double> tape;
    Var z = model.encode(tape, tape.input(x), tape.input(th));
    Var loss = testutil::weighted_sum(tape, z, w);
    for (auto* p : model.params()) p->zero_grad();
    tape.backward(loss);

    Parameter<double>& target = model.enc[0].w;
    double worst = 0;
    for (std::size_t c = 0; c < std::min<std::size_t>(target.value.numel(), 60); ++c) {
        const double x0 = target.value.data[c];
        const double h = 1e-6 * std::max(1.0, std::abs(x0));
        target.value.data[c] = x0 + h;
        const double fp = loss_value();
        target.value.data[c] = x0 - h;
        const double fm = loss_value();
        target.value.data[c] = x0;
        const double fd = (fp - fm) / (2 * h);
        const double a = target.grad.data[c];
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4}));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("desk-scale training reduces the loss and freezes the prior") {
    auto data = tiny_dataset<float>(8, 4);
    REQUIRE(data.samples.size() > 4);
    auto model = VqVae<float>::create(tiny_cfg(), 21);
    VqVaeTrainOptions opts;
    opts.epochs = 5;
    opts.batch = 8;
    opts.lr0 = 1e-3;
    opts.seed = 2;
    const VqVaeTrainReport rep = train_vqvae(model, data, opts);
    REQUIRE(rep.epoch_loss.size() == 5);
    CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
    CHECK(model.frozen());

    SUBCASE("frozen parameters reject optimizer updates") {
        AdamW<float> opt;
        auto params = model.params();
        CHECK_THROWS_AS(opt.step(std::span<Parameter<float>* const>(params), 1e-3f),
                        ContractError);
    }
    SUBCASE("training a frozen prior is rejected") {
        CHECK_THROWS_AS(train_vqvae(model, data, opts), ContractError);
    }
    SUBCASE("reload reproduces encode outputs bit-exactly") {
        save_prior(model, "prior_test.mmwt");
        auto back = load_prior<float>("prior_test.mmwt");
        const auto& s = data.samples[0];
        const auto [k1, e1] = model.encode_quantize(s.x, s.target);
        const auto [k2, e2] = back.encode_quantize(s.x, s.target);
        CHECK(k1 == k2);
        CHECK(e1 == e2);
        std::remove("prior_test.mmwt");
        std::remove("prior_test.mmwt.usage.txt");
    }
    SUBCASE("decode shape and finiteness") {
        Tape<float> tape;
        const auto& s = data.samples[0];
        const auto [k, e] = model.encode_quantize(s.x, s.target);
        Var recon = model.decode(tape, tape.input(e));
        CHECK(tape.value(recon).rows() == 8);
        CHECK(tape.value(recon).cols() == 198);
        CHECK(tape.value(recon).all_finite());
    }
}

TEST_CASE("training improves still-pose reconstruction over an untrained prior") {
    const Skeleton skel = default_skeleton();
    std::vector<MotionClip> cs{synth_generate(SynthKind::still, 1, 1.0, 60.0, skel),
                               synth_generate(SynthKind::still, 2, 1.0, 60.0, skel)};
    auto data = make_dataset<float>(cs, skel, 8, 4);
    auto model = VqVae<float>::create(tiny_cfg(), 33);
    auto untrained = VqVae<float>::create(tiny_cfg(), 33);

    auto recon_l1 = [&](VqVae<float>& m) {
        double total = 0;
        for (const auto& s : data.samples) {
            Tape<float> tape;
            Var z = m.encode(tape, tape.input(s.x), tape.input(s.target));
            const auto [k, e_val] = m.quantize(tape.value(z));
            Var recon = m.decode(tape, tape.input(e_val));
            const auto& rot_idx = target_rot_cols();
            Var l1 = tape.scale(
                tape.sum(tape.abs(tape.sub(tape.select_cols(recon, rot_idx),
                                           tape.select_cols(tape.input(s.target), rot_idx)))),
                1.0f / 8.0f);
            total += tape.value(l1).data[0];
        }
        return total / data.samples.size();
    };
    VqVaeTrainOptions opts;
    opts.epochs = 30;
    opts.batch = 16;
    opts.lr0 = 2e-3;
    opts.milestones = {20};
    train_vqvae(model, data, opts);
    CHECK(recon_l1(model) < recon_l1(untrained));
}
