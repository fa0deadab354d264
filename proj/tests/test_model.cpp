#include <doctest.h>

#include <cstdio>
#include <memmlp/model.hpp>
#include <memmlp/synth.hpp>

#include "helpers.hpp"
#include "model_harness.hpp"

using namespace memmlp;
using testutil::make_tiny_setup;
using testutil::tiny_model_cfg;
using testutil::tiny_prior_cfg;

TEST_CASE("mlp block with zero weights is the residual identity") {
    auto s = make_tiny_setup<double>(40);
    auto& blk = s.model.blocks[0];
    for (Parameter<double>* p : {&blk.conv_w, &blk.conv_b, &blk.ln_g, &blk.ln_b, &blk.lin_w,
                                 &blk.lin_b})
        std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    Tape<double> tape;
    Rng rng(3);
    Tensor<double> h = testutil::random_tensor({4, 8}, rng);
    Var out = s.model.mlp_block(tape, tape.input(h), blk);
    CHECK(tape.value(out) == h);
}

TEST_CASE("forward contracts") {
    auto s = make_tiny_setup<double>(41);
    SUBCASE("output shapes") {
        Tape<double> tape;
        auto out = s.model.forward(tape, tape.input(s.sample.x), &s.ctx, &s.blend);
        CHECK(tape.value(out.backbone).rows() == 4);
        CHECK(tape.value(out.backbone).cols() == 8);
        CHECK(tape.value(out.rot).cols() == 132);
        CHECK(tape.value(out.pos).cols() == 66);
    }
    SUBCASE("missing memory context is rejected") {
        Tape<double> tape;
        CHECK_THROWS_AS(s.model.forward(tape, tape.input(s.sample.x), nullptr, nullptr),
                        ContractError);
    }
    SUBCASE("empty memory set runs as a plain residual stack") {
        MemMLPConfig cfg = tiny_model_cfg();
        cfg.memory_layers = {};
        auto plain = MemMLP<double>::create(cfg, 42);
        Tape<double> tape;
        auto out = plain.forward(tape, tape.input(s.sample.x), nullptr, nullptr);
        CHECK(tape.value(out.rot).rows() == 4);
    }
    SUBCASE("forward is deterministic for fixed inputs") {
        Tape<double> t1, t2;
        auto o1 = s.model.forward(t1, t1.input(s.sample.x), &s.ctx, &s.blend);
        auto o2 = s.model.forward(t2, t2.input(s.sample.x), &s.ctx, &s.blend);
        CHECK(t1.value(o1.rot) == t2.value(o2.rot));
        CHECK(t1.value(o1.pos) == t2.value(o2.pos));
    }
}

TEST_CASE("blend endpoints isolate the memory inputs") {
    auto s = make_tiny_setup<double>(43);
    auto run = [&](const MemoryContext<double>& ctx, const BlendTensors<double>& blend) {
        Tape<double> tape;
        auto out = s.model.forward(tape, tape.input(s.sample.x), &ctx, &blend);
        return std::pair{tape.value(out.rot), tape.value(out.pos)};
    };
    Rng rng(9);
    SUBCASE("m == 1 removes all dependence on the code-vector") {
        const auto blend = blend_constant<double>(s.mcfg, 1.0);
        MemoryContext<double> perturbed = s.ctx;
        for (auto& v : perturbed.e_k.data) v += rng.uniform(0.5, 1.5);
        const auto a = run(s.ctx, blend);
        const auto b = run(perturbed, blend);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }
    SUBCASE("m == 0 removes all dependence on the previous motion") {
        const auto blend = blend_constant<double>(s.mcfg, 0.0);
        MemoryContext<double> perturbed = s.ctx;
        for (auto& v : perturbed.theta_prev.data) v += rng.uniform(0.5, 1.5);
        const auto a = run(s.ctx, blend);
        const auto b = run(perturbed, blend);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }
    SUBCASE("between the endpoints the memory inputs matter") {
        const auto blend = blend_constant<double>(s.mcfg, 0.5);
        MemoryContext<double> perturbed = s.ctx;
        for (auto& v : perturbed.theta_prev.data) v += 1.0;
        const auto a = run(s.ctx, blend);
        const auto b = run(perturbed, blend);
        CHECK(max_abs_diff(a.first, b.first) > 0.0);
    }
}

TEST_CASE("predictor branches are independent given the backbone") {
    auto s = make_tiny_setup<double>(44);
    Tape<double> t1;
    auto before = s.model.forward(t1, t1.input(s.sample.x), &s.ctx, &s.blend);
    const Tensor<double> rot_before = t1.value(before.rot);
    for (auto& blk : s.model.pos_branch.blocks)
        for (Parameter<double>* p : {&blk.conv_w, &blk.conv_b, &blk.ln_g, &blk.ln_b, &blk.lin_w,
                                     &blk.lin_b})
            std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    std::fill(s.model.pos_branch.head_w.value.data.begin(),
              s.model.pos_branch.head_w.value.data.end(), 0.0);
    Tape<double> t2;
    auto after = s.model.forward(t2, t2.input(s.sample.x), &s.ctx, &s.blend);
    CHECK(t2.value(after.rot) == rot_before);
}

TEST_CASE("loss values match hand computations") {
    Tape<double> tape;
    SUBCASE("theta loss of all-ones prediction vs zero target, T=1") {
        // L1 normalization cannot use T=1 for the velocity loss, so theta only
        Tensor<double> pred = Tensor<double>::full({1, 132}, 1.0);
        Var l = loss_theta(tape, tape.input(pred), tape.input(Tensor<double>::zeros({1, 132})));
        CHECK(tape.value(l).data[0] == doctest::Approx(132.0));
    }
    SUBCASE("theta loss is invariant to permuting time indices of both inputs") {
        Rng rng(5);
        Tensor<double> a = testutil::random_tensor({4, 132}, rng);
        Tensor<double> b = testutil::random_tensor({4, 132}, rng);
        Tensor<double> ap = a, bp = b;
        const std::array<int, 4> perm{2, 0, 3, 1};
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 132; ++c) {
                ap(r, c) = a(perm[r], c);
                bp(r, c) = b(perm[r], c);
            }
        Var l1 = loss_theta(tape, tape.input(a), tape.input(b));
        Var l2 = loss_theta(tape, tape.input(ap), tape.input(bp));
        CHECK(tape.value(l1).data[0] == doctest::Approx(tape.value(l2).data[0]).epsilon(1e-12));
    }
    SUBCASE("rotational velocity loss ignores constant offsets") {
        Rng rng(6);
        Tensor<double> gt = testutil::random_tensor({5, 132}, rng);
        Tensor<double> pred = gt;
        for (auto& v : pred.data) v += 0.37;
        Var l = loss_rot_velocity(tape, tape.input(pred), tape.input(gt));
        CHECK(tape.value(l).data[0] == doctest::Approx(0.0));
        Var l0 = loss_rot_velocity(tape, tape.input(gt), tape.input(gt));
        CHECK(tape.value(l0).data[0] == doctest::Approx(0.0));
    }
    SUBCASE("rotational velocity hand case: two frames, one joint dim") {
        // gt frames differ by 2, pred frames by 5 -> |5 - 2| / (T-1) = 3
        Tensor<double> gt = Tensor<double>::zeros({2, 132});
        Tensor<double> pred = Tensor<double>::zeros({2, 132});
        gt(1, 0) = 2.0;
        pred(1, 0) = 5.0;
        Var l = loss_rot_velocity(tape, tape.input(pred), tape.input(gt));
        CHECK(tape.value(l).data[0] == doctest::Approx(3.0));
        CHECK_THROWS_AS(loss_rot_velocity(tape, tape.input(Tensor<double>::zeros({1, 132})),
                                          tape.input(Tensor<double>::zeros({1, 132}))),
                        ShapeError);
    }
    SUBCASE("position loss: unit offset on one joint, T=1") {
        Tensor<double> pred = Tensor<double>::zeros({1, 66});
        pred(0, 3) = pred(0, 4) = pred(0, 5) = 1.0;  // joint 1 offset (1,1,1)
        Var l = loss_position(tape, tape.input(pred), tape.input(Tensor<double>::zeros({1, 66})));
        CHECK(tape.value(l).data[0] == doctest::Approx(3.0));
    }
    SUBCASE("lower-body velocity loss ignores upper-body error") {
        const Skeleton skel = default_skeleton();
        Rng rng(7);
        Tensor<double> gt = testutil::random_tensor({3, 66}, rng);
        Tensor<double> pred = gt;
        for (int j : skel.upper)
            for (int r = 0; r < 3; ++r)
                for (int k = 0; k < 3; ++k) pred(r, 3 * j + k) += rng.uniform(-1, 1);
        Var l = loss_pos_velocity(tape, tape.input(pred), tape.input(gt), skel.lower);
        CHECK(tape.value(l).data[0] == doctest::Approx(0.0));
    }
    SUBCASE("lower-body velocity hand case") {
        const Skeleton skel = default_skeleton();
        Tensor<double> gt = Tensor<double>::zeros({2, 66});
        Tensor<double> pred = Tensor<double>::zeros({2, 66});
        pred(1, 3 * 4 + 1) = 0.25;  // joint 4 (left knee) is in the lower set
        Var l = loss_pos_velocity(tape, tape.input(pred), tape.input(gt), skel.lower);
        CHECK(tape.value(l).data[0] == doctest::Approx(0.25));
    }
}

TEST_CASE("total loss weighting") {
    Tape<double> tape;
    std::array<Var, 4> losses{tape.input(Tensor<double>::scalar(2.0)),
                              tape.input(Tensor<double>::scalar(3.0)),
                              tape.input(Tensor<double>::scalar(5.0)),
                              tape.input(Tensor<double>::scalar(7.0))};
    SUBCASE("homoscedastic with s = 0 equals the unweighted sum") {
        Var s = tape.input(Tensor<double>::zeros({1, 4}));
        Var total = total_loss(tape, losses, s, LossWeighting::homoscedastic, {});
        CHECK(std::abs(tape.value(total).data[0] - 17.0) < 1e-12);
    }
    SUBCASE("manual mode reproduces the grid-search weighting exactly") {
        const std::array<double, 4> lambda{1.0, 30.0, 0.5, 0.1};
        Var total = total_loss(tape, losses, Var{}, LossWeighting::manual, lambda);
        CHECK(tape.value(total).data[0] ==
              doctest::Approx(1.0 * 2 + 30.0 * 3 + 0.5 * 5 + 0.1 * 7).epsilon(1e-15));
    }
    SUBCASE("gradient of the homoscedastic objective w.r.t. s") {
        // d/ds_i [exp(-s_i) L_i + s_i] = -exp(-s_i) L_i + 1
        Tensor<double> s0({1, 4}, {0.3, -0.2, 0.8, 0.0});
        Tape<double> t2;
        std::array<Var, 4> ls{t2.input(Tensor<double>::scalar(2.0)),
                              t2.input(Tensor<double>::scalar(3.0)),
                              t2.input(Tensor<double>::scalar(5.0)),
                              t2.input(Tensor<double>::scalar(7.0))};
        Var sv = t2.variable(s0);
        Var total = total_loss(t2, ls, sv, LossWeighting::homoscedastic, {});
        t2.backward(total);
        const std::array<double, 4> lvals{2.0, 3.0, 5.0, 7.0};
        for (int i = 0; i < 4; ++i) {
            const double expect = -std::exp(-s0.data[i]) * lvals[i] + 1.0;
            CHECK(t2.grad(sv).data[i] == doctest::Approx(expect).epsilon(1e-10));
        }
    }
}

TEST_CASE("tiny-config finite differences stay under 1e-3") {
    auto s = make_tiny_setup<double>(45);
    const double err = testutil::tiny_fd_max_rel_err(s, 4);  // smoke; acceptance sweeps all
    INFO("max rel err " << err);
    CHECK(err < 1e-3);
}

TEST_CASE("train step determinism and freeze contract") {
    const Skeleton skel = default_skeleton();
    auto run_losses = [&](std::uint64_t seed) {
        auto s = make_tiny_setup<float>(46);
        const MotionClip clip = synth_generate(SynthKind::walk, 5, 1.0, 60.0, skel);
        std::vector<MotionClip> clips{clip};
        auto data = make_dataset<float>(clips, skel, s.mcfg.t_window, 3);
        AdamW<float> opt;
        Rng rng(seed);
        TrainOptions topts;
        std::vector<double> totals;
        for (int step = 0; step < 4; ++step) {
            std::vector<WindowSample<float>> batch;
            for (int i = 0; i < 3; ++i)
                batch.push_back(data.samples[rng.uniform_int(data.samples.size())]);
            const LossRecord rec = train_step(s.model, s.prior,
                                              std::span<const WindowSample<float>>(batch), opt,
                                              step, rng, skel, topts);
            totals.push_back(rec.total);
        }
        return totals;
    };
    const auto a = run_losses(99);
    const auto b = run_losses(99);
    CHECK(a == b);
    const auto c = run_losses(100);
    CHECK(a != c);
}

TEST_CASE("train step leaves the frozen prior bit-identical") {
    auto s = make_tiny_setup<float>(47);
    const Skeleton skel = default_skeleton();
    const MotionClip clip = synth_generate(SynthKind::walk, 6, 1.0, 60.0, skel);
    std::vector<MotionClip> clips{clip};
    auto data = make_dataset<float>(clips, skel, s.mcfg.t_window, 5);
    std::vector<Tensor<float>> before;
    for (auto* p : s.prior.params()) before.push_back(p->value);
    AdamW<float> opt;
    Rng rng(1);
    TrainOptions topts;
    std::vector<WindowSample<float>> batch{data.samples[0], data.samples[1]};
    train_step(s.model, s.prior, std::span<const WindowSample<float>>(batch), opt, 0, rng, skel,
               topts);
    auto params = s.prior.params();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);
}

TEST_CASE("ablated model matches the structural parameter-count formula") {
    MemMLPConfig cfg = tiny_model_cfg();
    cfg.memory_layers = {};
    cfg.multi_head = false;
    auto ablated = MemMLP<double>::create(cfg, 48);
    const std::size_t d = 8, t_in = 54, k = 3;
    auto block_params = [&](std::size_t width) {
        return k * width * width + width  // conv
               + 2 * width                // layernorm
               + width * width + width;   // linear
    };
    std::size_t expect = t_in * d + d;                       // input projection
    expect += cfg.depth * block_params(d);                   // backbone
    expect += cfg.predictor_depth * block_params(d);         // rotation branch blocks
    expect += d * 132 + 132;                                 // rotation head
    expect += 4;                                             // loss log-variances
    CHECK(ablated.param_count() == expect);
}

TEST_CASE("model checkpoint round trip") {
    auto s = make_tiny_setup<float>(49);
    Tape<float> t1;
    auto before = s.model.forward(t1, t1.input(s.sample.x), &s.ctx, &s.blend);
    const Tensor<float> rot_before = t1.value(before.rot);

    save_model(s.model, "model_test.mmwt");
    auto loaded = load_model<float>("model_test.mmwt");
    CHECK(loaded.cfg.d == s.mcfg.d);
    Tape<float> t2;
    auto after = loaded.forward(t2, t2.input(s.sample.x), &s.ctx, &s.blend);
    CHECK(t2.value(after.rot) == rot_before);

    SUBCASE("corrupted magic is rejected") {
        std::fstream f("model_test.mmwt", std::ios::in | std::ios::out | std::ios::binary);
        f.write("ZZZZ", 4);
        f.close();
        CHECK_THROWS_AS(load_model<float>("model_test.mmwt"), IoError);
    }
    SUBCASE("wrong kind is rejected") {
        auto params = s.model.params();
        std::vector<const Parameter<float>*> cp(params.begin(), params.end());
        save_checkpoint<float>("model_kind.mmwt", "vqvae", s.mcfg.to_json().dump(),
                               std::span<const Parameter<float>* const>(cp));
        CHECK_THROWS_AS(load_model<float>("model_kind.mmwt"), IoError);
        std::remove("model_kind.mmwt");
    }
    SUBCASE("config/record mismatch is rejected") {
        // config claims d=16 but the records were built with d=8
        MemMLPConfig other = s.mcfg;
        other.d = 16;
        auto params = s.model.params();
        std::vector<const Parameter<float>*> cp(params.begin(), params.end());
        save_checkpoint<float>("model_cfg.mmwt", "memmlp", other.to_json().dump(),
                               std::span<const Parameter<float>* const>(cp));
        CHECK_THROWS_AS(load_model<float>("model_cfg.mmwt"), IoError);
        std::remove("model_cfg.mmwt");
    }
    std::remove("model_test.mmwt");
}
