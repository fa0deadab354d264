#pragma once

#include <algorithm>
#include <chrono>
#include <deque>

#include "memmlp/model.hpp"
#include "memmlp/synth.hpp"

// Autoregressive inference. The streaming path keeps a ring buffer of the
// last T+1 sparse frames plus the previous full-body prediction; the offline
// path slides a window over a precomputed frame sequence. Both must produce
// bit-identical outputs for identical inputs and blend settings.

namespace memmlp {

template <typename T>
struct WindowInference {
    Tensor<T> rot;  // T x 132
    Tensor<T> pos;  // T x 66, empty for single-head models
};

// One window through prior + backbone + predictor. Null x_prev/theta_prev
// engage the cold-start zero-tensor fallback for the memory blocks.
template <typename T>
WindowInference<T> infer_window(MemMLP<T>& model, VqVae<T>& prior, const Tensor<T>& x_win,
                                const Tensor<T>* x_prev, const Tensor<T>* theta_prev,
                                Rng& blend_rng, std::uint64_t* macs = nullptr) {
    const bool use_memory = !model.cfg.memory_layers.empty();
    Tape<T> tape;
    MemoryContext<T> ctx;
    BlendTensors<T> blend;
    if (use_memory) {
        const std::size_t t_len = static_cast<std::size_t>(model.cfg.t_window);
        ctx.x_prev = x_prev ? *x_prev : Tensor<T>::zeros({t_len, kSparseDim});
        ctx.theta_prev = theta_prev ? *theta_prev : Tensor<T>::zeros({t_len, kTargetDim});
        auto [k, e] = [&] {
            // encode/quantize on the same tape so the MAC instrumentation
            // covers the prior encoder as well
            Var z = prior.encode(tape, tape.input(ctx.x_prev), tape.input(ctx.theta_prev));
            return prior.quantize(tape.value(z));
        }();
        ctx.e_k = std::move(e);
        blend = infer_blend<T>(model.cfg, blend_rng);
    }
    auto out = model.forward(tape, tape.input(x_win), use_memory ? &ctx : nullptr,
                             use_memory ? &blend : nullptr);
    if (macs) *macs = tape.mac_count();
    WindowInference<T> res;
    res.rot = tape.value(out.rot);
    if (model.cfg.multi_head) res.pos = tape.value(out.pos);
    return res;
}

template <typename T>
struct StreamOutput {
    Tensor<T> rot;  // 1 x 132 global 6D
    Tensor<T> pos;  // 1 x 66, empty for single-head models
    bool placeholder = false;
    bool fault = false;
};

template <typename T>
StreamOutput<T> rest_pose_output(const Skeleton& skel, bool multi_head) {
    StreamOutput<T> out;
    out.placeholder = true;
    std::vector<Mat3> locals(kNumJoints, Mat3::Identity());
    GlobalPose g = forward_kinematics(skel, locals, Vec3::Zero());
    out.rot = Tensor<T>({1, kNumJoints * 6});
    for (int j = 0; j < kNumJoints; ++j) {
        const Vec6 s = matrix_to_sixd(g.rot[j]);
        for (int k = 0; k < 6; ++k) out.rot(0, 6 * j + k) = static_cast<T>(s(k));
    }
    if (multi_head) {
        out.pos = Tensor<T>({1, kNumJoints * 3});
        for (int j = 0; j < kNumJoints; ++j)
            for (int k = 0; k < 3; ++k) out.pos(0, 3 * j + k) = static_cast<T>(g.pos[j](k));
    }
    return out;
}

template <typename T>
struct StreamState {
    std::deque<Tensor<T>> buffer;  // up to T+1 sparse rows, each 1 x 54
    Tensor<T> prev_theta;          // T x 198 prediction from the previous step
    bool has_prev = false;
    long frame_count = 0;
    Rng blend_rng;
    StreamOutput<T> last_good;
    bool has_last_good = false;

    explicit StreamState(std::uint64_t blend_seed) : blend_rng(blend_seed) {}
};

template <typename T>
StreamOutput<T> stream_step(StreamState<T>& state, const Tensor<T>& frame, MemMLP<T>& model,
                            VqVae<T>& prior, const Skeleton& skel) {
    if (frame.numel() != kSparseDim) throw ShapeError("stream_step: frame must have 54 values");
    if (!frame.all_finite()) throw DomainError("stream_step: non-finite frame");
    const int t_len = model.cfg.t_window;
    state.buffer.push_back(frame);
    while (state.buffer.size() > static_cast<std::size_t>(t_len) + 1) state.buffer.pop_front();
    ++state.frame_count;

    if (state.buffer.size() < static_cast<std::size_t>(t_len))
        return rest_pose_output<T>(skel, model.cfg.multi_head);

    auto window_from = [&](std::size_t first) {
        Tensor<T> w({static_cast<std::size_t>(t_len), kSparseDim});
        for (int r = 0; r < t_len; ++r)
            for (int c = 0; c < kSparseDim; ++c) w(r, c) = state.buffer[first + r].data[c];
        return w;
    };
    const Tensor<T> x_win = window_from(state.buffer.size() - t_len);
    Tensor<T> x_prev;
    const bool full_history =
        state.buffer.size() == static_cast<std::size_t>(t_len) + 1 && state.has_prev;
    if (full_history) x_prev = window_from(0);

    WindowInference<T> inf =
        infer_window(model, prior, x_win, full_history ? &x_prev : nullptr,
                     full_history ? &state.prev_theta : nullptr, state.blend_rng);

    if (!inf.rot.all_finite() || (inf.pos.numel() && !inf.pos.all_finite())) {
        StreamOutput<T> out =
            state.has_last_good ? state.last_good : rest_pose_output<T>(skel, model.cfg.multi_head);
        out.fault = true;
        return out;
    }

    state.prev_theta = assemble_theta(inf.rot, inf.pos);
    state.has_prev = true;

    StreamOutput<T> out;
    const std::size_t last = static_cast<std::size_t>(t_len) - 1;
    out.rot = Tensor<T>({1, kNumJoints * 6});
    for (int c = 0; c < kNumJoints * 6; ++c) out.rot(0, c) = inf.rot(last, c);
    if (inf.pos.numel()) {
        out.pos = Tensor<T>({1, kNumJoints * 3});
        for (int c = 0; c < kNumJoints * 3; ++c) out.pos(0, c) = inf.pos(last, c);
    }
    state.last_good = out;
    state.has_last_good = true;
    return out;
}

// Sparse rows for clip frames 1..N-1 (frame 0 only seeds the velocities).
template <typename T>
std::vector<Tensor<T>> sparse_frame_sequence(const MotionClip& clip, const Skeleton& skel) {
    std::vector<Tensor<T>> rows;
    GlobalPose prev = frame_pose(clip, skel, 0);
    for (int f = 1; f < clip.frame_count(); ++f) {
        GlobalPose cur = frame_pose(clip, skel, f);
        const auto row = sparse_row(prev, cur, clip.fps, skel);
        Tensor<T> t({1, kSparseDim});
        for (int c = 0; c < kSparseDim; ++c) t.data[c] = static_cast<T>(row[c]);
        rows.push_back(std::move(t));
        prev = std::move(cur);
    }
    return rows;
}

template <typename T>
struct SequenceOutput {
    std::vector<StreamOutput<T>> frames;  // aligned to clip frames 1..N-1
    int first_prediction = -1;            // index of the first non-placeholder entry
};

// Offline sliding-window evaluation: direct window indexing over the
// precomputed frame sequence, no ring buffer.
template <typename T>
SequenceOutput<T> offline_infer(const MotionClip& clip, MemMLP<T>& model, VqVae<T>& prior,
                                const Skeleton& skel, std::uint64_t blend_seed) {
    const int t_len = model.cfg.t_window;
    const std::vector<Tensor<T>> rows = sparse_frame_sequence<T>(clip, skel);
    Rng blend_rng(blend_seed);
    SequenceOutput<T> out;
    Tensor<T> prev_theta;
    bool has_prev = false;
    auto window_at = [&](int last_row) {
        Tensor<T> w({static_cast<std::size_t>(t_len), kSparseDim});
        for (int r = 0; r < t_len; ++r)
            for (int c = 0; c < kSparseDim; ++c)
                w(r, c) = rows[last_row - t_len + 1 + r].data[c];
        return w;
    };
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        if (i + 1 < t_len) {
            out.frames.push_back(rest_pose_output<T>(skel, model.cfg.multi_head));
            continue;
        }
        const Tensor<T> x_win = window_at(i);
        Tensor<T> x_prev;
        const bool full_history = i >= t_len && has_prev;
        if (full_history) x_prev = window_at(i - 1);
        WindowInference<T> inf =
            infer_window(model, prior, x_win, full_history ? &x_prev : nullptr,
                         full_history ? &prev_theta : nullptr, blend_rng);
        StreamOutput<T> frame;
        if (!inf.rot.all_finite() || (inf.pos.numel() && !inf.pos.all_finite())) {
            frame = out.frames.empty() || out.frames.back().placeholder
                        ? rest_pose_output<T>(skel, model.cfg.multi_head)
                        : out.frames.back();
            frame.fault = true;
            out.frames.push_back(frame);
            continue;
        }
        prev_theta = assemble_theta(inf.rot, inf.pos);
        has_prev = true;
        const std::size_t last = static_cast<std::size_t>(t_len) - 1;
        frame.rot = Tensor<T>({1, kNumJoints * 6});
        for (int c = 0; c < kNumJoints * 6; ++c) frame.rot(0, c) = inf.rot(last, c);
        if (inf.pos.numel()) {
            frame.pos = Tensor<T>({1, kNumJoints * 3});
            for (int c = 0; c < kNumJoints * 3; ++c) frame.pos(0, c) = inf.pos(last, c);
        }
        if (out.first_prediction < 0) out.first_prediction = i;
        out.frames.push_back(std::move(frame));
    }
    return out;
}

// ---- analytic FLOPs (multiply-add) accounting ----

// Closed-form MAC count for one window inference: input projection, L
// MLP-blocks, memory blocks + fusions, both predictor branches, and the
// prior encoder when memory blocks are configured. Convolutions use the
// full-tap convention (padded rows included) to match the instrumented
// counter.
inline std::uint64_t flops_count(const MemMLPConfig& mc, const VqVaeConfig& pc) {
    const std::uint64_t t = static_cast<std::uint64_t>(mc.t_window);
    const std::uint64_t d = static_cast<std::uint64_t>(mc.d);
    const std::uint64_t k = static_cast<std::uint64_t>(mc.conv_kernel);
    const std::uint64_t block = t * k * d * d + t * d * d;
    std::uint64_t total = t * 54 * d;                     // input projection
    total += static_cast<std::uint64_t>(mc.depth) * block;
    const std::uint64_t latent = static_cast<std::uint64_t>(mc.latent);
    for (std::size_t i = 0; i < mc.memory_layers.size(); ++i) {
        total += t * 54 * d;        // X projection
        total += t * 198 * d;       // Theta projection
        total += latent * d;        // code-vector projection (single row)
        total += t * (2 * d) * d;   // fusion after concatenation
    }
    auto branch = [&](std::uint64_t out_dim) {
        return static_cast<std::uint64_t>(mc.predictor_depth) * block + t * d * out_dim;
    };
    total += branch(static_cast<std::uint64_t>(kNumJoints) * 6);
    if (mc.multi_head) total += branch(static_cast<std::uint64_t>(kNumJoints) * 3);
    if (!mc.memory_layers.empty()) {
        const std::uint64_t w = static_cast<std::uint64_t>(pc.width);
        total += t * 252 * w;  // first encoder block
        total += static_cast<std::uint64_t>(pc.l_enc - 1) * t * w * w;
        total += w * static_cast<std::uint64_t>(pc.latent);  // pooled projection
    }
    return total;
}

// ---- latency benchmark ----

struct BenchReport {
    double mean_ms = 0;
    double median_ms = 0;
    double p99_ms = 0;
    double fps = 0;
    int frames = 0;
    int warmup = 0;

    nlohmann::json to_json() const {
        return {{"mean_ms", mean_ms}, {"median_ms", median_ms}, {"p99_ms", p99_ms},
                {"fps", fps},         {"frames", frames},       {"warmup", warmup}};
    }

    std::string to_text() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "frames %d\nwarmup %d\nmean_ms %.4f\nmedian_ms %.4f\np99_ms %.4f\nfps %.2f\n",
                      frames, warmup, mean_ms, median_ms, p99_ms, fps);
        return buf;
    }
};

template <typename T>
BenchReport bench(MemMLP<T>& model, VqVae<T>& prior, const Skeleton& skel, int n_frames,
                  int warmup, std::uint64_t seed = 7) {
    if (n_frames < 1) throw RangeError("bench: needs at least one frame");
    const double fps = 60.0;
    const int prime = model.cfg.t_window + 1;  // cold-start frames are not inference
    const int needed = prime + n_frames + warmup + 2;
    MotionClip clip = synth_generate(SynthKind::walk, seed, needed / fps + 1.0, fps, skel);
    const auto rows = sparse_frame_sequence<T>(clip, skel);
    StreamState<T> state(seed);
    std::vector<double> samples;
    samples.reserve(n_frames);
    int fed = 0;
    for (int i = 0; fed < prime + warmup + n_frames; ++i, ++fed) {
        const Tensor<T>& row = rows[i % rows.size()];
        const auto t0 = std::chrono::steady_clock::now();
        (void)stream_step(state, row, model, prior, skel);
        const auto t1 = std::chrono::steady_clock::now();
        if (fed >= prime + warmup)
            samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    BenchReport rep;
    rep.frames = n_frames;
    rep.warmup = warmup;
    double sum = 0;
    for (double v : samples) sum += v;
    rep.mean_ms = sum / samples.size();
    rep.median_ms = sorted[sorted.size() / 2];
    rep.p99_ms = sorted[std::min(sorted.size() - 1,
                                 static_cast<std::size_t>(sorted.size() * 0.99))];
    rep.fps = 1000.0 / rep.mean_ms;
    return rep;
}

}  // namespace memmlp
