#pragma once

#include "memmlp/ik.hpp"
#include "memmlp/metrics.hpp"
#include "memmlp/runtime.hpp"

// End-to-end helpers behind the eval/infer commands: run autoregressive
// inference over a clip, align predictions with ground truth, score them,
// and optionally refine rotations with IK against the predicted positions.

namespace memmlp {

struct EvalOptions {
    bool use_ik = false;            // refine rotations toward predicted positions
    bool rotation_pathway = false;  // realize positions through FK instead of the position branch
    int warmup_frames = 2;          // cold-start emissions excluded from scoring
    std::uint64_t blend_seed = 1;
    LbfgsConfig ik;
};

// Predictions aligned to clip frames [first_frame, N-1].
struct ClipPrediction {
    Tensor<double> rot;  // M x 132
    Tensor<double> pos;  // M x 66, empty for single-head models
    int first_frame = -1;
};

template <typename T>
ClipPrediction collect_predictions(const MotionClip& clip, MemMLP<T>& model, VqVae<T>& prior,
                                   const Skeleton& skel, std::uint64_t blend_seed) {
    const SequenceOutput<T> seq = offline_infer(clip, model, prior, skel, blend_seed);
    if (seq.first_prediction < 0)
        throw RangeError("collect_predictions: clip shorter than the model window");
    const int m = static_cast<int>(seq.frames.size()) - seq.first_prediction;
    ClipPrediction out;
    out.first_frame = seq.first_prediction + 1;  // sequence row i maps to clip frame i+1
    out.rot = Tensor<double>({static_cast<std::size_t>(m), kNumJoints * 6});
    const bool has_pos = model.cfg.multi_head;
    if (has_pos) out.pos = Tensor<double>({static_cast<std::size_t>(m), kNumJoints * 3});
    for (int r = 0; r < m; ++r) {
        const StreamOutput<T>& f = seq.frames[seq.first_prediction + r];
        for (int c = 0; c < kNumJoints * 6; ++c)
            out.rot(r, c) = static_cast<double>(f.rot(0, c));
        if (has_pos)
            for (int c = 0; c < kNumJoints * 3; ++c)
                out.pos(r, c) = static_cast<double>(f.pos(0, c));
    }
    return out;
}

struct GroundTruthRows {
    Tensor<double> rot;
    Tensor<double> pos;
};

inline GroundTruthRows ground_truth_rows(const MotionClip& clip, const Skeleton& skel,
                                         int first_frame, int count) {
    GroundTruthRows gt;
    gt.rot = Tensor<double>({static_cast<std::size_t>(count), kNumJoints * 6});
    gt.pos = Tensor<double>({static_cast<std::size_t>(count), kNumJoints * 3});
    for (int r = 0; r < count; ++r) {
        const GlobalPose g = frame_pose(clip, skel, first_frame + r);
        for (int j = 0; j < kNumJoints; ++j) {
            const Vec6 s = matrix_to_sixd(g.rot[j]);
            for (int k = 0; k < 6; ++k) gt.rot(r, 6 * j + k) = s(k);
            for (int k = 0; k < 3; ++k) gt.pos(r, 3 * j + k) = g.pos[j](k);
        }
    }
    return gt;
}

// Scores steady-state predictions: the first emissions run the memory blocks
// on the zero-tensor cold-start fallback, and that transient is a streaming
// artifact rather than a property of the motion, so `warmup_frames` of them
// are dropped before computing metrics.
template <typename T>
MetricsReport evaluate_clip(const MotionClip& clip, MemMLP<T>& model, VqVae<T>& prior,
                            const Skeleton& skel, const EvalOptions& opts = {}) {
    ClipPrediction pred = collect_predictions(clip, model, prior, skel, opts.blend_seed);
    const int skip = std::max(0, std::min<int>(opts.warmup_frames,
                                               static_cast<int>(pred.rot.rows()) - 4));
    if (skip > 0) {
        auto drop_rows = [&](Tensor<double>& t) {
            if (t.numel() == 0) return;
            Tensor<double> out({t.rows() - skip, t.cols()});
            for (std::size_t r = skip; r < t.rows(); ++r)
                for (std::size_t c = 0; c < t.cols(); ++c) out(r - skip, c) = t(r, c);
            t = std::move(out);
        };
        drop_rows(pred.rot);
        drop_rows(pred.pos);
        pred.first_frame += skip;
    }
    const GroundTruthRows gt =
        ground_truth_rows(clip, skel, pred.first_frame, static_cast<int>(pred.rot.rows()));
    if (opts.use_ik) {
        if (pred.pos.numel() == 0)
            throw ContractError("evaluate_clip: IK needs the position branch");
        const IkReport refined = ik_refine(pred.rot, pred.pos, skel, opts.ik);
        return evaluate(refined.rot6d, Tensor<double>(), gt.rot, gt.pos, clip.fps, skel);
    }
    if (opts.rotation_pathway || pred.pos.numel() == 0)
        return evaluate(pred.rot, Tensor<double>(), gt.rot, gt.pos, clip.fps, skel);
    return evaluate(pred.rot, pred.pos, gt.rot, gt.pos, clip.fps, skel);
}

// Streamed prediction written back out as a motion clip: local axis-angles
// recovered from the predicted global rotations, root translation from the
// predicted root position (zero for single-head models). Warmup frames keep
// the rest pose.
template <typename T>
MotionClip predict_clip(const MotionClip& input, MemMLP<T>& model, VqVae<T>& prior,
                        const Skeleton& skel, std::uint64_t blend_seed) {
    MotionClip out;
    out.fps = input.fps;
    out.name = input.name + "_pred";
    out.joint_names = skel.names;
    StreamState<T> state(blend_seed);
    const auto rows = sparse_frame_sequence<T>(input, skel);
    for (const auto& row : rows) {
        const StreamOutput<T> o = stream_step(state, row, model, prior, skel);
        ClipFrame frame;
        frame.rots.assign(kNumJoints, Vec3::Zero());
        std::vector<Mat3> global(kNumJoints);
        for (int j = 0; j < kNumJoints; ++j) {
            Vec6 s;
            for (int k = 0; k < 6; ++k) s(k) = static_cast<double>(o.rot(0, 6 * j + k));
            global[j] = sixd_to_matrix(s);
        }
        for (int j = 0; j < kNumJoints; ++j) {
            const Mat3 local =
                j == 0 ? global[0] : relative_rotation(global[skel.parent[j]], global[j]);
            frame.rots[j] = matrix_to_axis_angle(local);
        }
        if (o.pos.numel())
            frame.root = Vec3(o.pos(0, 0), o.pos(0, 1), o.pos(0, 2));
        out.frames.push_back(std::move(frame));
    }
    return out;
}

}  // namespace memmlp
