#pragma once

#include <atomic>
#include <mutex>
#include <thread>
#include <vector>

#include "memmlp/clip.hpp"
#include "memmlp/tensor.hpp"

// Sparse-input windows X (T x 54) and full-body targets (T x 198).
//
// Sparse layout per tracked joint j in (head, left hand, right hand):
//   [ p_j (3) | theta_j 6D (6) | v_j (3) | w_j (6) ]          -> 18 * 3 = 54
// Target layout per joint i in skeleton order:
//   [ theta_i 6D (6) | p_i (3) ]                              -> 9 * 22 = 198
//
// Velocities are fps-normalized. The angular velocity is a 6D delta,
// sixd(R_prev^T R_cur) - sixd(I), scaled by fps, so it is exactly zero for
// a constant pose.

namespace memmlp {

inline constexpr int kSparseDim = 54;
inline constexpr int kTargetDim = 198;

inline GlobalPose frame_pose(const MotionClip& clip, const Skeleton& skel, int f) {
    if (f < 0 || f >= clip.frame_count()) throw RangeError("frame_pose: frame out of range");
    std::vector<Mat3> local(kNumJoints);
    for (int i = 0; i < kNumJoints; ++i) local[i] = axis_angle_to_matrix(clip.frames[f].rots[i]);
    return forward_kinematics(skel, local, clip.frames[f].root);
}

// One 54-dim sparse row from the pose at a frame and its predecessor.
inline std::array<double, kSparseDim> sparse_row(const GlobalPose& prev, const GlobalPose& cur,
                                                 double fps, const Skeleton& skel) {
    static const Vec6 id6 = (Vec6() << 1, 0, 0, 0, 1, 0).finished();
    std::array<double, kSparseDim> row{};
    int c = 0;
    for (int j : skel.tracked()) {
        const Vec3& p = cur.pos[j];
        const Vec6 theta = matrix_to_sixd(cur.rot[j]);
        const Vec3 v = (cur.pos[j] - prev.pos[j]) * fps;
        const Vec6 w = (matrix_to_sixd(relative_rotation(prev.rot[j], cur.rot[j])) - id6) * fps;
        for (int k = 0; k < 3; ++k) row[c++] = p(k);
        for (int k = 0; k < 6; ++k) row[c++] = theta(k);
        for (int k = 0; k < 3; ++k) row[c++] = v(k);
        for (int k = 0; k < 6; ++k) row[c++] = w(k);
    }
    return row;
}

inline std::array<double, kTargetDim> target_row(const GlobalPose& cur) {
    std::array<double, kTargetDim> row{};
    int c = 0;
    for (int i = 0; i < kNumJoints; ++i) {
        const Vec6 theta = matrix_to_sixd(cur.rot[i]);
        for (int k = 0; k < 6; ++k) row[c++] = theta(k);
        for (int k = 0; k < 3; ++k) row[c++] = cur.pos[i](k);
    }
    return row;
}

// Window of sparse rows for frames (end-T+1 .. end); frame end-T supplies
// the velocity at the window start.
inline Tensor<double> extract_sparse(const MotionClip& clip, const Skeleton& skel, int end,
                                     int t_window) {
    if (t_window < 2) throw RangeError("extract_sparse: window must have T >= 2");
    if (end - t_window < 0 || end >= clip.frame_count())
        throw RangeError("extract_sparse: window out of range");
    Tensor<double> out({static_cast<std::size_t>(t_window), kSparseDim});
    GlobalPose prev = frame_pose(clip, skel, end - t_window);
    for (int r = 0; r < t_window; ++r) {
        const int f = end - t_window + 1 + r;
        GlobalPose cur = frame_pose(clip, skel, f);
        const auto row = sparse_row(prev, cur, clip.fps, skel);
        for (int c = 0; c < kSparseDim; ++c) out(r, c) = row[c];
        prev = std::move(cur);
    }
    return out;
}

inline Tensor<double> extract_targets(const MotionClip& clip, const Skeleton& skel, int end,
                                      int t_window) {
    if (t_window < 2) throw RangeError("extract_targets: window must have T >= 2");
    if (end - t_window + 1 < 0 || end >= clip.frame_count())
        throw RangeError("extract_targets: window out of range");
    Tensor<double> out({static_cast<std::size_t>(t_window), kTargetDim});
    for (int r = 0; r < t_window; ++r) {
        const auto row = target_row(frame_pose(clip, skel, end - t_window + 1 + r));
        for (int c = 0; c < kTargetDim; ++c) out(r, c) = row[c];
    }
    return out;
}

// Column indices of the 6D-rotation / position slots in a T x 198 target.
inline const std::vector<std::size_t>& target_rot_cols() {
    static const std::vector<std::size_t> cols = [] {
        std::vector<std::size_t> c;
        for (int i = 0; i < kNumJoints; ++i)
            for (int k = 0; k < 6; ++k) c.push_back(static_cast<std::size_t>(9 * i + k));
        return c;
    }();
    return cols;
}

inline const std::vector<std::size_t>& target_pos_cols() {
    static const std::vector<std::size_t> cols = [] {
        std::vector<std::size_t> c;
        for (int i = 0; i < kNumJoints; ++i)
            for (int k = 0; k < 3; ++k) c.push_back(static_cast<std::size_t>(9 * i + 6 + k));
        return c;
    }();
    return cols;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_target(const Tensor<T>& target) {
    const std::size_t t_len = target.rows();
    Tensor<T> rot({t_len, kNumJoints * 6});
    Tensor<T> pos({t_len, kNumJoints * 3});
    for (std::size_t r = 0; r < t_len; ++r)
        for (int i = 0; i < kNumJoints; ++i) {
            for (int k = 0; k < 6; ++k) rot(r, 6 * i + k) = target(r, 9 * i + k);
            for (int k = 0; k < 3; ++k) pos(r, 3 * i + k) = target(r, 9 * i + 6 + k);
        }
    return {std::move(rot), std::move(pos)};
}

// Joint-major (theta_i ++ p_i) window from rotation/position rows; position
// slots fall back to zero when no positions are available.
template <typename T>
Tensor<T> assemble_theta(const Tensor<T>& rot, const Tensor<T>& pos) {
    const std::size_t t_len = rot.rows();
    Tensor<T> out({t_len, kTargetDim});
    for (std::size_t r = 0; r < t_len; ++r)
        for (int i = 0; i < kNumJoints; ++i) {
            for (int k = 0; k < 6; ++k) out(r, 9 * i + k) = rot(r, 6 * i + k);
            for (int k = 0; k < 3; ++k)
                out(r, 9 * i + 6 + k) = pos.numel() ? pos(r, 3 * i + k) : T{0};
        }
    return out;
}

template <typename T>
struct WindowSample {
    Tensor<T> x;            // T x 54, window ending at end_frame
    Tensor<T> target;       // T x 198
    Tensor<T> x_prev;       // T x 54, window ending at end_frame - 1
    Tensor<T> target_prev;  // T x 198, ground-truth Theta^{t-1}
    int clip_id = -1;
    int end_frame = -1;
};

template <typename T>
struct Dataset {
    std::vector<WindowSample<T>> samples;
    int skipped_clips = 0;
};

// Enumerate window pairs with the given stride. A window ending at frame e
// needs frames e-T-1 .. e (one step of lookback for the previous window and
// one more for its velocities), so the first valid end frame is T+1.
// Assembly may fan out over worker threads per clip; the sample order is
// clip-major either way.
template <typename T>
Dataset<T> make_dataset(std::span<const MotionClip> clips, const Skeleton& skel, int t_window,
                        int stride, int threads = 1) {
    if (stride < 1) throw RangeError("make_dataset: stride must be >= 1");
    std::vector<std::vector<WindowSample<T>>> per_clip(clips.size());
    std::vector<int> skipped(std::max<std::size_t>(1, clips.size()), 0);
    auto extract_clip = [&](std::size_t ci) {
        const MotionClip& clip = clips[ci];
        const int first_end = t_window + 1;
        if (first_end >= clip.frame_count()) {
            skipped[ci] = 1;
            return;
        }
        for (int e = first_end; e < clip.frame_count(); e += stride) {
            WindowSample<T> s;
            s.x = extract_sparse(clip, skel, e, t_window).template cast<T>();
            s.target = extract_targets(clip, skel, e, t_window).template cast<T>();
            s.x_prev = extract_sparse(clip, skel, e - 1, t_window).template cast<T>();
            s.target_prev = extract_targets(clip, skel, e - 1, t_window).template cast<T>();
            s.clip_id = static_cast<int>(ci);
            s.end_frame = e;
            per_clip[ci].push_back(std::move(s));
        }
    };
    if (threads <= 1 || clips.size() <= 1) {
        for (std::size_t ci = 0; ci < clips.size(); ++ci) extract_clip(ci);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        const int n_workers = std::min<int>(threads, static_cast<int>(clips.size()));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                try {
                    for (std::size_t ci = next.fetch_add(1); ci < clips.size();
                         ci = next.fetch_add(1))
                        extract_clip(ci);
                } catch (...) {
                    std::scoped_lock lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    Dataset<T> ds;
    for (std::size_t ci = 0; ci < clips.size(); ++ci) {
        ds.skipped_clips += skipped[ci];
        for (auto& s : per_clip[ci]) ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace memmlp
