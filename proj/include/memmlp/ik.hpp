#pragma once

#include <vector>

#include "memmlp/autodiff.hpp"
#include "memmlp/lbfgs.hpp"
#include "memmlp/metrics.hpp"

// Inverse-kinematics refinement: per-frame L-BFGS over local 6D rotations,
// initialized from the rotation branch and targeting the position branch's
// joint locations. Gradients flow through a tape-built FK so the optimizer
// sees exact derivatives of the Gram-Schmidt + kinematic chain.

namespace memmlp {

// 6-vector -> orthonormal 3x3 on the tape (columns b1, b2, b1 x b2).
template <typename T>
Var gram_schmidt_tape(Tape<T>& tape, Var v6) {
    Var c0 = tape.slice_cols(v6, 0, 3);
    Var c1 = tape.slice_cols(v6, 3, 3);
    Var n0 = tape.mul_scalar(c0, tape.rsqrt(tape.dot(c0, c0)));
    Var u1 = tape.sub(c1, tape.mul_scalar(n0, tape.dot(n0, c1)));
    Var n1 = tape.mul_scalar(u1, tape.rsqrt(tape.dot(u1, u1)));
    Var n2 = tape.cross3(n0, n1);
    return tape.mat3_cols(n0, n1, n2);
}

// Differentiable FK for one frame. x holds 22 local 6D rotations (1 x 132);
// returns global positions stacked as a {22, 3} var.
template <typename T>
Var fk_positions_tape(Tape<T>& tape, Var x, const Skeleton& skel, const Vec3& root_pos) {
    const int n = skel.joint_count();
    std::vector<Var> global(n), pos(n);
    Tensor<T> root({1, 3});
    for (int k = 0; k < 3; ++k) root.data[k] = static_cast<T>(root_pos(k));
    for (int i = 0; i < n; ++i) {
        Var local = gram_schmidt_tape(tape, tape.slice_cols(x, static_cast<std::size_t>(6 * i), 6));
        if (i == 0) {
            global[0] = local;
            pos[0] = tape.input(root);
            continue;
        }
        const int p = skel.parent[i];
        global[i] = tape.matmul(global[p], local);
        Tensor<T> off({3, 1});
        for (int k = 0; k < 3; ++k) off.data[k] = static_cast<T>(skel.offset[i](k));
        // offset rotated by the parent frame, as a row vector
        Var step = tape.reshape(tape.matmul(global[p], tape.input(off)), {1, 3});
        pos[i] = tape.add(pos[p], step);
    }
    return tape.concat_rows(std::span<const Var>(pos));
}

struct IkReport {
    Tensor<double> rot6d;      // refined global 6D, T x 132
    int frames_refined = 0;    // frames where the objective strictly decreased
    int frames_fallback = 0;   // frames returned unchanged after an abort
};

// One frame: local 6D decision variables, squared position error objective.
inline double ik_objective(std::span<const double> x, std::span<double> grad,
                           const Skeleton& skel, const Vec3& root_pos,
                           const Tensor<double>& target_row_pos) {
    Tape<double> tape;
    Tensor<double> xt({1, x.size()});
    std::copy(x.begin(), x.end(), xt.data.begin());
    Var v = tape.variable(std::move(xt));
    Var positions = fk_positions_tape(tape, v, skel, root_pos);
    Var diff = tape.sub(positions, tape.input(target_row_pos));
    Var loss = tape.sum(tape.mul(diff, diff));
    const double f = tape.value(loss).data[0];
    if (!std::isfinite(f)) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return f;
    }
    tape.backward(loss);
    const Tensor<double>& g = tape.grad(v);
    std::copy(g.data.begin(), g.data.end(), grad.begin());
    return f;
}

inline IkReport ik_refine(const Tensor<double>& rot_init, const Tensor<double>& target_pos,
                          const Skeleton& skel, const LbfgsConfig& cfg = {}) {
    const std::size_t t_len = rot_init.rows();
    if (rot_init.cols() != static_cast<std::size_t>(kNumJoints * 6) ||
        target_pos.cols() != static_cast<std::size_t>(kNumJoints * 3) ||
        target_pos.rows() != t_len)
        throw ShapeError("ik_refine: bad shapes");

    IkReport report;
    report.rot6d = rot_init;
    for (std::size_t t = 0; t < t_len; ++t) {
        try {
            // Global 6D -> local 6D initial guess.
            std::vector<Mat3> global(kNumJoints);
            for (int j = 0; j < kNumJoints; ++j) {
                Vec6 s;
                for (int k = 0; k < 6; ++k) s(k) = rot_init(t, 6 * j + k);
                global[j] = sixd_to_matrix(s);
            }
            std::vector<double> x0(kNumJoints * 6);
            for (int j = 0; j < kNumJoints; ++j) {
                const Mat3 local = j == 0 ? global[0]
                                          : relative_rotation(global[skel.parent[j]], global[j]);
                const Vec6 s = matrix_to_sixd(local);
                for (int k = 0; k < 6; ++k) x0[6 * j + k] = s(k);
            }
            const Vec3 root(target_pos(t, 0), target_pos(t, 1), target_pos(t, 2));
            Tensor<double> target({static_cast<std::size_t>(kNumJoints), 3});
            for (int j = 0; j < kNumJoints; ++j)
                for (int k = 0; k < 3; ++k) target(j, k) = target_pos(t, 3 * j + k);

            auto objective = [&](std::span<const double> x, std::span<double> g) {
                return ik_objective(x, g, skel, root, target);
            };
            LbfgsResult res = lbfgs_minimize(objective, x0, cfg);

            // Optimized locals -> canonical global 6D output rows.
            std::vector<Mat3> local(kNumJoints);
            for (int j = 0; j < kNumJoints; ++j) {
                Vec6 s;
                for (int k = 0; k < 6; ++k) s(k) = res.x[6 * j + k];
                local[j] = sixd_to_matrix(s);
            }
            Mat3 g0 = local[0];
            std::vector<Mat3> refined(kNumJoints);
            refined[0] = g0;
            for (int j = 1; j < kNumJoints; ++j) refined[j] = refined[skel.parent[j]] * local[j];
            for (int j = 0; j < kNumJoints; ++j) {
                const Vec6 s = matrix_to_sixd(refined[j]);
                for (int k = 0; k < 6; ++k) report.rot6d(t, 6 * j + k) = s(k);
            }
            if (res.iterations > 0) ++report.frames_refined;
        } catch (const Error&) {
            ++report.frames_fallback;  // keep the initial rotations for this frame
        }
    }
    return report;
}

}  // namespace memmlp
