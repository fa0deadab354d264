#pragma once

#include <span>
#include <string>

#include <json.hpp>

#include "memmlp/features.hpp"

// Evaluation metrics between predicted and ground-truth motion sequences.
// Rotations come in as T x 132 (22 joints x 6D), positions as T x 66 in
// meters; position errors are reported in cm, MPJRE in degrees, jitter in
// units of 10^2 m/s^3.

namespace memmlp {

struct MetricsReport {
    double mpjre = 0;     // deg
    double mpjpe = 0;     // cm
    double mpjve = 0;     // cm/s
    double hand_pe = 0;   // cm
    double upper_pe = 0;  // cm
    double lower_pe = 0;  // cm
    double root_pe = 0;   // cm
    double jitter = 0;    // 10^2 m/s^3
    int frames = 0;

    nlohmann::json to_json() const {
        return {{"mpjre_deg", mpjre},   {"mpjpe_cm", mpjpe},     {"mpjve_cm_s", mpjve},
                {"hand_pe_cm", hand_pe}, {"upper_pe_cm", upper_pe}, {"lower_pe_cm", lower_pe},
                {"root_pe_cm", root_pe}, {"jitter_1e2_m_s3", jitter}, {"frames", frames}};
    }

    std::string to_text() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "mpjre_deg %.6f\nmpjpe_cm %.6f\nmpjve_cm_s %.6f\nhand_pe_cm %.6f\n"
                      "upper_pe_cm %.6f\nlower_pe_cm %.6f\nroot_pe_cm %.6f\n"
                      "jitter_1e2_m_s3 %.6f\nframes %d\n",
                      mpjre, mpjpe, mpjve, hand_pe, upper_pe, lower_pe, root_pe, jitter, frames);
        return buf;
    }
};

namespace detail {
inline void check_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}
}  // namespace detail

// Mean geodesic angle, degrees: acos((tr(Ra^T Rb) - 1) / 2).
inline double mpjre(const Tensor<double>& pred_rot, const Tensor<double>& gt_rot) {
    detail::check_same(pred_rot, gt_rot, "mpjre");
    const std::size_t n = pred_rot.rows();
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t)
        for (int j = 0; j < kNumJoints; ++j) {
            Vec6 a, b;
            for (int k = 0; k < 6; ++k) {
                a(k) = pred_rot(t, 6 * j + k);
                b(k) = gt_rot(t, 6 * j + k);
            }
            const Mat3 ra = sixd_to_matrix(a);
            const Mat3 rb = sixd_to_matrix(b);
            const double c = std::clamp((relative_rotation(ra, rb).trace() - 1.0) * 0.5, -1.0, 1.0);
            acc += std::acos(c);
        }
    return acc / static_cast<double>(n * kNumJoints) * 180.0 / kPi;
}

inline double region_pe(const Tensor<double>& pred_pos, const Tensor<double>& gt_pos,
                        std::span<const int> joints) {
    detail::check_same(pred_pos, gt_pos, "region_pe");
    if (joints.empty()) throw ContractError("region_pe: empty joint set");
    const std::size_t n = pred_pos.rows();
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t)
        for (int j : joints) {
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double d = pred_pos(t, 3 * j + k) - gt_pos(t, 3 * j + k);
                d2 += d * d;
            }
            acc += std::sqrt(d2);
        }
    return acc / static_cast<double>(n * joints.size()) * 100.0;
}

inline double mpjpe(const Tensor<double>& pred_pos, const Tensor<double>& gt_pos) {
    std::vector<int> all(kNumJoints);
    std::iota(all.begin(), all.end(), 0);
    return region_pe(pred_pos, gt_pos, all);
}

inline double mpjve(const Tensor<double>& pred_pos, const Tensor<double>& gt_pos, double fps) {
    detail::check_same(pred_pos, gt_pos, "mpjve");
    const std::size_t n = pred_pos.rows();
    if (n < 2) throw RangeError("mpjve: needs at least 2 frames");
    double acc = 0.0;
    for (std::size_t t = 0; t + 1 < n; ++t)
        for (int j = 0; j < kNumJoints; ++j) {
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double dp = pred_pos(t + 1, 3 * j + k) - pred_pos(t, 3 * j + k);
                const double dg = gt_pos(t + 1, 3 * j + k) - gt_pos(t, 3 * j + k);
                d2 += (dp - dg) * (dp - dg);
            }
            acc += std::sqrt(d2);
        }
    return acc / static_cast<double>((n - 1) * kNumJoints) * fps * 100.0;
}

// Mean norm of the third finite difference scaled by fps^3, divided by 100
// for the 10^2 m/s^3 reporting scale.
inline double jitter(const Tensor<double>& pos, double fps) {
    const std::size_t n = pos.rows();
    if (n < 4) throw RangeError("jitter: needs at least 4 frames");
    const std::size_t joints = pos.cols() / 3;
    double acc = 0.0;
    for (std::size_t t = 0; t + 3 < n; ++t)
        for (std::size_t j = 0; j < joints; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                const std::size_t c = 3 * j + k;
                const double d = pos(t + 3, c) - 3.0 * pos(t + 2, c) + 3.0 * pos(t + 1, c) - pos(t, c);
                d2 += d * d;
            }
            acc += std::sqrt(d2) * fps * fps * fps;
        }
    return acc / static_cast<double>((n - 3) * joints) / 100.0;
}

// Positions for rotation-only predictions come from FK with the ground-truth
// root translation.
inline Tensor<double> positions_from_rotations(const Tensor<double>& rot6d,
                                               std::span<const Vec3> root_pos,
                                               const Skeleton& skel) {
    const std::size_t n = rot6d.rows();
    if (root_pos.size() != n) throw ShapeError("positions_from_rotations: root count mismatch");
    Tensor<double> pos({n, static_cast<std::size_t>(kNumJoints * 3)});
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<Mat3> global(kNumJoints), local(kNumJoints);
        for (int j = 0; j < kNumJoints; ++j) {
            Vec6 s;
            for (int k = 0; k < 6; ++k) s(k) = rot6d(t, 6 * j + k);
            global[j] = sixd_to_matrix(s);
        }
        // Predicted rotations are global; FK consumes locals.
        local[0] = global[0];
        for (int j = 1; j < kNumJoints; ++j)
            local[j] = relative_rotation(global[skel.parent[j]], global[j]);
        GlobalPose g = forward_kinematics(skel, local, root_pos[t]);
        for (int j = 0; j < kNumJoints; ++j)
            for (int k = 0; k < 3; ++k) pos(t, 3 * j + k) = g.pos[j](k);
    }
    return pos;
}

// Aggregate report. pred_pos may be empty for rotation-only predictions, in
// which case positions are realized through FK using gt root translations.
inline MetricsReport evaluate(const Tensor<double>& pred_rot, const Tensor<double>& pred_pos,
                              const Tensor<double>& gt_rot, const Tensor<double>& gt_pos,
                              double fps, const Skeleton& skel) {
    if (pred_rot.rows() != gt_rot.rows()) throw ShapeError("evaluate: misaligned lengths");
    Tensor<double> pos = pred_pos;
    if (pos.numel() == 0) {
        std::vector<Vec3> roots;
        for (std::size_t t = 0; t < gt_pos.rows(); ++t)
            roots.emplace_back(gt_pos(t, 0), gt_pos(t, 1), gt_pos(t, 2));
        pos = positions_from_rotations(pred_rot, roots, skel);
    }
    MetricsReport r;
    r.frames = static_cast<int>(pred_rot.rows());
    r.mpjre = mpjre(pred_rot, gt_rot);
    r.mpjpe = mpjpe(pos, gt_pos);
    r.mpjve = mpjve(pos, gt_pos, fps);
    const std::vector<int> hands{skel.left_hand, skel.right_hand};
    const std::vector<int> root{0};
    r.hand_pe = region_pe(pos, gt_pos, hands);
    r.upper_pe = region_pe(pos, gt_pos, skel.upper);
    r.lower_pe = region_pe(pos, gt_pos, skel.lower);
    r.root_pe = region_pe(pos, gt_pos, root);
    r.jitter = jitter(pos, fps);
    return r;
}

}  // namespace memmlp
