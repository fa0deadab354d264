#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "memmlp/common.hpp"

// Rotation representations and conversions: axis-angle <-> matrix <-> 6D.
// The 6D form is the first two matrix columns; reconstruction runs
// Gram-Schmidt so any non-degenerate 6-vector maps back onto SO(3).

namespace memmlp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline bool is_rotation_matrix(const Mat3& r, double tol = 1e-6) {
    if (!r.allFinite()) return false;
    const Mat3 rtr = r.transpose() * r;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(r.determinant() - 1.0) <= tol;
}

// Rodrigues formula. Series expansion near zero keeps the map smooth.
inline Mat3 axis_angle_to_matrix(const Vec3& aa) {
    if (!aa.allFinite()) throw DomainError("axis_angle_to_matrix: non-finite input");
    const double theta2 = aa.squaredNorm();
    const double theta = std::sqrt(theta2);
    double a, b;  // sin(t)/t, (1-cos(t))/t^2
    if (theta < 1e-4) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    Mat3 k;
    k << 0.0, -aa.z(), aa.y(), aa.z(), 0.0, -aa.x(), -aa.y(), aa.x(), 0.0;
    return Mat3::Identity() + a * k + b * (k * k);
}

// Canonical inverse: angle in [0, pi]; at pi the axis sign is fixed by
// making its first nonzero component positive.
inline Vec3 matrix_to_axis_angle(const Mat3& r) {
    const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    if (theta < 1e-10) return Vec3::Zero();
    if (theta > kPi - 1e-6) {
        // Near pi the antisymmetric part vanishes; recover the axis from
        // the symmetric part R = 2*axis*axis^T - I + O(pi - theta).
        const Mat3 s = 0.5 * (r + Mat3::Identity());
        Vec3 axis(std::sqrt(std::max(0.0, s(0, 0))), std::sqrt(std::max(0.0, s(1, 1))),
                  std::sqrt(std::max(0.0, s(2, 2))));
        // Off-diagonal signs relative to the dominant component.
        int d = 0;
        if (axis.y() > axis.x()) d = 1;
        if (axis.z() > axis(d)) d = 2;
        if (d == 0) {
            axis.y() = std::copysign(axis.y(), s(0, 1));
            axis.z() = std::copysign(axis.z(), s(0, 2));
        } else if (d == 1) {
            axis.x() = std::copysign(axis.x(), s(0, 1));
            axis.z() = std::copysign(axis.z(), s(1, 2));
        } else {
            axis.x() = std::copysign(axis.x(), s(0, 2));
            axis.y() = std::copysign(axis.y(), s(1, 2));
        }
        axis.normalize();
        for (int i = 0; i < 3; ++i) {
            if (std::abs(axis(i)) > 1e-9) {
                if (axis(i) < 0.0) axis = -axis;
                break;
            }
        }
        return theta * axis;
    }
    Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    axis *= 0.5 / std::sin(theta);
    return theta * axis;
}

// First two columns, stacked.
inline Vec6 matrix_to_sixd(const Mat3& r) {
    Vec6 s;
    s.head<3>() = r.col(0);
    s.tail<3>() = r.col(1);
    return s;
}

inline Mat3 sixd_to_matrix(const Vec6& s) {
    const Vec3 u = s.head<3>();
    const Vec3 v = s.tail<3>();
    const double nu = u.norm();
    if (!s.allFinite() || nu < 1e-8) throw DomainError("sixd_to_matrix: degenerate first column");
    const Vec3 b1 = u / nu;
    Vec3 w = v - b1.dot(v) * b1;
    const double nw = w.norm();
    if (nw < 1e-8) throw DomainError("sixd_to_matrix: collinear columns");
    const Vec3 b2 = w / nw;
    Mat3 r;
    r.col(0) = b1;
    r.col(1) = b2;
    r.col(2) = b1.cross(b2);
    return r;
}

// a^T * b: the rotation carrying frame a onto frame b.
inline Mat3 relative_rotation(const Mat3& a, const Mat3& b) { return a.transpose() * b; }

inline Mat3 rot_x(double angle) { return axis_angle_to_matrix(Vec3(angle, 0, 0)); }
inline Mat3 rot_y(double angle) { return axis_angle_to_matrix(Vec3(0, angle, 0)); }
inline Mat3 rot_z(double angle) { return axis_angle_to_matrix(Vec3(0, 0, angle)); }

}  // namespace memmlp
