#pragma once

#include <memmlp/rotation.hpp>
#include <memmlp/tensor.hpp>

namespace testutil {

inline memmlp::Vec3 random_axis(memmlp::Rng& rng) {
    memmlp::Vec3 v(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6) v = memmlp::Vec3(rng.normal(), rng.normal(), rng.normal());
    return v.normalized();
}

// Uniform axis, angle away from the 0/pi branch points.
inline memmlp::Vec3 random_axis_angle(memmlp::Rng& rng) {
    return random_axis(rng) * rng.uniform(1e-3, memmlp::kPi - 1e-3);
}

inline memmlp::Mat3 random_rotation(memmlp::Rng& rng) {
    return memmlp::axis_angle_to_matrix(random_axis_angle(rng));
}

inline memmlp::Tensor<double> random_tensor(std::vector<std::size_t> shape, memmlp::Rng& rng,
                                            double lo = -1.0, double hi = 1.0) {
    return memmlp::Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

}  // namespace testutil
