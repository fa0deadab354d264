#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "memmlp/common.hpp"

namespace memmlp {

// Dense row-major tensor. Rank is dynamic but nearly everything in the
// pipeline is 2-D (time x features); conv kernels are {k, d_in, d_out}.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(numel_of(shape)) {}
    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw ShapeError("tensor: data length != shape product");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1, 1}, {v}); }

    static Tensor uniform(std::vector<std::size_t> s, Rng& rng, T lo, T hi) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape.at(1); }

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    using EigenMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstEigenMap =
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    EigenMap mat() { return EigenMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
    ConstEigenMap mat() const {
        return ConstEigenMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape && a.data == b.data;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

}  // namespace memmlp
