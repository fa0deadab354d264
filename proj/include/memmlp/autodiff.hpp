#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "memmlp/tensor.hpp"

// Reverse-mode tape. Ops record a backward closure at tensor granularity;
// backward() replays them in exact reverse creation order and accumulates
// gradients additively on fan-out. Multiply-add counts are tracked for the
// FLOPs accounting.

namespace memmlp {

template <typename T>
struct Parameter {
    std::string id;
    Tensor<T> value;
    Tensor<T> grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string name, Tensor<T> v)
        : id(std::move(name)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T{0}); }
};

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
public:
    // ---- leaves ----

    // Constant input: receives no gradient of its own.
    Var input(Tensor<T> v) { return push(std::move(v), nullptr); }

    // Leaf whose gradient is retrievable after backward (IK decision vars).
    Var variable(Tensor<T> v) {
        Var out = push(std::move(v), nullptr);
        nodes_[out.id].keep_grad = true;
        return out;
    }

    // Trainable leaf. Frozen parameters join as plain constants. The node is
    // cached so every use of a parameter within one tape shares a single leaf.
    Var param(Parameter<T>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var{it->second};
        Var out = push(Tensor<T>(p.value), nullptr);
        if (!p.frozen) nodes_[out.id].param = &p;
        param_nodes_[&p] = out.id;
        return out;
    }

    const Tensor<T>& value(Var v) const { return nodes_.at(check(v)).value; }

    // Gradient of a `variable` leaf; valid after backward().
    const Tensor<T>& grad(Var v) const {
        const Node& n = nodes_.at(check(v));
        if (!n.keep_grad) throw ContractError("tape: gradient kept only for variable() leaves");
        return n.saved_grad;
    }

    std::uint64_t mac_count() const { return macs_; }
    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
        Tensor<T> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        return push(std::move(out), [a, b](Tape& t, std::int32_t self) {
            t.acc(a, t.grad_of(self));
            t.acc(b, t.grad_of(self));
        });
    }

    Var sub(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (!va.same_shape(vb)) throw ShapeError("sub: shape mismatch");
        Tensor<T> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
        return push(std::move(out), [a, b](Tape& t, std::int32_t self) {
            t.acc(a, t.grad_of(self));
            t.acc_neg(b, t.grad_of(self));
        });
    }

    Var mul(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch");
        Tensor<T> out = va;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
        return push(std::move(out), [a, b](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            t.acc_fn(a, [&](std::size_t i) { return g.data[i] * t.value(b).data[i]; });
            t.acc_fn(b, [&](std::size_t i) { return g.data[i] * t.value(a).data[i]; });
        });
    }

    Var neg(Var a) { return scale(a, T{-1}); }

    Var scale(Var a, T c) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), [a, c](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            t.acc_fn(a, [&](std::size_t i) { return g.data[i] * c; });
        });
    }

    // y = s * x with s a {1,1} scalar node broadcast over x.
    Var mul_scalar(Var x, Var s) {
        if (value(s).numel() != 1) throw ShapeError("mul_scalar: s must be scalar");
        const T sv = value(s).data[0];
        Tensor<T> out = value(x);
        for (auto& v : out.data) v *= sv;
        return push(std::move(out), [x, s](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const T sval = t.value(s).data[0];
            t.acc_fn(x, [&](std::size_t i) { return g.data[i] * sval; });
            T dot{0};
            for (std::size_t i = 0; i < g.numel(); ++i) dot += g.data[i] * t.value(x).data[i];
            t.acc_scalar(s, dot);
        });
    }

    Var silu(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = v * sigmoid(v);
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            t.acc_fn(a, [&](std::size_t i) {
                const T x = t.value(a).data[i];
                const T s = sigmoid(x);
                return g.data[i] * (s * (T{1} + x * (T{1} - s)));
            });
        });
    }

    Var exp(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = std::exp(v);
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            t.acc_fn(a, [&](std::size_t i) { return g.data[i] * t.value(self_var(self)).data[i]; });
        });
    }

    Var abs(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = std::abs(v);
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            t.acc_fn(a, [&](std::size_t i) {
                const T x = t.value(a).data[i];
                return x > T{0} ? g.data[i] : (x < T{0} ? -g.data[i] : T{0});
            });
        });
    }

    Var sqrt(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = std::sqrt(v);
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>& y = t.value(self_var(self));
            t.acc_fn(a, [&](std::size_t i) { return g.data[i] * T{0.5} / y.data[i]; });
        });
    }

    Var rsqrt(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = T{1} / std::sqrt(v);
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const Tensor<T>& y = t.value(self_var(self));
            t.acc_fn(a, [&](std::size_t i) {
                const T y3 = y.data[i] * y.data[i] * y.data[i];
                return g.data[i] * T{-0.5} * y3;
            });
        });
    }

    // Identity forward, zero backward.
    Var stopgrad(Var a) { return push(Tensor<T>(value(a)), nullptr); }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (va.cols() != vb.rows()) throw ShapeError("matmul: inner dimension mismatch");
        Tensor<T> out({va.rows(), vb.cols()});
        out.mat().noalias() = va.mat() * vb.mat();
        macs_ += va.rows() * va.cols() * vb.cols();
        return push(std::move(out), [a, b](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga({t.value(a).rows(), t.value(a).cols()});
            ga.mat().noalias() = g.mat() * t.value(b).mat().transpose();
            t.acc(a, ga);
            Tensor<T> gb({t.value(b).rows(), t.value(b).cols()});
            gb.mat().noalias() = t.value(a).mat().transpose() * g.mat();
            t.acc(b, gb);
        });
    }

    // y = x W + b, row-wise. x:{n,din} W:{din,dout} b:{1,dout}
    Var linear(Var x, Var w, Var b) {
        const Tensor<T>&vx = value(x), &vw = value(w), &vb = value(b);
        if (vx.cols() != vw.rows() || vb.cols() != vw.cols() || vb.rows() != 1)
            throw ShapeError("linear: shape mismatch");
        Tensor<T> out({vx.rows(), vw.cols()});
        out.mat().noalias() = vx.mat() * vw.mat();
        out.mat().rowwise() += vb.mat().row(0);
        macs_ += vx.rows() * vx.cols() * vw.cols();
        return push(std::move(out), [x, w, b](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> gx({t.value(x).rows(), t.value(x).cols()});
            gx.mat().noalias() = g.mat() * t.value(w).mat().transpose();
            t.acc(x, gx);
            Tensor<T> gw({t.value(w).rows(), t.value(w).cols()});
            gw.mat().noalias() = t.value(x).mat().transpose() * g.mat();
            t.acc(w, gw);
            Tensor<T> gb({1, g.cols()});
            gb.mat() = g.mat().colwise().sum();
            t.acc(b, gb);
        });
    }

    // Temporal convolution along rows, zero-padded, length preserving.
    // x:{n,din} w:{k,din,dout} b:{1,dout}; odd k required.
    Var conv1d(Var x, Var w, Var b) {
        const Tensor<T>&vx = value(x), &vw = value(w), &vb = value(b);
        if (vw.rank() != 3) throw ShapeError("conv1d: kernel must be {k,din,dout}");
        const std::size_t k = vw.shape[0], din = vw.shape[1], dout = vw.shape[2];
        if (k % 2 == 0) throw ShapeError("conv1d: kernel width must be odd");
        if (vx.cols() != din || vb.cols() != dout) throw ShapeError("conv1d: shape mismatch");
        const std::size_t n = vx.rows();
        const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
        Tensor<T> out({n, dout});
        out.mat().rowwise() = vb.mat().row(0);
        for (std::size_t j = 0; j < k; ++j) {
            // convolution (not correlation): tap j reads x at t + (half - j)
            const std::ptrdiff_t off = half - static_cast<std::ptrdiff_t>(j);
            auto [r0, cnt] = tap_range(n, off);
            if (cnt <= 0) continue;
            typename Tensor<T>::ConstEigenMap wj(vw.data.data() + j * din * dout,
                                                 static_cast<Eigen::Index>(din),
                                                 static_cast<Eigen::Index>(dout));
            out.mat().middleRows(r0, cnt).noalias() +=
                vx.mat().middleRows(r0 + off, cnt) * wj;
        }
        macs_ += n * k * din * dout;  // full-tap convention, padding included
        return push(std::move(out), [x, w, b, k, din, dout, half](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const std::size_t n = t.value(x).rows();
            Tensor<T> gx = Tensor<T>::zeros({n, din});
            Tensor<T> gw = Tensor<T>::zeros({k, din, dout});
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t off = half - static_cast<std::ptrdiff_t>(j);
                auto [r0, cnt] = tap_range(n, off);
                if (cnt <= 0) continue;
                typename Tensor<T>::ConstEigenMap wj(t.value(w).data.data() + j * din * dout,
                                                     static_cast<Eigen::Index>(din),
                                                     static_cast<Eigen::Index>(dout));
                typename Tensor<T>::EigenMap gwj(gw.data.data() + j * din * dout,
                                                 static_cast<Eigen::Index>(din),
                                                 static_cast<Eigen::Index>(dout));
                gx.mat().middleRows(r0 + off, cnt).noalias() +=
                    g.mat().middleRows(r0, cnt) * wj.transpose();
                gwj.noalias() += t.value(x).mat().middleRows(r0 + off, cnt).transpose() *
                                 g.mat().middleRows(r0, cnt);
            }
            t.acc(x, gx);
            t.acc(w, gw);
            Tensor<T> gb({1, dout});
            gb.mat() = g.mat().colwise().sum();
            t.acc(b, gb);
        });
    }

    // Per-row normalization (population variance) followed by affine gamma/beta.
    Var layernorm(Var x, Var gamma, Var beta, T eps = static_cast<T>(1e-5)) {
        const Tensor<T>&vx = value(x), &vg = value(gamma), &vb = value(beta);
        const std::size_t n = vx.rows(), d = vx.cols();
        if (vg.numel() != d || vb.numel() != d) throw ShapeError("layernorm: gamma/beta mismatch");
        Tensor<T> out({n, d});
        Tensor<T> xhat({n, d});
        Tensor<T> rstd({n, 1});
        for (std::size_t r = 0; r < n; ++r) {
            T mean{0};
            for (std::size_t c = 0; c < d; ++c) mean += vx(r, c);
            mean /= static_cast<T>(d);
            T var{0};
            for (std::size_t c = 0; c < d; ++c) {
                const T dv = vx(r, c) - mean;
                var += dv * dv;
            }
            var /= static_cast<T>(d);
            const T rs = T{1} / std::sqrt(var + eps);
            rstd(r, 0) = rs;
            for (std::size_t c = 0; c < d; ++c) {
                xhat(r, c) = (vx(r, c) - mean) * rs;
                out(r, c) = vg.data[c] * xhat(r, c) + vb.data[c];
            }
        }
        return push(std::move(out), [x, gamma, beta, xhat = std::move(xhat),
                                     rstd = std::move(rstd)](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const std::size_t n = g.rows(), d = g.cols();
            const Tensor<T>& vg = t.value(gamma);
            Tensor<T> gx({n, d});
            Tensor<T> ggamma = Tensor<T>::zeros({1, d});
            Tensor<T> gbeta = Tensor<T>::zeros({1, d});
            for (std::size_t r = 0; r < n; ++r) {
                T m1{0}, m2{0};
                for (std::size_t c = 0; c < d; ++c) {
                    const T h = g(r, c) * vg.data[c];
                    m1 += h;
                    m2 += h * xhat(r, c);
                    ggamma.data[c] += g(r, c) * xhat(r, c);
                    gbeta.data[c] += g(r, c);
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const T h = g(r, c) * vg.data[c];
                    gx(r, c) = (h - m1 - xhat(r, c) * m2) * rstd(r, 0);
                }
            }
            t.acc(x, gx);
            t.acc(gamma, ggamma);
            t.acc(beta, gbeta);
        });
    }

    // ---- reductions / reshaping ----

    Var sum(Var a) {
        T s{0};
        for (const T& v : value(a).data) s += v;
        return push(Tensor<T>::scalar(s), [a](Tape& t, std::int32_t self) {
            const T g = t.grad_of(self).data[0];
            t.acc_fn(a, [&](std::size_t) { return g; });
        });
    }

    Var mean_rows(Var a) {
        const Tensor<T>& va = value(a);
        const std::size_t n = va.rows(), d = va.cols();
        Tensor<T> out = Tensor<T>::zeros({1, d});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) out.data[c] += va(r, c);
        for (auto& v : out.data) v /= static_cast<T>(n);
        return push(std::move(out), [a, n](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const T inv = T{1} / static_cast<T>(n);
            t.acc_fn(a, [&](std::size_t i) { return g.data[i % g.numel()] * inv; });
        });
    }

    Var broadcast_rows(Var row, std::size_t n) {
        const Tensor<T>& vr = value(row);
        if (vr.rows() != 1) throw ShapeError("broadcast_rows: expected a single row");
        const std::size_t d = vr.cols();
        Tensor<T> out({n, d});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) out(r, c) = vr.data[c];
        return push(std::move(out), [row, d](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> gr = Tensor<T>::zeros({1, d});
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < d; ++c) gr.data[c] += g(r, c);
            t.acc(row, gr);
        });
    }

    Var concat_cols(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (va.rows() != vb.rows()) throw ShapeError("concat_cols: row mismatch");
        const std::size_t n = va.rows(), ca = va.cols(), cb = vb.cols();
        Tensor<T> out({n, ca + cb});
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < ca; ++c) out(r, c) = va(r, c);
            for (std::size_t c = 0; c < cb; ++c) out(r, ca + c) = vb(r, c);
        }
        return push(std::move(out), [a, b, ca, cb](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const std::size_t n = g.rows();
            Tensor<T> ga({n, ca}), gb({n, cb});
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < ca; ++c) ga(r, c) = g(r, c);
                for (std::size_t c = 0; c < cb; ++c) gb(r, c) = g(r, ca + c);
            }
            t.acc(a, ga);
            t.acc(b, gb);
        });
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw ShapeError("concat_rows: empty");
        const std::size_t d = value(parts[0]).cols();
        std::size_t n = 0;
        for (Var p : parts) {
            if (value(p).cols() != d) throw ShapeError("concat_rows: column mismatch");
            n += value(p).rows();
        }
        Tensor<T> out({n, d});
        std::size_t r0 = 0;
        for (Var p : parts) {
            const Tensor<T>& vp = value(p);
            std::copy(vp.data.begin(), vp.data.end(), out.data.begin() + r0 * d);
            r0 += vp.rows();
        }
        std::vector<Var> owned(parts.begin(), parts.end());
        return push(std::move(out), [owned = std::move(owned), d](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            std::size_t r0 = 0;
            for (Var p : owned) {
                const std::size_t rp = t.value(p).rows();
                Tensor<T> gp({rp, d});
                std::copy(g.data.begin() + r0 * d, g.data.begin() + (r0 + rp) * d, gp.data.begin());
                t.acc(p, gp);
                r0 += rp;
            }
        });
    }

    Var slice_cols(Var a, std::size_t c0, std::size_t len) {
        const Tensor<T>& va = value(a);
        if (c0 + len > va.cols()) throw ShapeError("slice_cols: out of range");
        const std::size_t n = va.rows();
        Tensor<T> out({n, len});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < len; ++c) out(r, c) = va(r, c0 + c);
        return push(std::move(out), [a, c0, len](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga = Tensor<T>::zeros(t.value(a).shape);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < len; ++c) ga(r, c0 + c) = g(r, c);
            t.acc(a, ga);
        });
    }

    Var select_cols(Var a, std::vector<std::size_t> idx) {
        const Tensor<T>& va = value(a);
        for (std::size_t c : idx)
            if (c >= va.cols()) throw ShapeError("select_cols: index out of range");
        const std::size_t n = va.rows(), m = idx.size();
        Tensor<T> out({n, m});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) out(r, c) = va(r, idx[c]);
        return push(std::move(out), [a, idx = std::move(idx)](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga = Tensor<T>::zeros(t.value(a).shape);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < idx.size(); ++c) ga(r, idx[c]) += g(r, c);
            t.acc(a, ga);
        });
    }

    Var select_row(Var a, std::size_t r) {
        const Tensor<T>& va = value(a);
        if (r >= va.rows()) throw ShapeError("select_row: out of range");
        const std::size_t d = va.cols();
        Tensor<T> out({1, d});
        for (std::size_t c = 0; c < d; ++c) out.data[c] = va(r, c);
        return push(std::move(out), [a, r, d](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga = Tensor<T>::zeros(t.value(a).shape);
            for (std::size_t c = 0; c < d; ++c) ga(r, c) = g.data[c];
            t.acc(a, ga);
        });
    }

    // Frame differences along rows: y[t] = x[t+1] - x[t].
    Var time_diff(Var a) {
        const Tensor<T>& va = value(a);
        const std::size_t n = va.rows(), d = va.cols();
        if (n < 2) throw ShapeError("time_diff: needs at least 2 rows");
        Tensor<T> out({n - 1, d});
        for (std::size_t r = 0; r + 1 < n; ++r)
            for (std::size_t c = 0; c < d; ++c) out(r, c) = va(r + 1, c) - va(r, c);
        return push(std::move(out), [a, d](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga = Tensor<T>::zeros(t.value(a).shape);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < d; ++c) {
                    ga(r + 1, c) += g(r, c);
                    ga(r, c) -= g(r, c);
                }
            t.acc(a, ga);
        });
    }

    Var reshape(Var a, std::vector<std::size_t> shape) {
        const Tensor<T>& va = value(a);
        if (Tensor<T>::numel_of(shape) != va.numel()) throw ShapeError("reshape: numel mismatch");
        Tensor<T> out(std::move(shape), std::vector<T>(va.data));
        return push(std::move(out), [a](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            Tensor<T> ga(t.value(a).shape, std::vector<T>(g.data));
            t.acc(a, ga);
        });
    }

    // ---- small 3-D helpers for the differentiable FK path ----

    Var cross3(Var a, Var b) {
        const Tensor<T>&va = value(a), &vb = value(b);
        if (va.numel() != 3 || vb.numel() != 3) throw ShapeError("cross3: expects 3-vectors");
        Tensor<T> out({1, 3});
        out.data[0] = va.data[1] * vb.data[2] - va.data[2] * vb.data[1];
        out.data[1] = va.data[2] * vb.data[0] - va.data[0] * vb.data[2];
        out.data[2] = va.data[0] * vb.data[1] - va.data[1] * vb.data[0];
        return push(std::move(out), [a, b](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            auto cross = [](const T* u, const T* v, T* w) {
                w[0] = u[1] * v[2] - u[2] * v[1];
                w[1] = u[2] * v[0] - u[0] * v[2];
                w[2] = u[0] * v[1] - u[1] * v[0];
            };
            Tensor<T> ga({1, 3}), gb({1, 3});
            cross(t.value(b).data.data(), g.data.data(), ga.data.data());  // b x g
            cross(g.data.data(), t.value(a).data.data(), gb.data.data());  // g x a
            t.acc(a, ga);
            t.acc(b, gb);
        });
    }

    // Assemble a 3x3 matrix whose columns are the three given row-vectors.
    Var mat3_cols(Var c0, Var c1, Var c2) {
        const Var cols[3] = {c0, c1, c2};
        Tensor<T> out({3, 3});
        for (int j = 0; j < 3; ++j) {
            const Tensor<T>& v = value(cols[j]);
            if (v.numel() != 3) throw ShapeError("mat3_cols: expects 3-vectors");
            for (int i = 0; i < 3; ++i) out(i, j) = v.data[i];
        }
        return push(std::move(out), [c0, c1, c2](Tape& t, std::int32_t self) {
            const Tensor<T>& g = t.grad_of(self);
            const Var cols[3] = {c0, c1, c2};
            for (int j = 0; j < 3; ++j) {
                Tensor<T> gc({1, 3});
                for (int i = 0; i < 3; ++i) gc.data[i] = g(i, j);
                t.acc(cols[j], gc);
            }
        });
    }

    Var dot(Var a, Var b) { return sum(mul(a, b)); }

    // ---- backprop ----

    void backward(Var loss) {
        if (value(loss).numel() != 1) throw ContractError("backward: loss must be a scalar");
        grads_.assign(nodes_.size(), Tensor<T>());
        grads_[loss.id] = Tensor<T>::full(value(loss).shape, T{1});
        for (std::int32_t id = loss.id; id >= 0; --id) {
            if (grads_[id].numel() == 0) continue;  // not reached from loss
            Node& n = nodes_[id];
            if (n.backward) n.backward(*this, id);
            if (n.param) {
                for (std::size_t i = 0; i < grads_[id].numel(); ++i)
                    n.param->grad.data[i] += grads_[id].data[i];
            }
            if (n.keep_grad) n.saved_grad = grads_[id];
        }
        // Variables never touched by the loss still report a zero gradient.
        for (auto& n : nodes_)
            if (n.keep_grad && n.saved_grad.numel() == 0) n.saved_grad = Tensor<T>::zeros(n.value.shape);
    }

private:
    struct Node {
        Tensor<T> value;
        std::function<void(Tape&, std::int32_t)> backward;
        Parameter<T>* param = nullptr;
        bool keep_grad = false;
        Tensor<T> saved_grad;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    std::unordered_map<const Parameter<T>*, std::int32_t> param_nodes_;
    std::uint64_t macs_ = 0;

    static T sigmoid(T x) { return T{1} / (T{1} + std::exp(-x)); }
    static Var self_var(std::int32_t id) { return Var{id}; }

    static std::pair<Eigen::Index, Eigen::Index> tap_range(std::size_t n, std::ptrdiff_t off) {
        const std::ptrdiff_t r0 = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t r1 = static_cast<std::ptrdiff_t>(n) - 1 - std::max<std::ptrdiff_t>(0, off);
        return {static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - r0 + 1)};
    }

    std::int32_t check(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw ContractError("tape: invalid var");
        return v.id;
    }

    Var push(Tensor<T> value, std::function<void(Tape&, std::int32_t)> bw) {
        nodes_.push_back(Node{std::move(value), std::move(bw), nullptr, false, {}});
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& grad_of(std::int32_t id) const { return grads_[id]; }

    Tensor<T>& grad_slot(Var v) {
        Tensor<T>& g = grads_[check(v)];
        if (g.numel() == 0) g = Tensor<T>::zeros(value(v).shape);
        return g;
    }

    void acc(Var v, const Tensor<T>& add_g) {
        Tensor<T>& g = grad_slot(v);
        for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += add_g.data[i];
    }

    void acc_neg(Var v, const Tensor<T>& add_g) {
        Tensor<T>& g = grad_slot(v);
        for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] -= add_g.data[i];
    }

    template <typename Fn>
    void acc_fn(Var v, Fn&& f) {
        Tensor<T>& g = grad_slot(v);
        for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += f(i);
    }

    void acc_scalar(Var v, T s) {
        Tensor<T>& g = grad_slot(v);
        g.data[0] += s;
    }
};

}  // namespace memmlp
