#pragma once

#include <cmath>
#include <deque>
#include <span>
#include <vector>

#include "memmlp/common.hpp"

// Limited-memory BFGS with two-loop recursion and backtracking Armijo line
// search. Accepted iterates never increase the objective.

namespace memmlp {

struct LbfgsConfig {
    int memory = 10;
    int max_iters = 15;
    double armijo_c = 1e-4;
    double shrink = 0.5;
    double grad_tol = 1e-8;
    int max_backtracks = 40;
    std::vector<double>* f_trace = nullptr;  // accepted objective values, if wanted
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

// fg(x, grad_out) -> f. grad_out has the same length as x.
template <typename F>
LbfgsResult lbfgs_minimize(F&& fg, std::vector<double> x0, const LbfgsConfig& cfg) {
    const std::size_t n = x0.size();
    std::vector<double> g(n), x = std::move(x0);
    double f = fg(std::span<const double>(x), std::span<double>(g));
    if (!std::isfinite(f)) throw DomainError("lbfgs: objective not finite at start");
    if (cfg.f_trace) cfg.f_trace->push_back(f);

    auto norm = [](std::span<const double> v) {
        double s = 0.0;
        for (double a : v) s += a * a;
        return std::sqrt(s);
    };

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> hist;

    LbfgsResult res;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        if (norm(g) <= cfg.grad_tol) {
            res.converged = true;
            break;
        }
        // Two-loop recursion for d = -H g.
        std::vector<double> q = g;
        std::vector<double> alpha(hist.size());
        for (std::size_t i = hist.size(); i-- > 0;) {
            const Pair& p = hist[i];
            double a = 0.0;
            for (std::size_t k = 0; k < n; ++k) a += p.s[k] * q[k];
            a *= p.rho;
            alpha[i] = a;
            for (std::size_t k = 0; k < n; ++k) q[k] -= a * p.y[k];
        }
        if (!hist.empty()) {
            const Pair& last = hist.back();
            double sy = 0.0, yy = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                sy += last.s[k] * last.y[k];
                yy += last.y[k] * last.y[k];
            }
            const double gamma = sy / yy;
            for (double& v : q) v *= gamma;
        }
        for (std::size_t i = 0; i < hist.size(); ++i) {
            const Pair& p = hist[i];
            double b = 0.0;
            for (std::size_t k = 0; k < n; ++k) b += p.y[k] * q[k];
            b *= p.rho;
            for (std::size_t k = 0; k < n; ++k) q[k] += (alpha[i] - b) * p.s[k];
        }
        std::vector<double> d(n);
        for (std::size_t k = 0; k < n; ++k) d[k] = -q[k];

        double gd = 0.0;
        for (std::size_t k = 0; k < n; ++k) gd += g[k] * d[k];
        if (gd >= 0.0) {  // not a descent direction; restart from steepest descent
            hist.clear();
            gd = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                d[k] = -g[k];
                gd -= g[k] * g[k];
            }
        }

        // Backtracking Armijo
        double t = 1.0;
        std::vector<double> x_new(n), g_new(n);
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < cfg.max_backtracks; ++ls) {
            for (std::size_t k = 0; k < n; ++k) x_new[k] = x[k] + t * d[k];
            f_new = fg(std::span<const double>(x_new), std::span<double>(g_new));
            if (std::isfinite(f_new) && f_new <= f + cfg.armijo_c * t * gd) {
                accepted = true;
                break;
            }
            t *= cfg.shrink;
        }
        if (!accepted) break;  // step too small to make progress

        Pair p;
        p.s.resize(n);
        p.y.resize(n);
        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            p.s[k] = x_new[k] - x[k];
            p.y[k] = g_new[k] - g[k];
            sy += p.s[k] * p.y[k];
            ss += p.s[k] * p.s[k];
            yy += p.y[k] * p.y[k];
        }
        if (sy > 1e-10 * std::sqrt(ss * yy)) {
            p.rho = 1.0 / sy;
            hist.push_back(std::move(p));
            if (static_cast<int>(hist.size()) > cfg.memory) hist.pop_front();
        } else {
            // Armijo alone cannot guarantee positive curvature; a stale
            // history then stalls the model, so restart it.
            hist.clear();
        }
        x = x_new;
        g = g_new;
        f = f_new;
        res.iterations = iter + 1;
        if (cfg.f_trace) cfg.f_trace->push_back(f);
    }
    if (norm(g) <= cfg.grad_tol) res.converged = true;
    res.x = std::move(x);
    res.f = f;
    return res;
}

}  // namespace memmlp
