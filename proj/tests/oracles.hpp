#pragma once

// Independent reference implementations used only by tests. Everything here
// is written from the textbook definitions, deliberately not sharing code
// with the library paths it checks.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "kanmix/tensor.hpp"

namespace oracle {

// Plain triple-loop matrix product.
inline kanmix::Tensor matmul_naive(const kanmix::Tensor& a, const kanmix::Tensor& b) {
    const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
    kanmix::Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < p; ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

// Cox-de Boor recursion straight from the definition:
//   B[i,0](x) = 1 if t_i <= x < t_{i+1} else 0
//   B[i,d](x) = (x-t_i)/(t_{i+d}-t_i) * B[i,d-1](x)
//             + (t_{i+d+1}-x)/(t_{i+d+1}-t_{i+1}) * B[i+1,d-1](x)
// Uniform extended knots have no repeats, so no 0/0 guards are needed.
inline double bspline_basis_recursive(const std::vector<double>& knots, std::size_t i, int degree,
                                      double x) {
    if (degree == 0) return (knots[i] <= x && x < knots[i + 1]) ? 1.0 : 0.0;
    const double left = (x - knots[i]) / (knots[i + degree] - knots[i]) *
                        bspline_basis_recursive(knots, i, degree - 1, x);
    const double right = (knots[i + degree + 1] - x) /
                         (knots[i + degree + 1] - knots[i + 1]) *
                         bspline_basis_recursive(knots, i + 1, degree - 1, x);
    return left + right;
}

// All basis values on a uniform extended grid, by the recursion above.
inline std::vector<double> bspline_all_recursive(double dmin, double dmax, int G, int k, double x) {
    const double h = (dmax - dmin) / G;
    std::vector<double> knots(static_cast<std::size_t>(G + 2 * k + 1));
    for (int i = 0; i < G + 2 * k + 1; ++i) knots[static_cast<std::size_t>(i)] = dmin + (i - k) * h;
    if (x < dmin) x = dmin;
    if (x > dmax) x = dmax;
    // The recursion's half-open intervals lose the right endpoint; nudge
    // inside, which is exact for polynomial pieces evaluated at dmax.
    if (x == dmax) x = std::nextafter(dmax, dmin);
    std::vector<double> out(static_cast<std::size_t>(G + k));
    for (int i = 0; i < G + k; ++i)
        out[static_cast<std::size_t>(i)] = bspline_basis_recursive(knots, static_cast<std::size_t>(i), k, x);
    return out;
}

inline double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }

// Per-edge scalar loop for one KAN layer, basis values from the recursive
// oracle rather than the library's evaluator.
inline kanmix::Tensor kan_layer_scalar(const kanmix::Tensor& coeffs, const kanmix::Tensor& wb,
                                       const kanmix::Tensor& ws, double dmin, double dmax, int G,
                                       int k, const kanmix::Tensor& x) {
    const std::size_t batch = x.dim(0), n_in = x.dim(1), n_out = wb.dim(0);
    kanmix::Tensor y({batch, n_out});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < n_out; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n_in; ++i) {
                const double t = x.at(b, i);
                const std::vector<double> basis = bspline_all_recursive(dmin, dmax, G, k, t);
                double spline = 0.0;
                for (std::size_t m = 0; m < basis.size(); ++m)
                    spline += coeffs.at(j, i, m) * basis[m];
                acc += wb.at(j, i) * silu_ref(t) + ws.at(j, i) * spline;
            }
            y.at(b, j) = acc;
        }
    return y;
}

// Flat-loop error metrics.
inline std::pair<double, double> metrics_flat(const kanmix::Tensor& pred,
                                              const kanmix::Tensor& target) {
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        se += d * d;
        ae += std::abs(d);
    }
    const double n = static_cast<double>(pred.size());
    return {se / n, ae / n};
}

// Central finite difference of a scalar function over a parameter vector
// accessed through get/set callbacks.
struct FdCheck {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t worst_index = 0;
};

// Relative error with a floored denominator: below the floor the comparison
// degrades to an absolute one, keeping finite-difference roundoff (~1e-10
// for O(1) losses) from dominating tiny gradients.
inline double fd_rel_err(double analytic, double numeric, double denom_floor = 1e-3) {
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), denom_floor);
    return std::abs(analytic - numeric) / denom;
}

inline FdCheck fd_check(std::size_t count, const std::function<double(std::size_t)>& get,
                        const std::function<void(std::size_t, double)>& set,
                        const std::function<double()>& eval,
                        const std::function<double(std::size_t)>& analytic_grad,
                        double eps = 1e-5) {
    FdCheck result;
    for (std::size_t i = 0; i < count; ++i) {
        const double orig = get(i);
        set(i, orig + eps);
        const double fplus = eval();
        set(i, orig - eps);
        const double fminus = eval();
        set(i, orig);
        const double numeric = (fplus - fminus) / (2.0 * eps);
        const double analytic = analytic_grad(i);
        const double rel = fd_rel_err(analytic, numeric);
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
            result.worst_index = i;
        }
    }
    return result;
}

} // namespace oracle
