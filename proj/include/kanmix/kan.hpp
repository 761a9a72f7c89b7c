#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "kanmix/errors.hpp"
#include "kanmix/rng.hpp"
#include "kanmix/spline.hpp"
#include "kanmix/tensor.hpp"

namespace kanmix {

/// One KAN layer: a matrix of learnable univariate edge functions
///   phi[j,i](t) = base_weight[j,i] * silu(t) + spline_weight[j,i] * sum_m coeffs[j,i,m] * B_m(t)
/// mapping n_in inputs to n_out outputs by summation at the output nodes.
/// All edges of a layer share one knot grid.
struct KanLayerParams {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    KnotGrid grid;
    Tensor coeffs;        // [n_out, n_in, G+k]
    Tensor base_weight;   // [n_out, n_in]
    Tensor spline_weight; // [n_out, n_in]

    KanLayerParams(std::size_t n_in_, std::size_t n_out_, KnotGrid grid_)
        : n_in(n_in_), n_out(n_out_), grid(std::move(grid_)),
          coeffs({n_out, n_in, static_cast<std::size_t>(grid.basis_count())}),
          base_weight({n_out, n_in}), spline_weight({n_out, n_in}) {
        if (n_in == 0 || n_out == 0)
            throw config_error("KanLayerParams: n_in and n_out must be positive");
        if (grid.order() < 1)
            throw config_error("KanLayerParams: order k=0 grids are rejected at build time "
                               "(the backward pass needs basis derivatives)");
    }
};

/// Spline coefficients start near zero so that each edge begins as a scaled
/// silu; the spline part grows during training.
inline KanLayerParams kan_init(std::size_t n_in, std::size_t n_out, KnotGrid grid, Rng& rng) {
    KanLayerParams p(n_in, n_out, std::move(grid));
    const double coeff_std = 0.1 / std::sqrt(static_cast<double>(p.grid.basis_count()));
    for (std::size_t i = 0; i < p.coeffs.size(); ++i) p.coeffs[i] = rng.normal(0.0, coeff_std);
    const double base = 1.0 / std::sqrt(static_cast<double>(n_in));
    for (std::size_t i = 0; i < p.base_weight.size(); ++i) p.base_weight[i] = base;
    for (std::size_t i = 0; i < p.spline_weight.size(); ++i) p.spline_weight[i] = 1.0;
    return p;
}

inline KanLayerParams kan_init(std::size_t n_in, std::size_t n_out, KnotGrid grid,
                               std::uint64_t seed) {
    Rng rng(seed);
    return kan_init(n_in, n_out, std::move(grid), rng);
}

/// Per-sample quantities cached by the forward pass and reused by backward.
struct KanLayerCache {
    Tensor x;                       // [B, n_in]
    std::vector<int> window_start;  // B*n_in
    std::vector<double> basis_vals; // B*n_in*(k+1)
    std::vector<double> silu_vals;  // B*n_in
};

namespace detail {
inline void kan_check_input(const KanLayerParams& p, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != p.n_in)
        throw dim_error("kan_layer_forward: input " + x.shape_string() + " incompatible with layer of n_in=" +
                        std::to_string(p.n_in));
}
} // namespace detail

/// y[b,j] = sum_i phi[j,i](x[b,i]).
inline Tensor kan_layer_forward(const KanLayerParams& p, const Tensor& x,
                                KanLayerCache* cache = nullptr) {
    detail::kan_check_input(p, x);
    const std::size_t batch = x.dim(0);
    const int k = p.grid.order();
    const std::size_t w = static_cast<std::size_t>(k) + 1;
    const std::size_t n_basis = static_cast<std::size_t>(p.grid.basis_count());

    std::vector<int> starts(batch * p.n_in);
    std::vector<double> bvals(batch * p.n_in * w);
    std::vector<double> svals(batch * p.n_in);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < p.n_in; ++i) {
            const std::size_t e = b * p.n_in + i;
            const double t = x.at(b, i);
            starts[e] = p.grid.active_window(t, &bvals[e * w], nullptr);
            svals[e] = silu(t);
        }

    Tensor y({batch, p.n_out});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < p.n_out; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < p.n_in; ++i) {
                const std::size_t e = b * p.n_in + i;
                const double* bw = &bvals[e * w];
                const double* c = p.coeffs.data() + ((j * p.n_in + i) * n_basis +
                                            static_cast<std::size_t>(starts[e]));
                double spline = 0.0;
                for (std::size_t r = 0; r < w; ++r) spline += c[r] * bw[r];
                acc += p.base_weight.at(j, i) * svals[e] + p.spline_weight.at(j, i) * spline;
            }
            y.at(b, j) = acc;
        }
    y.require_finite("kan_layer_forward");

    if (cache) {
        cache->x = x;
        cache->window_start = std::move(starts);
        cache->basis_vals = std::move(bvals);
        cache->silu_vals = std::move(svals);
    }
    return y;
}

/// Exact analytic gradients of kan_layer_forward. Gradients for the layer
/// parameters are accumulated into `grads` (same shapes as the layer);
/// returns the gradient w.r.t. x.
inline Tensor kan_layer_backward(const KanLayerParams& p, const KanLayerCache& cache,
                                 const Tensor& upstream, KanLayerParams& grads) {
    const std::size_t batch = cache.x.dim(0);
    if (upstream.rank() != 2 || upstream.dim(0) != batch || upstream.dim(1) != p.n_out)
        throw dim_error("kan_layer_backward: upstream " + upstream.shape_string() +
                        " incompatible with [" + std::to_string(batch) + "," +
                        std::to_string(p.n_out) + "]");
    const int k = p.grid.order();
    const std::size_t w = static_cast<std::size_t>(k) + 1;
    const std::size_t n_basis = static_cast<std::size_t>(p.grid.basis_count());

    Tensor grad_x({batch, p.n_in});
    std::vector<double> vtmp(w), dtmp(w);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < p.n_in; ++i) {
            const std::size_t e = b * p.n_in + i;
            const double t = cache.x.at(b, i);
            const double* bw = &cache.basis_vals[e * w];
            const int start = cache.window_start[e];
            // Derivatives of the active basis functions (clamp-point value
            // outside the domain, matching the forward's clamping).
            p.grid.active_window(t, vtmp.data(), dtmp.data());
            const double sv = cache.silu_vals[e];
            const double sg = silu_grad(t);
            double gx = 0.0;
            for (std::size_t j = 0; j < p.n_out; ++j) {
                const double u = upstream.at(b, j);
                if (u == 0.0) continue;
                const std::size_t edge = j * p.n_in + i;
                double spline = 0.0, dspline = 0.0;
                const double* c = p.coeffs.data() + (edge * n_basis + static_cast<std::size_t>(start));
                for (std::size_t r = 0; r < w; ++r) {
                    spline += c[r] * bw[r];
                    dspline += c[r] * dtmp[r];
                }
                grads.base_weight[edge] += u * sv;
                grads.spline_weight[edge] += u * spline;
                const double ws = p.spline_weight[edge];
                double* gc = &grads.coeffs[edge * n_basis + static_cast<std::size_t>(start)];
                for (std::size_t r = 0; r < w; ++r) gc[r] += u * ws * bw[r];
                gx += u * (p.base_weight[edge] * sg + ws * dspline);
            }
            grad_x.at(b, i) = gx;
        }
    grad_x.require_finite("kan_layer_backward");
    return grad_x;
}

/// Two-layer KAN stack [n_in -> hidden -> n_out]; the composition used by
/// every KAN site in the models. Hidden width defaults to 2*n_in+1.
struct TwoDepthKan {
    KanLayerParams inner;
    KanLayerParams outer;

    TwoDepthKan(KanLayerParams inner_, KanLayerParams outer_)
        : inner(std::move(inner_)), outer(std::move(outer_)) {
        if (inner.n_out != outer.n_in)
            throw dim_error("TwoDepthKan: inner n_out " + std::to_string(inner.n_out) +
                            " != outer n_in " + std::to_string(outer.n_in));
    }
};

inline TwoDepthKan make_two_depth_kan(std::size_t n_in, std::size_t n_out, const KnotGrid& grid,
                                      Rng& rng, std::size_t hidden = 0) {
    if (hidden == 0) hidden = 2 * n_in + 1;
    KanLayerParams inner = kan_init(n_in, hidden, grid, rng);
    KanLayerParams outer = kan_init(hidden, n_out, grid, rng);
    return TwoDepthKan(std::move(inner), std::move(outer));
}

struct TwoDepthKanCache {
    KanLayerCache inner;
    KanLayerCache outer;
};

inline Tensor two_depth_forward(const TwoDepthKan& kan, const Tensor& x,
                                TwoDepthKanCache* cache = nullptr) {
    Tensor h = kan_layer_forward(kan.inner, x, cache ? &cache->inner : nullptr);
    return kan_layer_forward(kan.outer, h, cache ? &cache->outer : nullptr);
}

inline Tensor two_depth_backward(const TwoDepthKan& kan, const TwoDepthKanCache& cache,
                                 const Tensor& upstream, TwoDepthKan& grads) {
    Tensor grad_h = kan_layer_backward(kan.outer, cache.outer, upstream, grads.outer);
    return kan_layer_backward(kan.inner, cache.inner, grad_h, grads.inner);
}

/// Same-shape zero parameters, for gradient accumulators and optimizer state.
inline KanLayerParams zeros_like(const KanLayerParams& p) {
    return KanLayerParams(p.n_in, p.n_out, p.grid);
}

inline TwoDepthKan zeros_like(const TwoDepthKan& kan) {
    return TwoDepthKan(zeros_like(kan.inner), zeros_like(kan.outer));
}

/// Visits every trainable tensor in a stable order.
template <class Fn>
void for_each_param(KanLayerParams& p, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".coeffs", p.coeffs);
    fn(prefix + ".base_weight", p.base_weight);
    fn(prefix + ".spline_weight", p.spline_weight);
}

template <class Fn>
void for_each_param(TwoDepthKan& kan, const std::string& prefix, Fn&& fn) {
    for_each_param(kan.inner, prefix + ".inner", fn);
    for_each_param(kan.outer, prefix + ".outer", fn);
}

} // namespace kanmix
