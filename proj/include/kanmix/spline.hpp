#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "kanmix/errors.hpp"

namespace kanmix {

/// Uniform extended B-spline knot grid over [domain_min, domain_max] with
/// G intervals and order k (k = polynomial degree of the pieces). The knot
/// vector carries k extra uniformly spaced knots beyond each side of the
/// domain, giving G+2k+1 knots and G+k basis functions.
///
/// Inputs outside the domain are clamped to it before evaluation; the
/// derivative is the one at the clamp point. Immutable after construction.
class KnotGrid {
public:
    KnotGrid(double domain_min, double domain_max, int intervals, int order)
        : domain_min_(domain_min), domain_max_(domain_max), intervals_(intervals), order_(order) {
        if (!(domain_min < domain_max))
            throw config_error("KnotGrid: domain_min must be < domain_max, got [" +
                               std::to_string(domain_min) + ", " + std::to_string(domain_max) + "]");
        if (intervals < 1)
            throw config_error("KnotGrid: interval count G must be >= 1, got " +
                               std::to_string(intervals));
        if (order < 0)
            throw config_error("KnotGrid: order k must be >= 0, got " + std::to_string(order));
        step_ = (domain_max - domain_min) / intervals;
        knots_.resize(static_cast<std::size_t>(intervals + 2 * order + 1));
        for (int i = 0; i < static_cast<int>(knots_.size()); ++i)
            knots_[static_cast<std::size_t>(i)] = domain_min + (i - order) * step_;
        // Pin the domain endpoints exactly; accumulated products of step_ can
        // drift by an ulp.
        knots_[static_cast<std::size_t>(order)] = domain_min;
        knots_[static_cast<std::size_t>(order + intervals)] = domain_max;
    }

    double domain_min() const { return domain_min_; }
    double domain_max() const { return domain_max_; }
    int intervals() const { return intervals_; }
    int order() const { return order_; }
    double step() const { return step_; }
    const std::vector<double>& knots() const { return knots_; }

    /// Number of basis functions: G+k.
    int basis_count() const { return intervals_ + order_; }

    double clamp(double x) const { return std::min(std::max(x, domain_min_), domain_max_); }

    /// Knot span index j with knots[j] <= x < knots[j+1], restricted to the
    /// G in-domain intervals: j in [k, k+G-1].
    int find_span(double x) const {
        int j = order_ + static_cast<int>(std::floor((x - domain_min_) / step_));
        return std::min(std::max(j, order_), order_ + intervals_ - 1);
    }

    /// B_{i,k}(x) for all G+k basis functions. At most k+1 entries are
    /// nonzero; everything outside the active window is exactly 0.
    std::vector<double> basis_values(double x) const {
        std::vector<double> out(static_cast<std::size_t>(basis_count()), 0.0);
        const double xc = clamp(x);
        const int span = find_span(xc);
        std::vector<double> active(static_cast<std::size_t>(order_) + 1);
        active_basis(xc, span, order_, active.data());
        for (int r = 0; r <= order_; ++r) out[static_cast<std::size_t>(span - order_ + r)] = active[static_cast<std::size_t>(r)];
        return out;
    }

    /// d/dx B_{i,k}(x) for all basis functions, via the order-lowering
    /// recurrence B'_{i,k} = k*(B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1})).
    /// Requires k >= 1 (degree-0 splines are piecewise constant).
    std::vector<double> basis_derivatives(double x) const {
        if (order_ < 1)
            throw config_error("KnotGrid::basis_derivatives: undefined for order k=0 "
                               "(piecewise-constant basis)");
        std::vector<double> out(static_cast<std::size_t>(basis_count()), 0.0);
        const double xc = clamp(x);
        const int span = find_span(xc);
        std::vector<double> vals(static_cast<std::size_t>(order_) + 1);
        std::vector<double> ders(static_cast<std::size_t>(order_) + 1);
        active_basis_and_derivatives(xc, span, vals.data(), ders.data());
        for (int r = 0; r <= order_; ++r) out[static_cast<std::size_t>(span - order_ + r)] = ders[static_cast<std::size_t>(r)];
        return out;
    }

    /// Active-window evaluation used by the KAN layers: writes the k+1
    /// nonzero basis values (and derivatives when ders != nullptr) for the
    /// clamped input; returns the first active basis index.
    int active_window(double x, double* values, double* derivatives) const {
        if (derivatives != nullptr && order_ < 1)
            throw config_error("KnotGrid::active_window: derivatives undefined for order k=0");
        const double xc = clamp(x);
        const int span = find_span(xc);
        if (derivatives == nullptr) {
            active_basis(xc, span, order_, values);
        } else {
            active_basis_and_derivatives(xc, span, values, derivatives);
        }
        return span - order_;
    }

private:
    // Cox-de Boor triangle for the d+1 basis functions of degree d that are
    // nonzero on span `span`; N[r] = B_{span-d+r, d}(x).
    void active_basis(double x, int span, int degree, double* N) const {
        N[0] = 1.0;
        std::vector<double> left(static_cast<std::size_t>(degree) + 1);
        std::vector<double> right(static_cast<std::size_t>(degree) + 1);
        for (int d = 1; d <= degree; ++d) {
            left[static_cast<std::size_t>(d)] = x - knots_[static_cast<std::size_t>(span + 1 - d)];
            right[static_cast<std::size_t>(d)] = knots_[static_cast<std::size_t>(span + d)] - x;
            double saved = 0.0;
            for (int r = 0; r < d; ++r) {
                const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(d - r)];
                const double temp = N[r] / denom;
                N[r] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
                saved = left[static_cast<std::size_t>(d - r)] * temp;
            }
            N[d] = saved;
        }
    }

    void active_basis_and_derivatives(double x, int span, double* values, double* ders) const {
        const int k = order_;
        // Degree k-1 values on the same span: Nm[r] = B_{span-(k-1)+r, k-1}(x).
        std::vector<double> lower(static_cast<std::size_t>(k), 0.0);
        active_basis(x, span, k - 1, lower.data());
        active_basis(x, span, k, values);
        for (int r = 0; r <= k; ++r) {
            const int i = span - k + r;
            double d = 0.0;
            if (r >= 1)
                d += lower[static_cast<std::size_t>(r - 1)] /
                     (knots_[static_cast<std::size_t>(i + k)] - knots_[static_cast<std::size_t>(i)]);
            if (r <= k - 1)
                d -= lower[static_cast<std::size_t>(r)] /
                     (knots_[static_cast<std::size_t>(i + k + 1)] - knots_[static_cast<std::size_t>(i + 1)]);
            ders[r] = k * d;
        }
    }

    double domain_min_;
    double domain_max_;
    int intervals_;
    int order_;
    double step_;
    std::vector<double> knots_;
};

/// Uniform extended grid builder (the only construction path).
inline KnotGrid make_grid(double domain_min, double domain_max, int intervals, int order) {
    return KnotGrid(domain_min, domain_max, intervals, order);
}

} // namespace kanmix
