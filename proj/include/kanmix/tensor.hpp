#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kanmix/errors.hpp"

namespace kanmix {

/// Dense n-dimensional array of doubles, row-major flat storage.
/// The sole numeric carrier of the toolkit. Ops validate shapes up front
/// and surface NaN/Inf outputs as errors instead of propagating them.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size())
            throw dim_error("Tensor: data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = value;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const char* op) const {
        if (!all_finite())
            throw numeric_error(std::string(op) + ": non-finite value in output tensor of shape " +
                                 shape_string(shape_));
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ',';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    std::string shape_string() const { return shape_string(shape_); }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw dim_error("Tensor: zero dimension in shape " + shape_string(shape));
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Each has a hand-written backward; the model graph is a
// fixed feed-forward DAG so no tape is kept.
// ---------------------------------------------------------------------------

/// Standard matrix product [m,p] x [p,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw dim_error("matmul: expected rank-2 operands, got " + a.shape_string() + " x " +
                        b.shape_string());
    if (a.dim(1) != b.dim(0))
        throw dim_error("matmul: inner dimensions disagree: " + a.shape_string() + " x " +
                        b.shape_string());
    const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * p;
        double* orow = out.data() + i * n;
        for (std::size_t k = 0; k < p; ++k) {
            const double av = arow[k];
            const double* brow = b.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.require_finite("matmul");
    return out;
}

/// Batched product: a is [..., m, p], b is either [p, n] (broadcast over the
/// leading dims) or has the same leading dims as a.
inline Tensor matmul_batched(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw dim_error("matmul_batched: expected rank >= 2, got " + a.shape_string() + " x " +
                        b.shape_string());
    if (a.rank() == 2 && b.rank() == 2) return matmul(a, b);

    const std::size_t m = a.dim(a.rank() - 2), p = a.dim(a.rank() - 1);
    const std::size_t bp = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (p != bp)
        throw dim_error("matmul_batched: inner dimensions disagree: " + a.shape_string() + " x " +
                        b.shape_string());
    const bool broadcast_b = (b.rank() == 2);
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
    if (!broadcast_b) {
        if (a.rank() != b.rank())
            throw dim_error("matmul_batched: rank mismatch: " + a.shape_string() + " x " +
                            b.shape_string());
        for (std::size_t i = 0; i + 2 < a.rank(); ++i)
            if (a.dim(i) != b.dim(i))
                throw dim_error("matmul_batched: leading dimensions disagree: " +
                                a.shape_string() + " x " + b.shape_string());
    }

    std::vector<std::size_t> oshape(a.shape().begin(), a.shape().end() - 1);
    oshape.push_back(n);
    Tensor out(oshape);
    for (std::size_t s = 0; s < batch; ++s) {
        const double* ab = a.data() + s * m * p;
        const double* bb = b.data() + (broadcast_b ? 0 : s * p * n);
        double* ob = out.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < p; ++k) {
                const double av = ab[i * p + k];
                for (std::size_t j = 0; j < n; ++j) ob[i * n + j] += av * bb[k * n + j];
            }
    }
    out.require_finite("matmul_batched");
    return out;
}

/// Gradients of matmul: upstream is [m,n], returns (dA [m,p], dB [p,n]).
inline std::pair<Tensor, Tensor> matmul_backward(const Tensor& a, const Tensor& b,
                                                 const Tensor& upstream) {
    const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
    Tensor da({m, p}), db({p, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double u = upstream.at(i, j);
            for (std::size_t k = 0; k < p; ++k) {
                da.at(i, k) += u * b.at(k, j);
                db.at(k, j) += u * a.at(i, k);
            }
        }
    return {std::move(da), std::move(db)};
}

/// Same data, new shape (row-major element order preserved).
inline Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
    return Tensor(std::move(shape), std::vector<double>(t.data(), t.data() + t.size()));
}

/// Swaps the time and feature axes: [B,L,C] -> [B,C,L]. An involution.
inline Tensor transpose_time_feature(const Tensor& x) {
    if (x.rank() != 3)
        throw dim_error("transpose_time_feature: expected rank-3 input, got " + x.shape_string());
    const std::size_t b = x.dim(0), l = x.dim(1), c = x.dim(2);
    Tensor out({b, c, l});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < l; ++j)
            for (std::size_t k = 0; k < c; ++k) out.at(i, k, j) = x.at(i, j, k);
    return out;
}

/// Applies f pointwise. df is the matching derivative used by
/// elementwise_backward.
inline Tensor elementwise(const Tensor& x, const std::function<double(double)>& f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    out.require_finite("elementwise");
    return out;
}

inline Tensor elementwise_backward(const Tensor& x, const std::function<double(double)>& df,
                                   const Tensor& upstream) {
    if (!x.same_shape(upstream))
        throw dim_error("elementwise_backward: shape mismatch: " + x.shape_string() + " vs " +
                        upstream.shape_string());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = df(x[i]) * upstream[i];
    out.require_finite("elementwise_backward");
    return out;
}

// Activations used by the models.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

} // namespace kanmix
