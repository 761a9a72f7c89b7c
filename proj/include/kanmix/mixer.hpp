#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kanmix/errors.hpp"
#include "kanmix/kan.hpp"
#include "kanmix/rng.hpp"
#include "kanmix/spline.hpp"
#include "kanmix/tensor.hpp"

namespace kanmix {

enum class Variant { tsmixer, tskanmixer_v01, tskanmixer_v02 };
enum class LossKind { mse, mae };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::tsmixer: return "tsmixer";
    case Variant::tskanmixer_v01: return "tskanmixer_v01";
    case Variant::tskanmixer_v02: return "tskanmixer_v02";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "tsmixer") return Variant::tsmixer;
    if (s == "tskanmixer_v01") return Variant::tskanmixer_v01;
    if (s == "tskanmixer_v02") return Variant::tskanmixer_v02;
    throw config_error("unknown variant '" + s +
                       "' (expected tsmixer, tskanmixer_v01 or tskanmixer_v02)");
}

inline std::string to_string(LossKind l) { return l == LossKind::mse ? "mse" : "mae"; }

inline LossKind loss_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "mae") return LossKind::mae;
    throw config_error("unknown loss '" + s + "' (expected mse or mae)");
}

// ---------------------------------------------------------------------------
// Dense layer over the last axis of row-flattened input.
// ---------------------------------------------------------------------------

struct Dense {
    Tensor w; // [in, out]
    Tensor b; // [out]

    Dense(std::size_t in, std::size_t out) : w({in, out}), b({out}) {}
};

inline Dense dense_init(std::size_t in, std::size_t out, Rng& rng) {
    Dense d(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < d.w.size(); ++i) d.w[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < d.b.size(); ++i) d.b[i] = rng.uniform(-bound, bound);
    return d;
}

struct DenseCache {
    Tensor x; // [rows, in]
};

inline Tensor dense_forward(const Dense& d, const Tensor& x, DenseCache* cache = nullptr) {
    Tensor y = matmul(x, d.w);
    const std::size_t rows = y.dim(0), out = y.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) y.at(r, o) += d.b[o];
    y.require_finite("dense_forward");
    if (cache) cache->x = x;
    return y;
}

inline Tensor dense_backward(const Dense& d, const DenseCache& cache, const Tensor& upstream,
                             Dense& grads) {
    const std::size_t rows = cache.x.dim(0), in = cache.x.dim(1), out = d.w.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = cache.x.data() + r * in;
        const double* ur = upstream.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
            double* gw = grads.w.data() + i * out;
            const double xv = xr[i];
            for (std::size_t o = 0; o < out; ++o) gw[o] += xv * ur[o];
        }
        for (std::size_t o = 0; o < out; ++o) grads.b[o] += ur[o];
    }
    Tensor dx({rows, in});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* ur = upstream.data() + r * out;
        double* dr = dx.data() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
            const double* wr = d.w.data() + i * out;
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) acc += ur[o] * wr[o];
            dr[i] = acc;
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization per (time, feature) position across the batch, with
// running statistics for eval mode.
// ---------------------------------------------------------------------------

struct BatchNorm {
    Tensor gamma;        // [P]  (P = L*C positions)
    Tensor beta;         // [P]
    Tensor running_mean; // [P]
    Tensor running_var;  // [P]
    double eps = 1e-5;
    double momentum = 0.1;

    explicit BatchNorm(std::size_t positions)
        : gamma(Tensor::full({positions}, 1.0)), beta({positions}),
          running_mean({positions}), running_var(Tensor::full({positions}, 1.0)) {}
};

struct BnCache {
    Tensor xhat;                  // [B, P]
    std::vector<double> inv_std;  // [P]
    bool training = false;
};

/// x is treated as [B, P] with P = product of trailing dims.
inline Tensor bn_forward(BatchNorm& bn, const Tensor& x, bool training, bool update_running,
                         BnCache* cache = nullptr) {
    const std::size_t batch = x.dim(0);
    const std::size_t positions = x.size() / batch;
    if (positions != bn.gamma.size())
        throw dim_error("bn_forward: input " + x.shape_string() + " has " +
                        std::to_string(positions) + " positions, norm has " +
                        std::to_string(bn.gamma.size()));

    Tensor out(x.shape());
    std::vector<double> inv_std(positions);
    Tensor xhat({batch, positions});
    if (training) {
        for (std::size_t p = 0; p < positions; ++p) {
            double mean = 0.0;
            for (std::size_t b = 0; b < batch; ++b) mean += x[b * positions + p];
            mean /= static_cast<double>(batch);
            double var = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double d = x[b * positions + p] - mean;
                var += d * d;
            }
            var /= static_cast<double>(batch);
            const double is = 1.0 / std::sqrt(var + bn.eps);
            inv_std[p] = is;
            for (std::size_t b = 0; b < batch; ++b) {
                const double xh = (x[b * positions + p] - mean) * is;
                xhat[b * positions + p] = xh;
                out[b * positions + p] = bn.gamma[p] * xh + bn.beta[p];
            }
            if (update_running) {
                bn.running_mean[p] = (1.0 - bn.momentum) * bn.running_mean[p] + bn.momentum * mean;
                bn.running_var[p] = (1.0 - bn.momentum) * bn.running_var[p] + bn.momentum * var;
            }
        }
    } else {
        for (std::size_t p = 0; p < positions; ++p) {
            const double is = 1.0 / std::sqrt(bn.running_var[p] + bn.eps);
            inv_std[p] = is;
            for (std::size_t b = 0; b < batch; ++b) {
                const double xh = (x[b * positions + p] - bn.running_mean[p]) * is;
                xhat[b * positions + p] = xh;
                out[b * positions + p] = bn.gamma[p] * xh + bn.beta[p];
            }
        }
    }
    out.require_finite("bn_forward");
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->training = training;
    }
    return out;
}

inline Tensor bn_backward(const BatchNorm& bn, const BnCache& cache, const Tensor& upstream,
                          BatchNorm& grads) {
    const std::size_t positions = bn.gamma.size();
    const std::size_t batch = upstream.size() / positions;
    Tensor dx(upstream.shape());
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t p = 0; p < positions; ++p) {
        double sum_up = 0.0, sum_up_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double u = upstream[b * positions + p];
            sum_up += u;
            sum_up_xhat += u * cache.xhat[b * positions + p];
        }
        grads.beta[p] += sum_up;
        grads.gamma[p] += sum_up_xhat;
        const double scale = bn.gamma[p] * cache.inv_std[p];
        if (cache.training) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double u = upstream[b * positions + p];
                dx[b * positions + p] =
                    scale * (u - inv_b * sum_up - cache.xhat[b * positions + p] * inv_b * sum_up_xhat);
            }
        } else {
            for (std::size_t b = 0; b < batch; ++b)
                dx[b * positions + p] = scale * upstream[b * positions + p];
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout.
// ---------------------------------------------------------------------------

struct DropoutCache {
    Tensor mask; // empty when dropout was a no-op
};

inline Tensor dropout_forward(const Tensor& x, double rate, bool training, Rng* rng,
                              DropoutCache* cache = nullptr) {
    if (!training || rate <= 0.0) {
        if (cache) cache->mask = Tensor();
        return x;
    }
    if (rng == nullptr) throw config_error("dropout_forward: training with rate > 0 needs an rng");
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(x.shape());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng->uniform() < rate ? 0.0 : keep_scale;
        mask[i] = m;
        out[i] = x[i] * m;
    }
    if (cache) cache->mask = std::move(mask);
    return out;
}

inline Tensor dropout_backward(const DropoutCache& cache, const Tensor& upstream) {
    if (cache.mask.size() == 0) return upstream;
    Tensor out(upstream.shape());
    for (std::size_t i = 0; i < upstream.size(); ++i) out[i] = upstream[i] * cache.mask[i];
    return out;
}

// ---------------------------------------------------------------------------
// Mixer block: time-mixing MLP then feature-mixing MLP, each with norm,
// activation, dropout and a residual connection.
// ---------------------------------------------------------------------------

struct MixerBlockParams {
    BatchNorm time_norm;    // over L*C positions
    BatchNorm feature_norm; // over L*C positions
    Dense time_dense;       // L -> L
    Dense feature_dense_1;  // C -> hidden
    Dense feature_dense_2;  // hidden -> C
    double dropout_rate = 0.0;

    MixerBlockParams(std::size_t L, std::size_t C, std::size_t hidden, double dropout)
        : time_norm(L * C), feature_norm(L * C), time_dense(L, L), feature_dense_1(C, hidden),
          feature_dense_2(hidden, C), dropout_rate(dropout) {
        if (dropout < 0.0 || dropout >= 1.0)
            throw config_error("MixerBlockParams: dropout must be in [0,1), got " +
                               std::to_string(dropout));
    }
};

inline MixerBlockParams mixer_block_init(std::size_t L, std::size_t C, std::size_t hidden,
                                         double dropout, Rng& rng) {
    MixerBlockParams blk(L, C, hidden, dropout);
    blk.time_dense = dense_init(L, L, rng);
    blk.feature_dense_1 = dense_init(C, hidden, rng);
    blk.feature_dense_2 = dense_init(hidden, C, rng);
    return blk;
}

struct TimeMixCache {
    BnCache bn;
    DenseCache dense; // input rows [B*C, L]
    Tensor preact;    // [B*C, L] before relu
    DropoutCache drop;
};

/// norm -> transpose -> dense(L->L) -> relu -> dropout -> transpose -> + x
inline Tensor time_mixing_forward(MixerBlockParams& block, const Tensor& x, bool training,
                                  Rng* rng = nullptr, bool update_running = false,
                                  TimeMixCache* cache = nullptr) {
    if (x.rank() != 3)
        throw dim_error("time_mixing_forward: expected [B,L,C], got " + x.shape_string());
    const std::size_t batch = x.dim(0), L = x.dim(1), C = x.dim(2);
    Tensor n = bn_forward(block.time_norm, x, training, update_running, cache ? &cache->bn : nullptr);
    Tensor rows = reshape(transpose_time_feature(n), {batch * C, L});
    Tensor pre = dense_forward(block.time_dense, rows, cache ? &cache->dense : nullptr);
    Tensor act = elementwise(pre, relu);
    Tensor dropped =
        dropout_forward(act, block.dropout_rate, training, rng, cache ? &cache->drop : nullptr);
    Tensor mixed = transpose_time_feature(reshape(dropped, {batch, C, L}));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + mixed[i];
    if (cache) cache->preact = std::move(pre);
    return out;
}

inline Tensor time_mixing_backward(const MixerBlockParams& block, const TimeMixCache& cache,
                                   const Tensor& upstream, MixerBlockParams& grads) {
    const std::size_t batch = upstream.dim(0), L = upstream.dim(1), C = upstream.dim(2);
    Tensor branch = reshape(transpose_time_feature(upstream), {batch * C, L});
    Tensor after_drop = dropout_backward(cache.drop, branch);
    Tensor after_relu = elementwise_backward(cache.preact, relu_grad, after_drop);
    Tensor d_rows = dense_backward(block.time_dense, cache.dense, after_relu, grads.time_dense);
    Tensor d_norm = transpose_time_feature(reshape(d_rows, {batch, C, L}));
    Tensor dx = bn_backward(block.time_norm, cache.bn, d_norm, grads.time_norm);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += upstream[i]; // residual path
    return dx;
}

struct FeatureMixCache {
    BnCache bn;
    DenseCache dense1; // [B*L, C]
    Tensor preact1;
    DropoutCache drop1;
    DenseCache dense2; // [B*L, hidden]
    DropoutCache drop2;
};

/// norm -> dense(C->hidden) -> relu -> dropout -> dense(hidden->C) -> dropout -> + x
inline Tensor feature_mixing_forward(MixerBlockParams& block, const Tensor& x, bool training,
                                     Rng* rng = nullptr, bool update_running = false,
                                     FeatureMixCache* cache = nullptr) {
    if (x.rank() != 3)
        throw dim_error("feature_mixing_forward: expected [B,L,C], got " + x.shape_string());
    const std::size_t batch = x.dim(0), L = x.dim(1), C = x.dim(2);
    Tensor n =
        bn_forward(block.feature_norm, x, training, update_running, cache ? &cache->bn : nullptr);
    Tensor rows = reshape(n, {batch * L, C});
    Tensor pre1 = dense_forward(block.feature_dense_1, rows, cache ? &cache->dense1 : nullptr);
    Tensor act = elementwise(pre1, relu);
    Tensor h =
        dropout_forward(act, block.dropout_rate, training, rng, cache ? &cache->drop1 : nullptr);
    Tensor out2 = dense_forward(block.feature_dense_2, h, cache ? &cache->dense2 : nullptr);
    Tensor dropped =
        dropout_forward(out2, block.dropout_rate, training, rng, cache ? &cache->drop2 : nullptr);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + dropped[i];
    if (cache) cache->preact1 = std::move(pre1);
    return out;
}

inline Tensor feature_mixing_backward(const MixerBlockParams& block, const FeatureMixCache& cache,
                                      const Tensor& upstream, MixerBlockParams& grads) {
    const std::size_t batch = upstream.dim(0), L = upstream.dim(1), C = upstream.dim(2);
    Tensor branch = reshape(upstream, {batch * L, C});
    Tensor after_drop2 = dropout_backward(cache.drop2, branch);
    Tensor d_h =
        dense_backward(block.feature_dense_2, cache.dense2, after_drop2, grads.feature_dense_2);
    Tensor after_drop1 = dropout_backward(cache.drop1, d_h);
    Tensor after_relu = elementwise_backward(cache.preact1, relu_grad, after_drop1);
    Tensor d_rows =
        dense_backward(block.feature_dense_1, cache.dense1, after_relu, grads.feature_dense_1);
    Tensor d_norm = reshape(d_rows, {batch, L, C});
    Tensor dx = bn_backward(block.feature_norm, cache.bn, d_norm, grads.feature_norm);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += upstream[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Temporal projection heads and the KAN time-mixing layer.
// ---------------------------------------------------------------------------

/// Per-feature linear map along time, weights shared across features:
/// [B,L,C] -> [B,H,C].
inline Tensor temporal_projection_fc(const Dense& proj, const Tensor& x,
                                     DenseCache* cache = nullptr) {
    const std::size_t batch = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (proj.w.dim(0) != L)
        throw dim_error("temporal_projection_fc: weights " + proj.w.shape_string() +
                        " incompatible with input " + x.shape_string());
    const std::size_t H = proj.w.dim(1);
    Tensor rows = reshape(transpose_time_feature(x), {batch * C, L});
    Tensor out_rows = dense_forward(proj, rows, cache);
    return transpose_time_feature(reshape(out_rows, {batch, C, H}));
}

inline Tensor temporal_projection_fc_backward(const Dense& proj, const DenseCache& cache,
                                              const Tensor& upstream, Dense& grads) {
    const std::size_t batch = upstream.dim(0), H = upstream.dim(1), C = upstream.dim(2);
    Tensor up_rows = reshape(transpose_time_feature(upstream), {batch * C, H});
    Tensor d_rows = dense_backward(proj, cache, up_rows, grads);
    const std::size_t L = proj.w.dim(0);
    return transpose_time_feature(reshape(d_rows, {batch, C, L}));
}

/// Shared two-depth KAN applied to each feature's time column:
/// [B,L,C] -> [B,H,C].
inline Tensor temporal_projection_kan(const TwoDepthKan& kan, const Tensor& x,
                                      TwoDepthKanCache* cache = nullptr) {
    const std::size_t batch = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (kan.inner.n_in != L)
        throw dim_error("temporal_projection_kan: KAN n_in " + std::to_string(kan.inner.n_in) +
                        " != input length " + std::to_string(L));
    const std::size_t H = kan.outer.n_out;
    Tensor rows = reshape(transpose_time_feature(x), {batch * C, L});
    Tensor out_rows = two_depth_forward(kan, rows, cache);
    return transpose_time_feature(reshape(out_rows, {batch, C, H}));
}

inline Tensor temporal_projection_kan_backward(const TwoDepthKan& kan,
                                               const TwoDepthKanCache& cache,
                                               const Tensor& upstream, TwoDepthKan& grads) {
    const std::size_t batch = upstream.dim(0), H = upstream.dim(1), C = upstream.dim(2);
    Tensor up_rows = reshape(transpose_time_feature(upstream), {batch * C, H});
    Tensor d_rows = two_depth_backward(kan, cache, up_rows, grads);
    const std::size_t L = kan.inner.n_in;
    return transpose_time_feature(reshape(d_rows, {batch, C, L}));
}

/// KAN-based time mixing: shared [L -> kan_dim -> L] KAN per feature column,
/// plus a residual connection. [B,L,C] -> [B,L,C].
inline Tensor kan_time_mixing_forward(const TwoDepthKan& kan, const Tensor& x,
                                      TwoDepthKanCache* cache = nullptr) {
    Tensor mixed = temporal_projection_kan(kan, x, cache);
    if (mixed.dim(1) != x.dim(1))
        throw dim_error("kan_time_mixing_forward: KAN must map L to L, got " +
                        std::to_string(kan.inner.n_in) + " -> " + std::to_string(kan.outer.n_out));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + mixed[i];
    return out;
}

inline Tensor kan_time_mixing_backward(const TwoDepthKan& kan, const TwoDepthKanCache& cache,
                                       const Tensor& upstream, TwoDepthKan& grads) {
    Tensor dx = temporal_projection_kan_backward(kan, cache, upstream, grads);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += upstream[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Model configuration and assembly.
// ---------------------------------------------------------------------------

/// Architecture variant plus every hyperparameter a run needs.
struct ModelConfig {
    Variant variant = Variant::tsmixer;
    std::size_t L = 0;
    std::size_t H = 0;
    std::size_t C = 0;
    std::size_t batch = 0;
    std::size_t blocks = 0;
    double dropout = 0.0;
    std::size_t hidden_size = 0;
    double learning_rate = 0.0;
    std::size_t kan_dim = 0; // KAN hidden width (2n+1 shape when 2L+1)
    int kan_grid = 0;        // spline intervals G
    int kan_k = 0;           // spline order k
    LossKind loss = LossKind::mse;
    std::uint64_t seed = 0;

    bool uses_kan() const { return variant != Variant::tsmixer; }

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v < 1) throw config_error(std::string("ModelConfig: ") + name + " must be >= 1");
        };
        positive(L, "L");
        positive(H, "H");
        positive(C, "C");
        positive(batch, "batch");
        positive(blocks, "blocks");
        positive(hidden_size, "hidden_size");
        if (dropout < 0.0 || dropout >= 1.0)
            throw config_error("ModelConfig: dropout must be in [0,1), got " +
                               std::to_string(dropout));
        if (!(learning_rate > 0.0))
            throw config_error("ModelConfig: learning_rate must be > 0");
        if (uses_kan()) {
            if (kan_dim < 1) throw config_error("ModelConfig: kan_dim must be >= 1 for " + to_string(variant));
            if (kan_grid < 1) throw config_error("ModelConfig: kan_grid must be >= 1 for " + to_string(variant));
            if (kan_k < 1)
                throw config_error("ModelConfig: kan_k must be >= 1 for " + to_string(variant) +
                                   " (order-0 splines have no derivative)");
        } else if (kan_dim != 0 || kan_grid != 0 || kan_k != 0) {
            throw config_error("ModelConfig: kan_dim/kan_grid/kan_k do not apply to tsmixer");
        }
    }
};

// Spline grid domain for standardized inputs; +-3 standard deviations.
inline constexpr double kKanDomainMin = -3.0;
inline constexpr double kKanDomainMax = 3.0;

/// Mixer stack plus the variant-specific head:
///   tsmixer:        dense temporal projection
///   tskanmixer_v01: KAN temporal projection
///   tskanmixer_v02: KAN time-mixing layer, then dense temporal projection
struct ForecastModel {
    ModelConfig config;
    std::vector<MixerBlockParams> blocks;
    std::optional<Dense> projection_fc;
    std::optional<TwoDepthKan> projection_kan;
    std::optional<TwoDepthKan> kan_time_mixing;
};

inline ForecastModel build_model(const ModelConfig& config) {
    config.validate();
    ForecastModel m;
    m.config = config;
    Rng rng(config.seed);
    for (std::size_t i = 0; i < config.blocks; ++i)
        m.blocks.push_back(
            mixer_block_init(config.L, config.C, config.hidden_size, config.dropout, rng));
    switch (config.variant) {
    case Variant::tsmixer:
        m.projection_fc = dense_init(config.L, config.H, rng);
        break;
    case Variant::tskanmixer_v01: {
        KnotGrid grid = make_grid(kKanDomainMin, kKanDomainMax, config.kan_grid, config.kan_k);
        m.projection_kan = make_two_depth_kan(config.L, config.H, grid, rng, config.kan_dim);
        break;
    }
    case Variant::tskanmixer_v02: {
        KnotGrid grid = make_grid(kKanDomainMin, kKanDomainMax, config.kan_grid, config.kan_k);
        m.kan_time_mixing = make_two_depth_kan(config.L, config.L, grid, rng, config.kan_dim);
        m.projection_fc = dense_init(config.L, config.H, rng);
        break;
    }
    }
    return m;
}

/// Checks the variant/parameter pairing invariants.
inline void validate_model(const ForecastModel& m) {
    m.config.validate();
    if (m.blocks.size() != m.config.blocks)
        throw config_error("ForecastModel: block count mismatch");
    switch (m.config.variant) {
    case Variant::tsmixer:
        if (!m.projection_fc || m.projection_kan || m.kan_time_mixing)
            throw config_error("ForecastModel: tsmixer needs a dense projection and no KAN parts");
        break;
    case Variant::tskanmixer_v01:
        if (!m.projection_kan || m.projection_fc || m.kan_time_mixing)
            throw config_error("ForecastModel: v01 needs a KAN projection and nothing else");
        break;
    case Variant::tskanmixer_v02:
        if (!m.projection_fc || !m.kan_time_mixing || m.projection_kan)
            throw config_error("ForecastModel: v02 needs KAN time-mixing plus a dense projection");
        break;
    }
}

struct BlockCache {
    TimeMixCache time;
    FeatureMixCache feature;
};

struct ModelCache {
    std::vector<BlockCache> blocks;
    DenseCache proj_fc;
    TwoDepthKanCache proj_kan;
    TwoDepthKanCache time_kan;
};

/// Full forward pass: mixer blocks, optional KAN time mixing (v02), then the
/// temporal projection. [B,L,C] -> [B,H,C].
inline Tensor model_forward(ForecastModel& m, const Tensor& x, bool training, Rng* rng = nullptr,
                            bool update_running = false, ModelCache* cache = nullptr) {
    if (x.rank() != 3 || x.dim(1) != m.config.L || x.dim(2) != m.config.C)
        throw dim_error("model_forward: expected [B," + std::to_string(m.config.L) + "," +
                        std::to_string(m.config.C) + "], got " + x.shape_string());
    if (cache) cache->blocks.resize(m.blocks.size());
    Tensor h = x;
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        h = time_mixing_forward(m.blocks[i], h, training, rng, update_running,
                                cache ? &cache->blocks[i].time : nullptr);
        h = feature_mixing_forward(m.blocks[i], h, training, rng, update_running,
                                   cache ? &cache->blocks[i].feature : nullptr);
    }
    if (m.config.variant == Variant::tskanmixer_v02)
        h = kan_time_mixing_forward(*m.kan_time_mixing, h, cache ? &cache->time_kan : nullptr);
    if (m.config.variant == Variant::tskanmixer_v01)
        return temporal_projection_kan(*m.projection_kan, h, cache ? &cache->proj_kan : nullptr);
    return temporal_projection_fc(*m.projection_fc, h, cache ? &cache->proj_fc : nullptr);
}

/// Same-structure zero gradients (affine/running defaults of one are zeroed
/// too, so these start as clean accumulators).
inline MixerBlockParams zeros_like(const MixerBlockParams& blk) {
    const std::size_t L = blk.time_dense.w.dim(0);
    const std::size_t C = blk.feature_dense_1.w.dim(0);
    const std::size_t hidden = blk.feature_dense_1.w.dim(1);
    MixerBlockParams g(L, C, hidden, blk.dropout_rate);
    for (std::size_t i = 0; i < g.time_norm.gamma.size(); ++i) {
        g.time_norm.gamma[i] = 0.0;
        g.time_norm.running_var[i] = 0.0;
        g.feature_norm.gamma[i] = 0.0;
        g.feature_norm.running_var[i] = 0.0;
    }
    return g;
}

inline ForecastModel zeros_like(const ForecastModel& m) {
    ForecastModel g;
    g.config = m.config;
    for (const auto& blk : m.blocks) g.blocks.push_back(zeros_like(blk));
    if (m.projection_fc) g.projection_fc = Dense(m.config.L, m.config.H);
    if (m.projection_kan) g.projection_kan = zeros_like(*m.projection_kan);
    if (m.kan_time_mixing) g.kan_time_mixing = zeros_like(*m.kan_time_mixing);
    return g;
}

/// Gradient of the model output w.r.t. every parameter; upstream is
/// d(loss)/d(output) of shape [B,H,C]. Returns d(loss)/d(input).
inline Tensor model_backward(const ForecastModel& m, const ModelCache& cache,
                             const Tensor& upstream, ForecastModel& grads) {
    Tensor d;
    if (m.config.variant == Variant::tskanmixer_v01) {
        d = temporal_projection_kan_backward(*m.projection_kan, cache.proj_kan, upstream,
                                             *grads.projection_kan);
    } else {
        d = temporal_projection_fc_backward(*m.projection_fc, cache.proj_fc, upstream,
                                            *grads.projection_fc);
    }
    if (m.config.variant == Variant::tskanmixer_v02)
        d = kan_time_mixing_backward(*m.kan_time_mixing, cache.time_kan, d,
                                     *grads.kan_time_mixing);
    for (std::size_t i = m.blocks.size(); i-- > 0;) {
        d = feature_mixing_backward(m.blocks[i], cache.blocks[i].feature, d, grads.blocks[i]);
        d = time_mixing_backward(m.blocks[i], cache.blocks[i].time, d, grads.blocks[i]);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Parameter traversal (stable order shared by optimizer, gradient checks and
// checkpoints).
// ---------------------------------------------------------------------------

template <class Fn>
void for_each_param(Dense& d, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w", d.w);
    fn(prefix + ".b", d.b);
}

template <class Fn>
void for_each_param(BatchNorm& bn, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gamma", bn.gamma);
    fn(prefix + ".beta", bn.beta);
}

template <class Fn>
void for_each_param(MixerBlockParams& blk, const std::string& prefix, Fn&& fn) {
    for_each_param(blk.time_norm, prefix + ".time_norm", fn);
    for_each_param(blk.time_dense, prefix + ".time_dense", fn);
    for_each_param(blk.feature_norm, prefix + ".feature_norm", fn);
    for_each_param(blk.feature_dense_1, prefix + ".feature_dense_1", fn);
    for_each_param(blk.feature_dense_2, prefix + ".feature_dense_2", fn);
}

/// Trainable tensors only (no running statistics).
template <class Fn>
void for_each_param(ForecastModel& m, Fn&& fn) {
    for (std::size_t i = 0; i < m.blocks.size(); ++i)
        for_each_param(m.blocks[i], "blocks." + std::to_string(i), fn);
    if (m.kan_time_mixing) for_each_param(*m.kan_time_mixing, "kan_time_mixing", fn);
    if (m.projection_kan) for_each_param(*m.projection_kan, "projection_kan", fn);
    if (m.projection_fc) for_each_param(*m.projection_fc, "projection_fc", fn);
}

/// Everything that defines the model state: parameters plus batch-norm
/// running statistics. Used by checkpoints.
template <class Fn>
void for_each_state(ForecastModel& m, Fn&& fn) {
    for_each_param(m, fn);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i);
        fn(p + ".time_norm.running_mean", m.blocks[i].time_norm.running_mean);
        fn(p + ".time_norm.running_var", m.blocks[i].time_norm.running_var);
        fn(p + ".feature_norm.running_mean", m.blocks[i].feature_norm.running_mean);
        fn(p + ".feature_norm.running_var", m.blocks[i].feature_norm.running_var);
    }
}

} // namespace kanmix
