#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "kanmix/errors.hpp"
#include "kanmix/mixer.hpp"
#include "kanmix/rng.hpp"
#include "kanmix/tensor.hpp"
#include "kanmix/util.hpp"

namespace kanmix {

// ---------------------------------------------------------------------------
// Standardization and windowing.
// ---------------------------------------------------------------------------

struct Standardization {
    Tensor normalized;         // [T, C]
    std::vector<double> means; // [C]
    std::vector<double> stds;  // [C]
};

/// (x - mean) / std per feature, statistics computed on the training rows
/// only and applied to the whole series.
inline Standardization standardize(const Tensor& series, std::size_t train_begin,
                                   std::size_t train_end) {
    if (series.rank() != 2)
        throw dim_error("standardize: expected [T,C], got " + series.shape_string());
    const std::size_t T = series.dim(0), C = series.dim(1);
    if (train_begin >= train_end || train_end > T)
        throw config_error("standardize: empty or out-of-range train range [" +
                           std::to_string(train_begin) + ", " + std::to_string(train_end) + ")");
    Standardization out;
    out.means.resize(C);
    out.stds.resize(C);
    const double n = static_cast<double>(train_end - train_begin);
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t t = train_begin; t < train_end; ++t) mean += series.at(t, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t t = train_begin; t < train_end; ++t) {
            const double d = series.at(t, c) - mean;
            var += d * d;
        }
        var /= n;
        const double sd = std::sqrt(var);
        if (!(sd > 0.0))
            throw config_error("standardize: feature " + std::to_string(c) +
                               " has zero variance over the training range");
        out.means[c] = mean;
        out.stds[c] = sd;
    }
    out.normalized = Tensor({T, C});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c)
            out.normalized.at(t, c) = (series.at(t, c) - out.means[c]) / out.stds[c];
    out.normalized.require_finite("standardize");
    return out;
}

/// Applies a previously computed standardization (checkpoint replay).
inline Tensor apply_standardization(const Tensor& series, const std::vector<double>& means,
                                    const std::vector<double>& stds) {
    const std::size_t T = series.dim(0), C = series.dim(1);
    if (means.size() != C || stds.size() != C)
        throw dim_error("apply_standardization: statistics for " + std::to_string(means.size()) +
                        " features, series has " + std::to_string(C));
    Tensor out({T, C});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) out.at(t, c) = (series.at(t, c) - means[c]) / stds[c];
    return out;
}

struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0; // exclusive
    std::size_t rows() const { return end - begin; }
};

/// Stride-1 window start indices fully contained in [range.begin, range.end):
/// sample s = (rows [s, s+L), rows [s+L, s+L+H)). Empty when the range is too
/// short for even one window.
inline std::vector<std::size_t> window_starts(const SplitRange& range, std::size_t L,
                                              std::size_t H) {
    std::vector<std::size_t> starts;
    if (range.rows() < L + H) return starts;
    for (std::size_t s = range.begin; s + L + H <= range.end; ++s) starts.push_back(s);
    return starts;
}

/// Standardized series plus per-split window indices. Windows never cross a
/// split boundary; each split is windowed independently.
struct WindowedDataset {
    Tensor series; // standardized [T, C]
    std::size_t L = 0;
    std::size_t H = 0;
    SplitRange train_range, valid_range, test_range;
    std::vector<std::size_t> train_starts, valid_starts, test_starts;
};

inline WindowedDataset window(Tensor series, std::size_t L, std::size_t H, SplitRange train,
                              SplitRange valid, SplitRange test) {
    if (series.rank() != 2) throw dim_error("window: expected [T,C], got " + series.shape_string());
    const std::size_t T = series.dim(0);
    if (T < L + H)
        throw config_error("window: series of " + std::to_string(T) + " rows is too short for L=" +
                           std::to_string(L) + ", H=" + std::to_string(H));
    for (const SplitRange* r : {&train, &valid, &test})
        if (r->end > T || r->begin > r->end)
            throw config_error("window: split range [" + std::to_string(r->begin) + ", " +
                               std::to_string(r->end) + ") exceeds series length " +
                               std::to_string(T));
    WindowedDataset d;
    d.L = L;
    d.H = H;
    d.train_range = train;
    d.valid_range = valid;
    d.test_range = test;
    d.train_starts = window_starts(train, L, H);
    d.valid_starts = window_starts(valid, L, H);
    d.test_starts = window_starts(test, L, H);
    d.series = std::move(series);
    return d;
}

/// Materializes (x [B,L,C], y [B,H,C]) for the window starts in `batch`.
inline std::pair<Tensor, Tensor> gather_batch(const WindowedDataset& d,
                                              const std::vector<std::size_t>& batch) {
    const std::size_t B = batch.size(), C = d.series.dim(1);
    Tensor x({B, d.L, C}), y({B, d.H, C});
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t s = batch[b];
        for (std::size_t l = 0; l < d.L; ++l)
            for (std::size_t c = 0; c < C; ++c) x.at(b, l, c) = d.series.at(s + l, c);
        for (std::size_t h = 0; h < d.H; ++h)
            for (std::size_t c = 0; c < C; ++c) y.at(b, h, c) = d.series.at(s + d.L + h, c);
    }
    return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

inline double loss_value(LossKind kind, const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw dim_error("loss: prediction " + pred.shape_string() + " vs target " +
                        target.shape_string());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += kind == LossKind::mse ? d * d : std::abs(d);
    }
    return acc / static_cast<double>(pred.size());
}

inline Tensor loss_grad(LossKind kind, const Tensor& pred, const Tensor& target) {
    Tensor g(pred.shape());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        g[i] = kind == LossKind::mse ? 2.0 * d * inv_n
                                     : (d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Adam. Generic over any parameter structure with for_each_param/zeros_like.
// ---------------------------------------------------------------------------

inline std::vector<Tensor*> param_tensors(ForecastModel& m) {
    std::vector<Tensor*> out;
    for_each_param(m, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

inline std::vector<Tensor*> param_tensors(TwoDepthKan& k) {
    std::vector<Tensor*> out;
    for_each_param(k, "", [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

inline std::vector<Tensor*> param_tensors(KanLayerParams& p) {
    std::vector<Tensor*> out;
    for_each_param(p, "", [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

template <class P>
struct AdamState {
    P m;
    P v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class P>
AdamState<P> make_adam_state(const P& params) {
    return AdamState<P>{zeros_like(params), zeros_like(params), 0};
}

/// Standard Adam update with bias correction.
template <class P>
void adam_step(P& params, P& grads, AdamState<P>& state, double lr) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::vector<Tensor*> p = param_tensors(params);
    std::vector<Tensor*> g = param_tensors(grads);
    std::vector<Tensor*> m = param_tensors(state.m);
    std::vector<Tensor*> v = param_tensors(state.v);
    for (std::size_t t = 0; t < p.size(); ++t) {
        Tensor& pt = *p[t];
        Tensor& gt = *g[t];
        Tensor& mt = *m[t];
        Tensor& vt = *v[t];
        for (std::size_t i = 0; i < pt.size(); ++i) {
            mt[i] = state.beta1 * mt[i] + (1.0 - state.beta1) * gt[i];
            vt[i] = state.beta2 * vt[i] + (1.0 - state.beta2) * gt[i] * gt[i];
            const double mhat = mt[i] / bc1;
            const double vhat = vt[i] / bc2;
            pt[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        pt.require_finite("adam_step");
    }
}

template <class P>
void zero_grads(P& grads) {
    for (Tensor* t : param_tensors(grads))
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
}

// ---------------------------------------------------------------------------
// Training loop with early stopping.
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t max_epochs = 200;
    std::size_t patience = 5;
    LossKind loss = LossKind::mse;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_epochs < 1) throw config_error("TrainConfig: max_epochs must be >= 1");
        if (patience < 1) throw config_error("TrainConfig: patience must be >= 1");
        if (batch_size < 1) throw config_error("TrainConfig: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw config_error("TrainConfig: learning_rate must be > 0");
    }
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> valid_loss;
    std::size_t best_epoch = 0; // 1-based
    double wall_seconds = 0.0;

    std::string to_csv() const {
        std::string out = "epoch,train_loss,valid_loss\n";
        for (std::size_t e = 0; e < train_loss.size(); ++e) {
            out += std::to_string(e + 1);
            out += ',';
            out += format_double(train_loss[e]);
            out += ',';
            out += format_double(valid_loss[e]);
            out += '\n';
        }
        return out;
    }
};

struct TrainResult {
    ForecastModel model; // parameters of the best validation epoch
    TrainHistory history;
};

namespace detail {
inline void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
}
} // namespace detail

/// Mean loss over a list of windows in eval mode, accumulated in sample
/// order so the result does not depend on batch partitioning.
inline double mean_loss(ForecastModel& m, const WindowedDataset& data,
                        const std::vector<std::size_t>& starts, LossKind kind,
                        std::size_t batch_size) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t at = 0; at < starts.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, starts.size() - at);
        std::vector<std::size_t> batch(starts.begin() + static_cast<std::ptrdiff_t>(at),
                                       starts.begin() + static_cast<std::ptrdiff_t>(at + n));
        auto [x, y] = gather_batch(data, batch);
        Tensor pred = model_forward(m, x, /*training=*/false);
        const std::size_t per = pred.size() / n;
        for (std::size_t b = 0; b < n; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                const double d = pred[b * per + i] - y[b * per + i];
                acc += kind == LossKind::mse ? d * d : std::abs(d);
            }
            total += acc / static_cast<double>(per);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

/// Minibatch Adam with per-epoch seeded shuffling and early stopping; keeps
/// and returns the parameters of the best validation epoch.
inline TrainResult train(ForecastModel model, const WindowedDataset& data,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (data.train_starts.empty())
        throw config_error("train: training partition yields no windows");
    if (data.valid_starts.empty())
        throw config_error("train: validation partition yields no windows");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    result.model = model;
    double best_valid = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    ForecastModel grads = zeros_like(model);
    AdamState<ForecastModel> adam = make_adam_state(model);
    std::vector<std::size_t> order = data.train_starts;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(cfg.seed, 0x534855464C45ull, epoch));
        detail::fisher_yates(order, shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        std::size_t batch_index = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batch_index) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - at);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(at + n));
            auto [x, y] = gather_batch(data, batch);
            Rng drop_rng(Rng::derive(cfg.seed, 0x44524F50ull + epoch, batch_index));
            ModelCache cache;
            Tensor pred;
            try {
                pred = model_forward(model, x, /*training=*/true, &drop_rng,
                                     /*update_running=*/true, &cache);
            } catch (const numeric_error& e) {
                throw numeric_error("train: " + std::string(e.what()) + " (epoch " +
                                    std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) + ")");
            }
            const double batch_loss = loss_value(cfg.loss, pred, y);
            if (!std::isfinite(batch_loss))
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));
            epoch_loss += batch_loss * static_cast<double>(n);
            seen += n;
            Tensor up = loss_grad(cfg.loss, pred, y);
            zero_grads(grads);
            model_backward(model, cache, up, grads);
            adam_step(model, grads, adam, cfg.learning_rate);
        }
        result.history.train_loss.push_back(epoch_loss / static_cast<double>(seen));

        const double valid =
            mean_loss(model, data, data.valid_starts, cfg.loss, cfg.batch_size);
        if (!std::isfinite(valid))
            throw numeric_error("train: non-finite validation loss at epoch " +
                                std::to_string(epoch));
        result.history.valid_loss.push_back(valid);

        if (valid < best_valid) {
            best_valid = valid;
            result.history.best_epoch = epoch;
            result.model = model;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= cfg.patience) break;
        }
    }
    result.history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

enum class Split { train, valid, test };

inline const std::vector<std::size_t>& starts_of(const WindowedDataset& d, Split s) {
    switch (s) {
    case Split::train: return d.train_starts;
    case Split::valid: return d.valid_starts;
    case Split::test: return d.test_starts;
    }
    return d.test_starts;
}

/// (MSE, MAE) in standardized units, averaged over all samples, horizon
/// steps and features, eval mode.
inline std::pair<double, double> evaluate(ForecastModel& m, const WindowedDataset& data,
                                          Split split) {
    const std::vector<std::size_t>& starts = starts_of(data, split);
    if (starts.empty()) throw config_error("evaluate: partition yields no windows");
    double se = 0.0, ae = 0.0;
    std::size_t elems = 0;
    const std::size_t batch_size = m.config.batch;
    for (std::size_t at = 0; at < starts.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, starts.size() - at);
        std::vector<std::size_t> batch(starts.begin() + static_cast<std::ptrdiff_t>(at),
                                       starts.begin() + static_cast<std::ptrdiff_t>(at + n));
        auto [x, y] = gather_batch(data, batch);
        Tensor pred = model_forward(m, x, /*training=*/false);
        const std::size_t per = pred.size() / n;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < per; ++i) {
                const double d = pred[b * per + i] - y[b * per + i];
                se += d * d;
                ae += std::abs(d);
                ++elems;
            }
    }
    return {se / static_cast<double>(elems), ae / static_cast<double>(elems)};
}

// ---------------------------------------------------------------------------
// Gradient checking harness.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t params_checked = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences assume the loss is smooth inside the eps-ball of every
/// parameter. Three things break that: relu kinks, spline curvature jumps at
/// knots, and the grid-domain clamp (whose gradient is defined as the
/// clamp-point value, not the true zero outside). This probe measures the
/// distance of a forward pass from each hazard so callers can pick a valid
/// evaluation point before comparing gradients.
struct FdSafety {
    double relu_margin = std::numeric_limits<double>::infinity();   // min |pre-activation|
    double domain_margin = std::numeric_limits<double>::infinity(); // min distance inside the grid
    double knot_margin = std::numeric_limits<double>::infinity();   // min distance to any knot

    bool all_above(double m) const {
        return relu_margin > m && domain_margin > m && knot_margin > m;
    }
};

namespace detail {
inline void kan_input_margins(const KanLayerParams& layer, const Tensor& inputs, FdSafety& s) {
    const double dmin = layer.grid.domain_min(), dmax = layer.grid.domain_max();
    const double h = layer.grid.step();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const double t = inputs[i];
        s.domain_margin = std::min(s.domain_margin, std::min(t - dmin, dmax - t));
        const double pos = (t - dmin) / h;
        s.knot_margin = std::min(s.knot_margin, std::abs(pos - std::round(pos)) * h);
    }
}
} // namespace detail

inline FdSafety fd_safety(ForecastModel& model, const Tensor& x) {
    ModelCache cache;
    model_forward(model, x, /*training=*/true, nullptr, false, &cache);
    FdSafety s;
    for (const BlockCache& blk : cache.blocks) {
        for (std::size_t i = 0; i < blk.time.preact.size(); ++i)
            s.relu_margin = std::min(s.relu_margin, std::abs(blk.time.preact[i]));
        for (std::size_t i = 0; i < blk.feature.preact1.size(); ++i)
            s.relu_margin = std::min(s.relu_margin, std::abs(blk.feature.preact1[i]));
    }
    if (model.projection_kan) {
        detail::kan_input_margins(model.projection_kan->inner, cache.proj_kan.inner.x, s);
        detail::kan_input_margins(model.projection_kan->outer, cache.proj_kan.outer.x, s);
    }
    if (model.kan_time_mixing) {
        detail::kan_input_margins(model.kan_time_mixing->inner, cache.time_kan.inner.x, s);
        detail::kan_input_margins(model.kan_time_mixing->outer, cache.time_kan.outer.x, s);
    }
    return s;
}

/// Central finite differences of the MSE loss over every parameter (or a
/// seeded random subset above `max_params`) against the analytic backward
/// pass. Relative error uses a floored denominator so finite-difference
/// roundoff on near-zero gradients is not misread as a failure.
inline GradCheckReport gradient_check(ForecastModel& model, const Tensor& x, const Tensor& y,
                                      double eps = 1e-5, std::size_t max_params = 10000,
                                      std::uint64_t subset_seed = 0) {
    if (model.config.dropout != 0.0)
        throw config_error("gradient_check: model dropout must be 0 (stochastic forward)");

    ModelCache cache;
    Tensor pred = model_forward(model, x, /*training=*/true, nullptr, false, &cache);
    Tensor up = loss_grad(LossKind::mse, pred, y);
    ForecastModel grads = zeros_like(model);
    model_backward(model, cache, up, grads);

    std::vector<std::pair<std::string, Tensor*>> params;
    for_each_param(model, [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
    std::vector<Tensor*> gparams;
    for_each_param(grads, [&](const std::string&, Tensor& t) { gparams.push_back(&t); });

    std::vector<std::pair<std::size_t, std::size_t>> coords; // (tensor, element)
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].second->size(); ++i) coords.emplace_back(t, i);
    if (coords.size() > max_params) {
        Rng rng(subset_seed ^ 0x47434845434Bull);
        for (std::size_t i = 0; i < max_params; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_params);
    }

    auto loss = [&]() {
        Tensor p = model_forward(model, x, /*training=*/true);
        return loss_value(LossKind::mse, p, y);
    };

    GradCheckReport report;
    for (const auto& [t, i] : coords) {
        Tensor& tensor = *params[t].second;
        const double orig = tensor[i];
        tensor[i] = orig + eps;
        const double fplus = loss();
        tensor[i] = orig - eps;
        const double fminus = loss();
        tensor[i] = orig;
        const double numeric = (fplus - fminus) / (2.0 * eps);
        const double analytic = (*gparams[t])[i];
        const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-3);
        const double rel = std::abs(analytic - numeric) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_param = params[t].first;
            report.worst_index = i;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
        ++report.params_checked;
    }
    return report;
}

} // namespace kanmix
