// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 7 drives the real CLI binary, passed via --cli.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "kanmix/checkpoint.hpp"
#include "kanmix/data_io.hpp"
#include "kanmix/mixer.hpp"
#include "kanmix/report.hpp"
#include "kanmix/training.hpp"
#include "oracles.hpp"
#include "reference_data.hpp"

using namespace kanmix;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("criterion %d (%s): %s | %s\n", criterion, name, pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

ModelConfig toy_config(Variant v, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.L = 8;
    cfg.H = 4;
    cfg.C = 3;
    cfg.batch = 4;
    cfg.blocks = 2;
    cfg.dropout = 0.0;
    cfg.hidden_size = 6;
    cfg.learning_rate = 1e-3;
    if (v != Variant::tsmixer) {
        cfg.kan_dim = 5;
        cfg.kan_grid = 3;
        cfg.kan_k = 2;
    }
    cfg.seed = seed;
    return cfg;
}

// --------------------------------------------------------------------------
// 1. Gradient correctness at toy dims for all three variants.
// --------------------------------------------------------------------------
void criterion_1() {
    Timer timer;
    double worst = 0.0;
    std::string detail;
    bool ok = true;
    for (Variant v : {Variant::tsmixer, Variant::tskanmixer_v01, Variant::tskanmixer_v02}) {
        // Central differences need a smooth neighborhood; scan seeds until
        // the forward pass clears relu kinks, spline knots and the clamp.
        bool checked = false;
        for (std::uint64_t seed = 1; seed <= 64; ++seed) {
            Rng rng(seed * 1000 + 8);
            Tensor x({4, 8, 3});
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);
            Tensor y({4, 4, 3});
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform(-1.5, 1.5);
            ForecastModel m = build_model(toy_config(v, seed));
            if (!fd_safety(m, x).all_above(1e-3)) continue;
            GradCheckReport rep = gradient_check(m, x, y, 1e-5);
            worst = std::max(worst, rep.max_rel_err);
            detail += to_string(v) + " " + format_double(rep.max_rel_err) + " (" +
                      std::to_string(rep.params_checked) + " params); ";
            checked = true;
            break;
        }
        if (!checked) {
            ok = false;
            detail += to_string(v) + ": no FD-safe evaluation point; ";
        }
    }
    const double secs = timer.seconds();
    ok = ok && worst < 1e-5 && secs < 60.0;
    report(1, "gradient correctness", ok,
           detail + "max rel err " + format_double(worst) + " (tol 1e-5), " +
               format_double(secs) + " s (limit 60)");
}

// --------------------------------------------------------------------------
// 2. Spline property suite over random grids.
// --------------------------------------------------------------------------
void criterion_2() {
    Timer timer;
    Rng rng(20240317);
    double worst_pou = 0.0, worst_deriv = 0.0;
    bool nonneg = true, local = true;
    const int grids = 20, points_per_grid = 500;
    for (int g = 0; g < grids; ++g) {
        const int G = 1 + static_cast<int>(rng.below(10));
        const int k = static_cast<int>(rng.below(6));
        KnotGrid grid = make_grid(-3, 3, G, k);
        int done = 0;
        while (done < points_per_grid) {
            const double x = rng.uniform(-3.0, 3.0);
            const double pos = (x - grid.domain_min()) / grid.step();
            // Keep the FD stencil off the knots, where spline curvature jumps
            // make central differences meaningless.
            const bool near_knot = std::abs(pos - std::round(pos)) * grid.step() < 1e-4;
            if (near_knot) continue;
            ++done;
            const std::vector<double> v = grid.basis_values(x);
            double sum = 0.0;
            int lo = -1, hi = -1;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] < 0.0) nonneg = false;
                sum += v[i];
                if (v[i] != 0.0) {
                    if (lo < 0) lo = static_cast<int>(i);
                    hi = static_cast<int>(i);
                }
            }
            worst_pou = std::max(worst_pou, std::abs(sum - 1.0));
            if (hi - lo > k) local = false;
            if (k >= 1) {
                const std::vector<double> d = grid.basis_derivatives(x);
                const std::vector<double> up = grid.basis_values(x + 1e-6);
                const std::vector<double> dn = grid.basis_values(x - 1e-6);
                for (std::size_t i = 0; i < d.size(); ++i) {
                    const double numeric = (up[i] - dn[i]) / 2e-6;
                    worst_deriv = std::max(worst_deriv, oracle::fd_rel_err(d[i], numeric));
                }
            }
        }
    }
    const double secs = timer.seconds();
    const bool ok =
        worst_pou <= 1e-12 && nonneg && local && worst_deriv < 1e-5 && secs < 10.0;
    report(2, "spline properties", ok,
           "partition-of-unity err " + format_double(worst_pou) + " (tol 1e-12), nonneg " +
               (nonneg ? "exact" : "VIOLATED") + ", local support " +
               (local ? "exact" : "VIOLATED") + ", deriv-vs-FD " + format_double(worst_deriv) +
               " (tol 1e-5), " + format_double(secs) + " s (limit 10)");
}

// --------------------------------------------------------------------------
// 3. KAN forward equals the per-edge scalar oracle.
// --------------------------------------------------------------------------
void criterion_3() {
    Rng rng(777);
    double worst = 0.0;
    for (int layer = 0; layer < 100; ++layer) {
        const std::size_t n_in = 1 + rng.below(8);
        const std::size_t n_out = 1 + rng.below(8);
        const int G = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(4));
        KanLayerParams p(n_in, n_out, make_grid(-3, 3, G, k));
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) p.coeffs[i] = rng.uniform(-0.5, 0.5);
        for (std::size_t i = 0; i < p.base_weight.size(); ++i) {
            p.base_weight[i] = rng.uniform(-1, 1);
            p.spline_weight[i] = rng.uniform(-1, 1);
        }
        Tensor x({3, n_in});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-3.5, 3.5);
        Tensor got = kan_layer_forward(p, x);
        Tensor want = oracle::kan_layer_scalar(p.coeffs, p.base_weight, p.spline_weight, -3, 3,
                                               G, k, x);
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    report(3, "KAN oracle equivalence", worst <= 1e-12,
           "max |forward - oracle| = " + format_double(worst) + " over 100 layers (tol 1e-12)");
}

// --------------------------------------------------------------------------
// 4. A small KAN fits sin(pi x).
// --------------------------------------------------------------------------
void criterion_4() {
    Timer timer;
    Rng data_rng(42);
    const std::size_t N = 256;
    Tensor x({N, 1}), y({N, 1});
    for (std::size_t i = 0; i < N; ++i) {
        const double xi = data_rng.uniform(-1.0, 1.0);
        x.at(i, 0) = xi;
        y.at(i, 0) = std::sin(3.14159265358979323846 * xi);
    }
    Rng init(7);
    TwoDepthKan kan = make_two_depth_kan(1, 1, make_grid(-3, 3, 5, 3), init, 5);
    AdamState<TwoDepthKan> adam = make_adam_state(kan);
    TwoDepthKan grads = zeros_like(kan);
    for (int step = 0; step < 2000; ++step) {
        TwoDepthKanCache cache;
        Tensor pred = two_depth_forward(kan, x, &cache);
        Tensor up = loss_grad(LossKind::mse, pred, y);
        zero_grads(grads);
        two_depth_backward(kan, cache, up, grads);
        adam_step(kan, grads, adam, 0.01);
    }
    const double mse = loss_value(LossKind::mse, two_depth_forward(kan, x), y);
    const double secs = timer.seconds();
    report(4, "function fitting", mse < 1e-3 && secs < 30.0,
           "train mse " + format_double(mse) + " after 2000 Adam steps (tol 1e-3), " +
               format_double(secs) + " s (limit 30)");
}

// --------------------------------------------------------------------------
// 5. Published improvement percentages reproduce from the metric pairs.
// --------------------------------------------------------------------------
void criterion_5() {
    double worst = 0.0;
    std::string worst_at;
    for (const auto& row : refdata::result_rows()) {
        const double checks[4][2] = {
            {compute_delta_pct(row.tsmixer_mse, row.v01_mse), row.v01_mse_delta},
            {compute_delta_pct(row.tsmixer_mae, row.v01_mae), row.v01_mae_delta},
            {compute_delta_pct(row.tsmixer_mse, row.v02_mse), row.v02_mse_delta},
            {compute_delta_pct(row.tsmixer_mae, row.v02_mae), row.v02_mae_delta},
        };
        for (const auto& c : checks) {
            const double err = std::abs(c[0] - c[1]);
            if (err > worst) {
                worst = err;
                worst_at = row.dataset;
            }
        }
    }
    report(5, "delta-pct reproduction", worst <= 0.01,
           "40 pairs, worst |computed - printed| = " + format_double(worst) +
               " pp at " + worst_at + " (tol 0.01)");
}

// --------------------------------------------------------------------------
// 6. Desk-scale end-to-end comparison on a synthetic dataset.
// --------------------------------------------------------------------------
Tensor synthetic_5000x3(std::uint64_t seed) {
    const std::size_t T = 5000;
    Rng rng(seed);
    Tensor s({T, 3});
    double walk = 0.0;
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t t = 0; t < T; ++t) {
        const double phase = two_pi * static_cast<double>(t) / 24.0;
        s.at(t, 0) = std::sin(phase) + 0.2 * rng.normal();
        s.at(t, 1) = 0.9 * std::sin(phase + two_pi / 3.0) + 0.2 * rng.normal();
        walk += 0.03 * rng.normal(); // noise-driven trend
        s.at(t, 2) = walk;
    }
    return s;
}

void criterion_6() {
    Timer timer;
    Tensor raw = synthetic_5000x3(2024);
    Standardization st = standardize(raw, 0, 3500);
    WindowedDataset data =
        window(std::move(st.normalized), 32, 8, {0, 3500}, {3500, 4250}, {4250, 5000});

    // Last-value persistence baseline on the test windows.
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t s : data.test_starts)
        for (std::size_t h = 0; h < data.H; ++h)
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = data.series.at(s + data.L - 1, c) - data.series.at(s + data.L + h, c);
                se += d * d;
                ++n;
            }
    const double persistence = se / static_cast<double>(n);

    struct RunCfg {
        Variant variant;
        std::size_t batch, kan_dim;
        int grid, k;
        std::uint64_t seed;
    };
    const RunCfg cfgs[3] = {
        {Variant::tsmixer, 32, 0, 0, 0, 11},
        {Variant::tskanmixer_v01, 16, 8, 3, 3, 1},
        {Variant::tskanmixer_v02, 32, 8, 3, 3, 11},
    };
    double mse[3] = {0, 0, 0};
    bool all_beat_persistence = true;
    std::string detail = "persistence mse " + format_double(persistence) + "; ";
    for (int i = 0; i < 3; ++i) {
        ModelConfig mc;
        mc.variant = cfgs[i].variant;
        mc.L = 32;
        mc.H = 8;
        mc.C = 3;
        mc.batch = cfgs[i].batch;
        mc.blocks = 2;
        mc.dropout = 0.0;
        mc.hidden_size = 16;
        mc.learning_rate = 1e-3;
        mc.seed = cfgs[i].seed;
        if (mc.variant != Variant::tsmixer) {
            mc.kan_dim = cfgs[i].kan_dim;
            mc.kan_grid = cfgs[i].grid;
            mc.kan_k = cfgs[i].k;
        }
        TrainConfig tc;
        tc.max_epochs = 200; // strict early-stopping regime
        tc.patience = 5;
        tc.loss = LossKind::mse;
        tc.learning_rate = mc.learning_rate;
        tc.batch_size = mc.batch;
        tc.seed = mc.seed;
        TrainResult r = train(build_model(mc), data, tc);
        auto [test_mse, test_mae] = evaluate(r.model, data, Split::test);
        mse[i] = test_mse;
        const double improvement = 100.0 * (persistence - test_mse) / persistence;
        if (test_mse > 0.8 * persistence) all_beat_persistence = false;
        detail += to_string(mc.variant) + " mse " + format_double(test_mse) + " (" +
                  format_double(improvement) + "% vs persistence, " +
                  std::to_string(r.history.train_loss.size()) + " epochs); ";
    }
    const double best_kan_ratio = std::min(mse[1], mse[2]) / mse[0];
    const double secs = timer.seconds();
    const bool ok = all_beat_persistence && best_kan_ratio <= 1.10 && secs < 600.0;
    report(6, "desk-scale end-to-end", ok,
           detail + "best KAN/tsmixer ratio " + format_double(best_kan_ratio) +
               " (limit 1.10), " + format_double(secs) + " s (limit 600)");
}

// --------------------------------------------------------------------------
// 7. CLI determinism: byte-identical artifacts for identical runs.
// --------------------------------------------------------------------------
std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_7(const std::string& cli, const fs::path& workdir) {
    if (cli.empty()) {
        report(7, "CLI determinism", false, "no --cli path given");
        return;
    }
    const fs::path dir = workdir / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Small seeded dataset and run config.
    Tensor raw = synthetic_5000x3(99);
    RawSeries series;
    series.values = Tensor({400, 3});
    for (std::size_t i = 0; i < series.values.size(); ++i) series.values[i] = raw[i];
    series.feature_names = {"s1", "s2", "trend"};
    write_csv((dir / "data.csv").string(), series);

    std::ofstream reg(dir / "registry.json");
    reg << R"([{"name":"detsynth","features":3,)"
        << R"("split":{"type":"rows","train":280,"valid":60,"test":60},"time_steps":400}])";
    reg.close();
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"variant":"tskanmixer_v02","dataset":"detsynth","L":16,"H":4,"batch":32,)"
        << R"("blocks":2,"dropout":0.1,"hidden_size":8,"learning_rate":0.001,)"
        << R"("kan_dim":8,"kan_grid":4,"kan_k":3,"loss":"mse","seed":5,"patience":5,)"
        << R"("max_epochs":10})";
    cfg.close();

    auto run = [&](const std::string& out) {
        const std::string cmd = "'" + cli + "' train --config '" + (dir / "config.json").string() +
                                "' --data '" + (dir / "data.csv").string() + "' --registry '" +
                                (dir / "registry.json").string() + "' --out '" +
                                (dir / out).string() + "' > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    const int rc1 = run("a");
    const int rc2 = run("b");
    if (rc1 != 0 || rc2 != 0) {
        report(7, "CLI determinism", false,
               "train runs exited with " + std::to_string(rc1) + "/" + std::to_string(rc2));
        return;
    }
    const std::string hist_a = read_file(dir / "a" / "history.csv");
    const std::string hist_b = read_file(dir / "b" / "history.csv");
    const std::string ckpt_a = read_file(dir / "a" / "checkpoint.ckpt");
    const std::string ckpt_b = read_file(dir / "b" / "checkpoint.ckpt");
    const bool ok = !hist_a.empty() && hist_a == hist_b && !ckpt_a.empty() && ckpt_a == ckpt_b;
    report(7, "CLI determinism", ok,
           "history.csv " + std::to_string(hist_a.size()) + " bytes " +
               (hist_a == hist_b ? "identical" : "DIFFER") + ", checkpoint " +
               std::to_string(ckpt_a.size()) + " bytes " +
               (ckpt_a == ckpt_b ? "identical" : "DIFFER"));
}

// --------------------------------------------------------------------------
// 8. Protocol fidelity: configs, split arithmetic, window boundaries.
// --------------------------------------------------------------------------
void criterion_8() {
    bool ok = true;
    std::string detail;

    int parsed = 0;
    for (const auto& row : refdata::config_rows()) {
        nlohmann::json j = {{"variant", row.variant}, {"dataset", row.dataset},
                            {"L", row.L},             {"H", row.H},
                            {"batch", row.batch},     {"blocks", row.blocks},
                            {"dropout", row.dropout}, {"hidden_size", row.hidden},
                            {"learning_rate", row.lr}};
        if (row.kan_dim != 0) {
            j["kan_dim"] = row.kan_dim;
            j["kan_grid"] = row.kan_grid;
            j["kan_k"] = row.kan_k;
        }
        try {
            RunSpec spec = parse_run_config(j, builtin_registry());
            spec.model.validate();
            ++parsed;
        } catch (const std::exception& e) {
            ok = false;
            detail += std::string(row.dataset) + "/" + row.variant + ": " + e.what() + "; ";
        }
    }
    detail += std::to_string(parsed) + "/30 configs parse; ";

    // ETT month split and a literal row split.
    RawSeries ett;
    ett.values = Tensor({17420, 7});
    auto ranges = apply_split(ett, *find_dataset(builtin_registry(), "ETTh1"));
    const bool ett_ok = ranges[0].rows() == 8640 && ranges[1].rows() == 2880 &&
                        ranges[2].rows() == 2880;
    if (!ett_ok) ok = false;
    detail += std::string("ETTh split 8640/2880/2880 ") + (ett_ok ? "ok" : "WRONG") + "; ";

    RawSeries nn5;
    nn5.values = Tensor({113, 111});
    auto nr = apply_split(nn5, *find_dataset(builtin_registry(), "NN5_weekly"));
    const bool rows_ok = nr[0].rows() == 96 && nr[1].rows() == 8 && nr[2].rows() == 8;
    if (!rows_ok) ok = false;
    detail += std::string("row splits literal ") + (rows_ok ? "ok" : "WRONG") + "; ";

    // Index audit: no window may cross a split boundary.
    Tensor series({500, 2});
    WindowedDataset d = window(std::move(series), 16, 4, {0, 300}, {300, 400}, {400, 500});
    bool audit = !d.train_starts.empty() && !d.valid_starts.empty() && !d.test_starts.empty();
    for (std::size_t s : d.train_starts)
        if (s + 20 > 300) audit = false;
    for (std::size_t s : d.valid_starts)
        if (s < 300 || s + 20 > 400) audit = false;
    for (std::size_t s : d.test_starts)
        if (s < 400 || s + 20 > 500) audit = false;
    // Exhaustive: every start strictly inside exactly one split.
    std::size_t expect_train = 300 - 20 + 1, expect_valid = 100 - 20 + 1, expect_test = 100 - 20 + 1;
    if (d.train_starts.size() != expect_train || d.valid_starts.size() != expect_valid ||
        d.test_starts.size() != expect_test)
        audit = false;
    if (!audit) ok = false;
    detail += std::string("window boundary audit ") + (audit ? "ok" : "WRONG");

    report(8, "protocol fidelity", ok, detail);
}

} // namespace

int main(int argc, char** argv) {
    std::string cli;
    fs::path workdir = fs::temp_directory_path() / "kanmix_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) cli = argv[++i];
        else if (arg == "--workdir" && i + 1 < argc) workdir = argv[++i];
    }
    fs::create_directories(workdir);

    Timer total;
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7(cli, workdir);
    criterion_8();

    std::printf("acceptance: %d/8 criteria passed in %.1f s\n", 8 - g_failures, total.seconds());
    return g_failures == 0 ? 0 : 1;
}
