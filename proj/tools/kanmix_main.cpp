// kanmix: train, evaluate, gradient-check and benchmark the TSMixer /
// TSKANMixer forecasting models on CSV time series.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kanmix/checkpoint.hpp"
#include "kanmix/data_io.hpp"
#include "kanmix/mixer.hpp"
#include "kanmix/report.hpp"
#include "kanmix/training.hpp"
#include "kanmix/util.hpp"

namespace fs = std::filesystem;
using namespace kanmix;

namespace {

constexpr const char* kOutDirEnv = "KANMIX_OUT_DIR";

std::string default_out_dir() {
    if (const char* env = std::getenv(kOutDirEnv)) return env;
    return "out";
}

std::vector<DatasetSpec> load_full_registry(const std::string& registry_path) {
    if (registry_path.empty()) return builtin_registry();
    return merge_registries(load_registry(registry_path));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw io_error("write to '" + path.string() + "' failed");
}

struct TrainedRun {
    TrainResult result;
    CheckpointExtras extras;
    WindowedDataset data;
};

/// Shared by `train` and `benchmark`: load, split, standardize, window, train.
TrainedRun run_training(const RunSpec& spec, const DatasetSpec& dataset,
                        const std::string& data_path) {
    RawSeries raw = load_csv(data_path, dataset);
    auto ranges = apply_split(raw, dataset);
    Standardization st = standardize(raw.values, ranges[0].begin, ranges[0].end);
    WindowedDataset data =
        window(std::move(st.normalized), spec.model.L, spec.model.H, ranges[0], ranges[1], ranges[2]);
    ForecastModel model = build_model(spec.model);
    TrainedRun run{train(std::move(model), data, spec.train), {}, std::move(data)};
    run.extras.means = st.means;
    run.extras.stds = st.stds;
    run.extras.dataset_name = dataset.name;
    run.extras.has_split = true;
    run.extras.train = ranges[0];
    run.extras.valid = ranges[1];
    run.extras.test = ranges[2];
    return run;
}

nlohmann::json run_summary(const RunSpec& spec, const TrainedRun& run, double valid_mse,
                           double valid_mae) {
    const std::size_t epochs = run.result.history.train_loss.size();
    nlohmann::json j;
    j["dataset"] = run.extras.dataset_name;
    j["variant"] = to_string(spec.model.variant);
    j["seed"] = spec.model.seed;
    j["loss"] = to_string(spec.train.loss);
    j["epochs_run"] = epochs;
    j["best_epoch"] = run.result.history.best_epoch;
    j["valid_mse"] = valid_mse;
    j["valid_mae"] = valid_mae;
    j["wall_seconds"] = run.result.history.wall_seconds;
    j["time_per_epoch_seconds"] =
        epochs > 0 ? run.result.history.wall_seconds / static_cast<double>(epochs) : 0.0;
    return j;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, data_path, out_dir, registry_path;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
    auto registry = load_full_registry(args.registry_path);
    RunSpec spec = load_run_config(args.config_path, registry);
    if (args.seed) {
        spec.model.seed = *args.seed;
        spec.train.seed = *args.seed;
    }
    if (spec.dataset.empty())
        throw config_error("train: config must reference a 'dataset' so split rules are known");
    const DatasetSpec* dataset = find_dataset(registry, spec.dataset);

    TrainedRun run = run_training(spec, *dataset, args.data_path);
    auto [valid_mse, valid_mae] = evaluate(run.result.model, run.data, Split::valid);

    const fs::path out_dir = args.out_dir.empty() ? fs::path(default_out_dir()) : fs::path(args.out_dir);
    ensure_dir(out_dir);
    save_checkpoint((out_dir / "checkpoint.ckpt").string(), run.result.model, run.extras);
    write_text_file(out_dir / "history.csv", run.result.history.to_csv());
    nlohmann::json summary = run_summary(spec, run, valid_mse, valid_mae);
    summary["checkpoint"] = (out_dir / "checkpoint.ckpt").string();
    summary["history"] = (out_dir / "history.csv").string();
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint_path, data_path;
};

int cmd_eval(const EvalArgs& args) {
    LoadedCheckpoint ckpt = load_checkpoint(args.checkpoint_path);
    if (ckpt.extras.means.empty() || !ckpt.extras.has_split)
        throw config_error("eval: checkpoint lacks normalization/split metadata");
    DatasetSpec spec;
    spec.name = ckpt.extras.dataset_name.empty() ? "checkpoint" : ckpt.extras.dataset_name;
    spec.feature_count = ckpt.model.config.C;
    RawSeries raw = load_csv(args.data_path, spec);
    Tensor normalized = apply_standardization(raw.values, ckpt.extras.means, ckpt.extras.stds);
    WindowedDataset data = window(std::move(normalized), ckpt.model.config.L, ckpt.model.config.H,
                                  ckpt.extras.train, ckpt.extras.valid, ckpt.extras.test);
    auto [mse, mae] = evaluate(ckpt.model, data, Split::test);
    nlohmann::json j;
    j["mse"] = mse;
    j["mae"] = mae;
    std::cout << j.dump() << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    std::string variant = "tsmixer";
    std::size_t L = 8, H = 4, C = 3, blocks = 2, hidden = 6, kan_dim = 5, batch = 4;
    int grid = 3, k = 2;
    std::uint64_t seed = 1;
    double eps = 1e-5;
    double threshold = 1e-5;
    std::size_t max_params = 10000;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    ModelConfig cfg;
    cfg.variant = variant_from_string(args.variant);
    cfg.L = args.L;
    cfg.H = args.H;
    cfg.C = args.C;
    cfg.batch = args.batch;
    cfg.blocks = args.blocks;
    cfg.dropout = 0.0;
    cfg.hidden_size = args.hidden;
    cfg.learning_rate = 1e-3;
    if (cfg.uses_kan()) {
        cfg.kan_dim = args.kan_dim;
        cfg.kan_grid = args.grid;
        cfg.kan_k = args.k;
    }

    // Central differences need the loss smooth around the evaluation point;
    // scan seeds until the forward pass clears relu kinks, spline knots and
    // the grid-domain clamp by a safe margin.
    for (std::uint64_t seed = args.seed; seed < args.seed + 256; ++seed) {
        cfg.seed = seed;
        ForecastModel model = build_model(cfg);
        Rng rng(seed * 7919 + 17);
        Tensor x({args.batch, cfg.L, cfg.C});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);
        Tensor y({args.batch, cfg.H, cfg.C});
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform(-1.5, 1.5);
        if (!fd_safety(model, x).all_above(1e-3)) continue;

        GradCheckReport report = gradient_check(model, x, y, args.eps, args.max_params, seed);
        nlohmann::json j;
        j["variant"] = args.variant;
        j["seed"] = seed;
        j["params_checked"] = report.params_checked;
        j["max_rel_err"] = report.max_rel_err;
        j["worst_param"] = report.worst_param;
        j["threshold"] = args.threshold;
        j["pass"] = report.max_rel_err < args.threshold;
        std::cout << j.dump(2) << std::endl;
        if (report.max_rel_err < args.threshold) return 0;
        throw numeric_error("gradcheck: max relative error " + format_double(report.max_rel_err) +
                            " exceeds threshold " + format_double(args.threshold));
    }
    throw numeric_error("gradcheck: no finite-difference-safe evaluation point found "
                        "(relu kinks / spline knots / clamp boundary)");
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkArgs {
    std::string suite_path, out_dir, registry_path, data_dir;
    unsigned jobs = 1;
};

struct SuiteEntry {
    std::string dataset, variant, config_path, data_path;
    std::optional<std::uint64_t> seed;
};

std::vector<SuiteEntry> load_suite(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("benchmark: cannot open suite '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("benchmark: suite '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_array() || j.empty())
        throw config_error("benchmark: suite must be a non-empty JSON list of runs");
    std::vector<SuiteEntry> entries;
    for (const auto& e : j) {
        SuiteEntry entry;
        entry.dataset = e.at("dataset").get<std::string>();
        entry.variant = e.at("variant").get<std::string>();
        entry.config_path = e.at("config").get<std::string>();
        if (e.contains("data")) entry.data_path = e.at("data").get<std::string>();
        if (e.contains("seed")) entry.seed = e.at("seed").get<std::uint64_t>();
        entries.push_back(std::move(entry));
    }
    return entries;
}

RunRecord run_suite_entry(const SuiteEntry& entry, const std::vector<DatasetSpec>& registry,
                          const BenchmarkArgs& args, const fs::path& out_dir) {
    RunRecord record;
    record.dataset = entry.dataset;
    record.variant = entry.variant;
    try {
        RunSpec spec = load_run_config(entry.config_path, registry);
        if (to_string(spec.model.variant) != entry.variant)
            throw config_error("suite variant '" + entry.variant + "' does not match config's '" +
                               to_string(spec.model.variant) + "'");
        if (!spec.dataset.empty() && spec.dataset != entry.dataset)
            throw config_error("suite dataset '" + entry.dataset + "' does not match config's '" +
                               spec.dataset + "'");
        const DatasetSpec* dataset = find_dataset(registry, entry.dataset);
        if (dataset == nullptr)
            throw config_error("suite references unknown dataset '" + entry.dataset + "'");
        if (entry.seed) {
            spec.model.seed = *entry.seed;
            spec.train.seed = *entry.seed;
        }
        std::string data_path = entry.data_path;
        if (data_path.empty()) {
            if (args.data_dir.empty())
                throw config_error("suite entry for '" + entry.dataset +
                                   "' has no data path and no --data-dir was given");
            data_path = (fs::path(args.data_dir) / (entry.dataset + ".csv")).string();
        }

        TrainedRun run = run_training(spec, *dataset, data_path);
        auto [valid_mse, valid_mae] = evaluate(run.result.model, run.data, Split::valid);
        auto [test_mse, test_mae] = evaluate(run.result.model, run.data, Split::test);

        const fs::path run_dir = out_dir / (entry.dataset + "__" + entry.variant);
        ensure_dir(run_dir);
        save_checkpoint((run_dir / "checkpoint.ckpt").string(), run.result.model, run.extras);
        write_text_file(run_dir / "history.csv", run.result.history.to_csv());
        nlohmann::json summary = run_summary(spec, run, valid_mse, valid_mae);
        summary["test_mse"] = test_mse;
        summary["test_mae"] = test_mae;
        write_text_file(run_dir / "summary.json", summary.dump(2) + "\n");

        record.mse = test_mse;
        record.mae = test_mae;
        record.best_epoch = run.result.history.best_epoch;
        record.epochs_run = run.result.history.train_loss.size();
        record.wall_seconds = run.result.history.wall_seconds;
        record.time_per_epoch_seconds =
            record.epochs_run > 0 ? record.wall_seconds / static_cast<double>(record.epochs_run)
                                  : 0.0;
    } catch (const std::exception& e) {
        record.status = std::string("failed: ") + e.what();
    }
    return record;
}

int cmd_benchmark(const BenchmarkArgs& args) {
    auto registry = load_full_registry(args.registry_path);
    std::vector<SuiteEntry> entries = load_suite(args.suite_path);
    const fs::path out_dir = args.out_dir.empty() ? fs::path(default_out_dir()) : fs::path(args.out_dir);
    ensure_dir(out_dir);

    std::vector<RunRecord> records(entries.size());
    if (args.jobs <= 1) {
        for (std::size_t i = 0; i < entries.size(); ++i)
            records[i] = run_suite_entry(entries[i], registry, args, out_dir);
    } else {
        // Opt-in parallelism across runs; each run stays single-threaded and
        // deterministic, only wall-clock ordering changes.
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (unsigned t = 0; t < args.jobs; ++t)
            pool.emplace_back([&]() {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= entries.size()) return;
                    records[i] = run_suite_entry(entries[i], registry, args, out_dir);
                }
            });
        for (auto& th : pool) th.join();
    }

    BenchmarkReport report = make_report(records);
    write_text_file(out_dir / "report.csv", report_to_csv(report));
    const std::string text = report_to_text(report);
    write_text_file(out_dir / "report.txt", text);
    std::cout << text;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TSMixer / TSKANMixer time-series forecasting toolkit"};
    app.require_subcommand(1);

    TrainArgs train_args;
    std::uint64_t seed_value = 0;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", train_args.config_path, "Run config JSON")->required();
    train_cmd->add_option("--data", train_args.data_path, "Input series CSV")->required();
    train_cmd->add_option("--out", train_args.out_dir,
                          "Output directory (default: $" + std::string(kOutDirEnv) + " or ./out)");
    train_cmd->add_option("--registry", train_args.registry_path, "Extra dataset registry JSON");
    CLI::Option* seed_opt = train_cmd->add_option("--seed", seed_value, "Override the config seed");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_args.data_path, "Input series CSV")->required();

    GradcheckArgs gc;
    CLI::App* gc_cmd = app.add_subcommand("gradcheck",
                                          "Compare analytic gradients with finite differences");
    gc_cmd->add_option("--variant", gc.variant, "tsmixer | tskanmixer_v01 | tskanmixer_v02");
    gc_cmd->add_option("--L", gc.L, "Input length");
    gc_cmd->add_option("--H", gc.H, "Forecast horizon");
    gc_cmd->add_option("--C", gc.C, "Feature count");
    gc_cmd->add_option("--blocks", gc.blocks, "Mixer blocks");
    gc_cmd->add_option("--hidden", gc.hidden, "Feature-mixing hidden size");
    gc_cmd->add_option("--kan-dim", gc.kan_dim, "KAN hidden width");
    gc_cmd->add_option("--grid", gc.grid, "Spline intervals G");
    gc_cmd->add_option("--k", gc.k, "Spline order k");
    gc_cmd->add_option("--batch", gc.batch, "Batch size of the probe input");
    gc_cmd->add_option("--seed", gc.seed, "First candidate seed");
    gc_cmd->add_option("--eps", gc.eps, "Finite-difference step");
    gc_cmd->add_option("--threshold", gc.threshold, "Maximum allowed relative error");
    gc_cmd->add_option("--max-params", gc.max_params, "Parameter budget before subsampling");

    BenchmarkArgs bench;
    CLI::App* bench_cmd = app.add_subcommand("benchmark", "Run a suite of (dataset, variant) runs");
    bench_cmd->add_option("--suite", bench.suite_path, "Suite JSON list")->required();
    bench_cmd->add_option("--out", bench.out_dir,
                          "Output directory (default: $" + std::string(kOutDirEnv) + " or ./out)");
    bench_cmd->add_option("--registry", bench.registry_path, "Extra dataset registry JSON");
    bench_cmd->add_option("--data-dir", bench.data_dir, "Directory with <dataset>.csv files");
    bench_cmd->add_option("--jobs", bench.jobs, "Parallel runs (default 1, sequential)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train_cmd) {
            if (*seed_opt) train_args.seed = seed_value;
            return cmd_train(train_args);
        }
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*gc_cmd) return cmd_gradcheck(gc);
        if (*bench_cmd) return cmd_benchmark(bench);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const dim_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
