#pragma once

#include <array>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanmix/errors.hpp"
#include "kanmix/mixer.hpp"
#include "kanmix/tensor.hpp"
#include "kanmix/training.hpp"
#include "kanmix/util.hpp"

namespace kanmix {

// ---------------------------------------------------------------------------
// Dataset registry.
// ---------------------------------------------------------------------------

/// Train/valid/test portions, either calendar months resolved through the
/// series granularity (30-day-month convention) or literal row counts.
struct SplitRule {
    enum class Kind { months, rows };
    Kind kind = Kind::rows;
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
};

struct DatasetSpec {
    std::string name;
    std::size_t feature_count = 0;
    std::string granularity; // "1 hour", "15 min", "1 day", "1 month"
    SplitRule split;
    std::size_t expected_time_steps = 0; // informational; loader warns on mismatch
};

inline std::size_t rows_per_month(const std::string& granularity) {
    if (granularity == "1 hour") return 30 * 24;
    if (granularity == "15 min") return 30 * 24 * 4;
    if (granularity == "1 day") return 30;
    if (granularity == "1 month") return 1;
    throw config_error("rows_per_month: unsupported granularity '" + granularity + "'");
}

/// The benchmark datasets this toolkit knows out of the box.
inline const std::vector<DatasetSpec>& builtin_registry() {
    static const std::vector<DatasetSpec> registry = {
        {"ETTh1", 7, "1 hour", {SplitRule::Kind::months, 12, 4, 4}, 17420},
        {"ETTh2", 7, "1 hour", {SplitRule::Kind::months, 12, 4, 4}, 17420},
        {"ETTm1", 7, "15 min", {SplitRule::Kind::months, 12, 4, 4}, 699680},
        {"ETTm2", 7, "15 min", {SplitRule::Kind::months, 12, 4, 4}, 699680},
        {"NN5_daily", 111, "1 day", {SplitRule::Kind::rows, 672, 59, 59}, 791},
        {"NN5_weekly", 111, "1 month", {SplitRule::Kind::rows, 96, 8, 8}, 113},
        {"CIF_2016", 48, "1 month", {SplitRule::Kind::rows, 96, 12, 12}, 120},
        {"Hospital", 767, "1 month", {SplitRule::Kind::rows, 58, 12, 12}, 84},
        {"Exchange", 8, "1 day", {SplitRule::Kind::rows, 6829, 379, 379}, 7588},
        {"FRED_MD", 107, "1 month", {SplitRule::Kind::rows, 698, 14, 14}, 728},
    };
    return registry;
}

inline const DatasetSpec* find_dataset(const std::vector<DatasetSpec>& registry,
                                       const std::string& name) {
    for (const auto& spec : registry)
        if (spec.name == name) return &spec;
    return nullptr;
}

// ---------------------------------------------------------------------------
// CSV ingestion.
// ---------------------------------------------------------------------------

struct RawSeries {
    std::vector<std::string> timestamps; // empty when the file has none
    Tensor values;                       // [T, C]
    std::vector<std::string> feature_names;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline bool parses_as_number(const std::string& s) {
    if (s.empty()) return false;
    try {
        parse_double(s);
        return true;
    } catch (const io_error&) {
        return false;
    }
}
} // namespace detail

/// Parses a comma-separated file of 64-bit values, row order preserved.
/// A header row and a leading timestamp column are both optional and
/// auto-detected. Every cell must be present and numeric.
inline RawSeries load_csv(const std::string& path, const DatasetSpec& spec) {
    std::ifstream in(path);
    if (!in) throw io_error("load_csv: cannot open '" + path + "'");

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        lines.push_back(line);
    }
    if (lines.empty()) throw io_error("load_csv: '" + path + "' has no data rows");

    auto first_fields = detail::split_csv_line(lines[0]);
    bool has_header = false;
    for (const auto& f : first_fields)
        if (!detail::parses_as_number(f)) has_header = true;
    const std::size_t first_data_line = has_header ? 1 : 0;
    if (first_data_line >= lines.size())
        throw io_error("load_csv: '" + path + "' has a header but no data rows");

    auto probe = detail::split_csv_line(lines[first_data_line]);
    const bool has_timestamp = !probe.empty() && !detail::parses_as_number(probe[0]);
    const std::size_t columns = probe.size();
    const std::size_t features = columns - (has_timestamp ? 1 : 0);
    if (features != spec.feature_count)
        throw io_error("load_csv: '" + path + "' has " + std::to_string(features) +
                       " feature columns, dataset '" + spec.name + "' expects " +
                       std::to_string(spec.feature_count));

    RawSeries out;
    if (has_header) {
        for (std::size_t i = has_timestamp ? 1 : 0; i < first_fields.size(); ++i)
            out.feature_names.push_back(first_fields[i]);
    } else {
        for (std::size_t i = 0; i < features; ++i)
            out.feature_names.push_back("f" + std::to_string(i));
    }

    const std::size_t rows = lines.size() - first_data_line;
    out.values = Tensor({rows, features});
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t line_no = first_data_line + r + 1; // 1-based in the file
        auto fields = detail::split_csv_line(lines[first_data_line + r]);
        if (fields.size() != columns)
            throw io_error("load_csv: '" + path + "' line " + std::to_string(line_no) + " has " +
                           std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(columns));
        if (has_timestamp) out.timestamps.push_back(fields[0]);
        for (std::size_t c = 0; c < features; ++c) {
            const std::string& cell = fields[c + (has_timestamp ? 1 : 0)];
            if (cell.empty())
                throw io_error("load_csv: missing value at row " + std::to_string(r) +
                               ", column " + std::to_string(c) + " of '" + path + "'");
            try {
                out.values.at(r, c) = parse_double(cell);
            } catch (const io_error&) {
                throw io_error("load_csv: non-numeric value '" + cell + "' at row " +
                               std::to_string(r) + ", column " + std::to_string(c) + " of '" +
                               path + "'");
            }
        }
    }
    out.values.require_finite("load_csv");

    if (spec.expected_time_steps != 0 && rows != spec.expected_time_steps)
        std::cerr << "warning: '" << path << "' has " << rows << " rows; registry lists "
                  << spec.expected_time_steps << " for dataset '" << spec.name << "'\n";
    return out;
}

/// Writes values (and timestamps when present) so that load_csv reads back
/// the exact same doubles.
inline void write_csv(const std::string& path, const RawSeries& series) {
    std::ofstream out(path);
    if (!out) throw io_error("write_csv: cannot open '" + path + "' for writing");
    const bool ts = !series.timestamps.empty();
    if (ts) out << "timestamp";
    for (std::size_t c = 0; c < series.feature_names.size(); ++c) {
        if (ts || c > 0) out << ',';
        out << series.feature_names[c];
    }
    out << '\n';
    const std::size_t rows = series.values.dim(0), cols = series.values.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        if (ts) out << series.timestamps[r];
        for (std::size_t c = 0; c < cols; ++c) {
            if (ts || c > 0) out << ',';
            out << format_double(series.values.at(r, c));
        }
        out << '\n';
    }
    if (!out) throw io_error("write_csv: write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Split resolution.
// ---------------------------------------------------------------------------

/// Contiguous train/valid/test row ranges from the dataset's split rule. Month
/// rules resolve through the granularity (30-day months); row rules are
/// literal. Rows beyond the split total stay unused; an overshoot is an error.
inline std::array<SplitRange, 3> apply_split(const RawSeries& series, const DatasetSpec& spec) {
    std::size_t n_train = spec.split.train, n_valid = spec.split.valid, n_test = spec.split.test;
    if (spec.split.kind == SplitRule::Kind::months) {
        const std::size_t rpm = rows_per_month(spec.granularity);
        n_train *= rpm;
        n_valid *= rpm;
        n_test *= rpm;
    }
    if (n_train == 0 || n_valid == 0 || n_test == 0)
        throw config_error("apply_split: dataset '" + spec.name +
                           "' has a zero-length split portion");
    const std::size_t total = n_train + n_valid + n_test;
    const std::size_t T = series.values.dim(0);
    if (total > T)
        throw config_error("apply_split: dataset '" + spec.name + "' split needs " +
                           std::to_string(total) + " rows but the series has " +
                           std::to_string(T));
    return {SplitRange{0, n_train}, SplitRange{n_train, n_train + n_valid},
            SplitRange{n_train + n_valid, total}};
}

// ---------------------------------------------------------------------------
// Run configuration (JSON).
// ---------------------------------------------------------------------------

struct RunSpec {
    ModelConfig model; // C filled in when the dataset (or a features key) is known
    TrainConfig train;
    std::string dataset; // registry name; empty when `features` was given directly
};

namespace detail {
inline std::size_t get_size(const nlohmann::json& j, const std::string& key) {
    if (!j.at(key).is_number_integer() || j.at(key).get<long long>() < 0)
        throw config_error("config key '" + key + "' must be a non-negative integer");
    return j.at(key).get<std::size_t>();
}

inline double get_real(const nlohmann::json& j, const std::string& key) {
    if (!j.at(key).is_number())
        throw config_error("config key '" + key + "' must be a number");
    return j.at(key).get<double>();
}
} // namespace detail

/// Parses a run configuration. Exactly the hyperparameter-table columns plus
/// variant/loss/seed/patience/max_epochs and a dataset reference; unknown
/// keys are rejected. KAN keys are required for the KAN variants and
/// rejected for tsmixer.
inline RunSpec parse_run_config(const nlohmann::json& j,
                                const std::vector<DatasetSpec>& registry) {
    static const std::vector<std::string> known = {
        "variant", "dataset", "features", "L", "H", "batch", "blocks", "dropout",
        "hidden_size", "learning_rate", "kan_dim", "kan_grid", "kan_k", "loss",
        "seed", "patience", "max_epochs"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw config_error("unknown config key '" + it.key() + "'");
    }
    auto require = [&](const char* key) {
        if (!j.contains(key)) throw config_error(std::string("missing config key '") + key + "'");
    };
    for (const char* key : {"variant", "L", "H", "batch", "blocks", "dropout", "hidden_size",
                            "learning_rate"})
        require(key);

    RunSpec spec;
    spec.model.variant = variant_from_string(j.at("variant").get<std::string>());
    spec.model.L = detail::get_size(j, "L");
    spec.model.H = detail::get_size(j, "H");
    spec.model.batch = detail::get_size(j, "batch");
    spec.model.blocks = detail::get_size(j, "blocks");
    spec.model.dropout = detail::get_real(j, "dropout");
    spec.model.hidden_size = detail::get_size(j, "hidden_size");
    spec.model.learning_rate = detail::get_real(j, "learning_rate");

    if (spec.model.uses_kan()) {
        for (const char* key : {"kan_dim", "kan_grid", "kan_k"}) require(key);
        spec.model.kan_dim = detail::get_size(j, "kan_dim");
        spec.model.kan_grid = static_cast<int>(detail::get_size(j, "kan_grid"));
        spec.model.kan_k = static_cast<int>(detail::get_size(j, "kan_k"));
    } else {
        for (const char* key : {"kan_dim", "kan_grid", "kan_k"})
            if (j.contains(key))
                throw config_error(std::string("config key '") + key +
                                   "' does not apply to variant tsmixer");
    }

    if (j.contains("loss")) spec.model.loss = loss_from_string(j.at("loss").get<std::string>());
    if (j.contains("seed")) spec.model.seed = detail::get_size(j, "seed");

    spec.train.loss = spec.model.loss;
    spec.train.learning_rate = spec.model.learning_rate;
    spec.train.batch_size = spec.model.batch;
    spec.train.seed = spec.model.seed;
    spec.train.max_epochs = j.contains("max_epochs") ? detail::get_size(j, "max_epochs") : 200;
    // "proper" early stopping for the long regime, "strict" for the short one.
    spec.train.patience = j.contains("patience") ? detail::get_size(j, "patience")
                                                 : (spec.train.max_epochs >= 1000 ? 10 : 5);

    if (j.contains("dataset")) {
        spec.dataset = j.at("dataset").get<std::string>();
        const DatasetSpec* ds = find_dataset(registry, spec.dataset);
        if (ds == nullptr)
            throw config_error("config references unknown dataset '" + spec.dataset + "'");
        if (j.contains("features") && detail::get_size(j, "features") != ds->feature_count)
            throw config_error("config key 'features' contradicts dataset '" + spec.dataset + "'");
        spec.model.C = ds->feature_count;
    } else if (j.contains("features")) {
        spec.model.C = detail::get_size(j, "features");
    } else {
        throw config_error("missing config key 'dataset' (or 'features')");
    }

    spec.model.validate();
    spec.train.validate();
    return spec;
}

inline RunSpec load_run_config(const std::string& path, const std::vector<DatasetSpec>& registry) {
    std::ifstream in(path);
    if (!in) throw io_error("load_run_config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("load_run_config: '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw config_error("load_run_config: expected a JSON object");
    return parse_run_config(j, registry);
}

/// User-supplied registry file: a JSON list of dataset specs.
inline std::vector<DatasetSpec> load_registry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_registry: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("load_registry: '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_array()) throw config_error("load_registry: expected a JSON array");
    std::vector<DatasetSpec> out;
    for (const auto& entry : j) {
        DatasetSpec spec;
        spec.name = entry.at("name").get<std::string>();
        spec.feature_count = detail::get_size(entry, "features");
        spec.granularity = entry.value("granularity", std::string("1 hour"));
        const auto& split = entry.at("split");
        const std::string type = split.at("type").get<std::string>();
        if (type == "months")
            spec.split.kind = SplitRule::Kind::months;
        else if (type == "rows")
            spec.split.kind = SplitRule::Kind::rows;
        else
            throw config_error("load_registry: split type must be 'months' or 'rows', got '" +
                               type + "'");
        spec.split.train = detail::get_size(split, "train");
        spec.split.valid = detail::get_size(split, "valid");
        spec.split.test = detail::get_size(split, "test");
        if (entry.contains("time_steps")) spec.expected_time_steps = detail::get_size(entry, "time_steps");
        out.push_back(std::move(spec));
    }
    return out;
}

/// Extra registry entries shadow the built-ins of the same name.
inline std::vector<DatasetSpec> merge_registries(const std::vector<DatasetSpec>& extra) {
    std::vector<DatasetSpec> merged = extra;
    for (const auto& spec : builtin_registry())
        if (find_dataset(merged, spec.name) == nullptr) merged.push_back(spec);
    return merged;
}

} // namespace kanmix
