#pragma once

#include <algorithm>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kanmix/errors.hpp"
#include "kanmix/util.hpp"

namespace kanmix {

/// Improvement of `candidate` over `baseline` in percent; positive means the
/// candidate's error is lower.
inline double compute_delta_pct(double baseline, double candidate) {
    if (baseline == 0.0) throw numeric_error("compute_delta_pct: zero baseline");
    return 100.0 * (baseline - candidate) / baseline;
}

/// One benchmark run, as recorded from its summary artifact.
struct RunRecord {
    std::string dataset;
    std::string variant;
    std::string status = "ok"; // "ok" or an error description
    double mse = 0.0;
    double mae = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    double time_per_epoch_seconds = 0.0;
    double wall_seconds = 0.0;

    bool ok() const { return status == "ok"; }
};

struct ReportRow {
    RunRecord run;
    std::optional<double> delta_mse_pct; // vs the tsmixer run on the same dataset
    std::optional<double> delta_mae_pct;
    bool top3_mse = false;
    bool top3_mae = false;
};

struct BenchmarkReport {
    std::vector<ReportRow> rows;
};

/// Deltas are computed against the tsmixer row of the same dataset; top-3
/// markers rank the successful runs per dataset by each metric.
inline BenchmarkReport make_report(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw config_error("make_report: no runs to report");
    BenchmarkReport report;
    for (const auto& run : runs) report.rows.push_back(ReportRow{run, {}, {}, false, false});

    for (auto& row : report.rows) {
        if (!row.run.ok() || row.run.variant == "tsmixer") continue;
        for (const auto& other : report.rows) {
            if (other.run.dataset == row.run.dataset && other.run.variant == "tsmixer" &&
                other.run.ok()) {
                row.delta_mse_pct = compute_delta_pct(other.run.mse, row.run.mse);
                row.delta_mae_pct = compute_delta_pct(other.run.mae, row.run.mae);
                break;
            }
        }
    }

    std::vector<std::string> datasets;
    for (const auto& row : report.rows)
        if (std::find(datasets.begin(), datasets.end(), row.run.dataset) == datasets.end())
            datasets.push_back(row.run.dataset);
    for (const auto& ds : datasets) {
        std::vector<ReportRow*> ok_rows;
        for (auto& row : report.rows)
            if (row.run.dataset == ds && row.run.ok()) ok_rows.push_back(&row);
        auto mark = [&](auto metric, bool ReportRow::* flag) {
            std::vector<ReportRow*> sorted = ok_rows;
            std::stable_sort(sorted.begin(), sorted.end(),
                             [&](ReportRow* a, ReportRow* b) { return metric(a) < metric(b); });
            for (std::size_t i = 0; i < sorted.size() && i < 3; ++i) (*sorted[i]).*flag = true;
        };
        mark([](ReportRow* r) { return r->run.mse; }, &ReportRow::top3_mse);
        mark([](ReportRow* r) { return r->run.mae; }, &ReportRow::top3_mae);
    }
    return report;
}

inline std::string report_to_csv(const BenchmarkReport& report) {
    std::string out = "dataset,variant,status,mse,mae,delta_mse_pct,delta_mae_pct,best_epoch,"
                      "epochs_run,time_per_epoch_seconds,wall_seconds\n";
    for (const auto& row : report.rows) {
        const auto& r = row.run;
        out += r.dataset + ',' + r.variant + ',' + r.status + ',';
        out += r.ok() ? format_double(r.mse) : std::string();
        out += ',';
        out += r.ok() ? format_double(r.mae) : std::string();
        out += ',';
        out += row.delta_mse_pct ? format_double(*row.delta_mse_pct) : std::string();
        out += ',';
        out += row.delta_mae_pct ? format_double(*row.delta_mae_pct) : std::string();
        out += ',';
        out += r.ok() ? std::to_string(r.best_epoch) : std::string();
        out += ',';
        out += r.ok() ? std::to_string(r.epochs_run) : std::string();
        out += ',';
        out += r.ok() ? format_double(r.time_per_epoch_seconds) : std::string();
        out += ',';
        out += r.ok() ? format_double(r.wall_seconds) : std::string();
        out += '\n';
    }
    return out;
}

namespace detail {
inline std::string fixed3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

inline std::string fixed2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}
} // namespace detail

/// Aligned text table; '*' marks a top-3 result for that dataset.
inline std::string report_to_text(const BenchmarkReport& report) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"dataset", "variant", "mse (d%)", "mae (d%)", "best", "epochs",
                     "s/epoch", "wall s", "status"});
    for (const auto& row : report.rows) {
        const auto& r = row.run;
        std::vector<std::string> line(9);
        line[0] = r.dataset;
        line[1] = r.variant;
        if (r.ok()) {
            line[2] = (row.top3_mse ? "*" : "") + detail::fixed3(r.mse) +
                      (row.delta_mse_pct ? " (" + detail::fixed2(*row.delta_mse_pct) + "%)" : "");
            line[3] = (row.top3_mae ? "*" : "") + detail::fixed3(r.mae) +
                      (row.delta_mae_pct ? " (" + detail::fixed2(*row.delta_mae_pct) + "%)" : "");
            line[4] = std::to_string(r.best_epoch);
            line[5] = std::to_string(r.epochs_run);
            line[6] = detail::fixed2(r.time_per_epoch_seconds);
            line[7] = detail::fixed2(r.wall_seconds);
        }
        line[8] = r.status;
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::string out;
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            out += line[c];
            if (c + 1 < line.size()) out += std::string(width[c] - line[c].size() + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

} // namespace kanmix
