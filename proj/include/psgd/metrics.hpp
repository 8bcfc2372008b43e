#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psgd/dataset.hpp"

namespace psgd {

// One model synchronization. objective/cv_accuracy are empty on syncs the
// evaluation cadence skips.
struct SyncRecord {
    std::size_t epoch = 0;
    std::size_t sync_index = 0;  // run-wide, strictly increasing
    std::optional<double> objective;
    std::optional<double> cv_accuracy;
    std::uint64_t compute_ns = 0;
    std::uint64_t comm_ns = 0;  // includes time blocked waiting for stragglers
    std::uint64_t eval_ns = 0;
    std::uint64_t bytes_sent = 0;
};

struct PhaseTotals {
    std::uint64_t compute_ns = 0;
    std::uint64_t comm_ns = 0;
    std::uint64_t eval_ns = 0;
    std::uint64_t bytes_sent = 0;
    std::size_t syncs = 0;
    std::size_t evaluations = 0;

    bool operator==(const PhaseTotals&) const = default;
};

// Echo of the run configuration carried alongside the records.
struct RunEcho {
    std::string mode;       // seq | replica | dist
    std::string backend;    // none | inproc | socket
    std::string dataset;
    double c = 1.0;
    std::size_t epochs = 1;
    std::size_t block_size = 1;
    std::size_t parallelism = 1;
    std::size_t shard_size = 0;
    std::uint64_t seed = 0;
};

class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(RunEcho echo) : echo_(std::move(echo)) {}

    // Throws InvalidArgument on a non-finite objective/accuracy, an epoch
    // that goes backwards or a sync_index that does not increase.
    void record_sync(const SyncRecord& record);

    std::span<const SyncRecord> records() const noexcept { return records_; }
    const PhaseTotals& totals() const noexcept { return totals_; }
    const RunEcho& echo() const noexcept { return echo_; }
    RunEcho& echo() noexcept { return echo_; }

    // Accuracy of the final model, filled in by whoever ran the evaluation.
    std::optional<double> final_cv_accuracy;
    std::optional<double> test_accuracy;

private:
    RunEcho echo_;
    std::vector<SyncRecord> records_;
    PhaseTotals totals_;
};

struct Evaluation {
    double objective = 0.0;
    double cv_accuracy = 0.0;
};

// Objective and accuracy of `weights` over the held-out set.
Evaluation evaluate_at_sync(std::span<const double> weights, const Dataset& cv, double c);

inline constexpr const char* kCsvHeader = "epoch,sync_index,objective,cv_accuracy,compute_ns,comm_ns,eval_ns,bytes_sent";

// Header plus one row per record; skipped evaluations are empty cells.
std::string to_csv(const MetricsLog& log);

// Summary sidecar: config echo, totals and a wall-clock timestamp.
std::string summary_json(const MetricsLog& log);

// Writes `path` (CSV) and `path` with its extension replaced by .json.
// Throws DataError if either file cannot be written.
void emit_csv(const MetricsLog& log, const std::string& path);

// run_{dataset}_{K}_{B}_{seed}.csv
std::string run_file_name(const RunEcho& echo);

struct BreakdownRow {
    std::size_t parallelism = 0;
    std::size_t block_size = 0;
    std::size_t syncs = 0;
    std::uint64_t compute_ns = 0;
    std::uint64_t comm_ns = 0;
    std::uint64_t eval_ns = 0;
    std::uint64_t bytes_sent = 0;
    std::optional<double> final_cv_accuracy;
    std::optional<double> test_accuracy;
    double comm_compute_ratio = 0.0;  // comm_ns / compute_ns, 0 when compute_ns == 0
};

// One row per log, sorted by (K, B).
std::vector<BreakdownRow> breakdown_report(std::span<const MetricsLog> logs);

std::string breakdown_csv(std::span<const BreakdownRow> rows);
std::string breakdown_table(std::span<const BreakdownRow> rows);

// Monotonic nanosecond stopwatch.
class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    std::uint64_t elapsed_ns() const {
        return static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start_).count());
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace psgd
