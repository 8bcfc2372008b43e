#include "psgd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "psgd/error.hpp"
#include "psgd/sgd_core.hpp"

namespace psgd {

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("metrics", "cannot write '" + path + "'");
    out << content;
    out.flush();
    if (!out) throw DataError("metrics", "write to '" + path + "' failed");
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void MetricsLog::record_sync(const SyncRecord& record) {
    if ((record.objective && !std::isfinite(*record.objective)) ||
        (record.cv_accuracy && !std::isfinite(*record.cv_accuracy))) {
        throw InvalidArgument("metrics", "non-finite value in sync record " + std::to_string(record.sync_index));
    }
    if (!records_.empty()) {
        const SyncRecord& last = records_.back();
        if (record.epoch < last.epoch) throw InvalidArgument("metrics", "sync record epoch went backwards");
        if (record.sync_index <= last.sync_index) {
            throw InvalidArgument("metrics", "sync_index " + std::to_string(record.sync_index) +
                                                 " does not follow " + std::to_string(last.sync_index));
        }
    }
    records_.push_back(record);
    totals_.compute_ns += record.compute_ns;
    totals_.comm_ns += record.comm_ns;
    totals_.eval_ns += record.eval_ns;
    totals_.bytes_sent += record.bytes_sent;
    totals_.syncs += 1;
    totals_.evaluations += record.cv_accuracy.has_value();
}

Evaluation evaluate_at_sync(std::span<const double> weights, const Dataset& cv, double c) {
    if (cv.empty()) throw InvalidArgument("metrics", "evaluation set is empty");
    return {objective(weights, cv, c), accuracy(weights, cv)};
}

std::string to_csv(const MetricsLog& log) {
    std::string out = kCsvHeader;
    out += '\n';
    for (const SyncRecord& r : log.records()) {
        out += std::to_string(r.epoch) + ',' + std::to_string(r.sync_index) + ',' + format_optional(r.objective) + ',' +
               format_optional(r.cv_accuracy) + ',' + std::to_string(r.compute_ns) + ',' + std::to_string(r.comm_ns) +
               ',' + std::to_string(r.eval_ns) + ',' + std::to_string(r.bytes_sent) + '\n';
    }
    return out;
}

std::string summary_json(const MetricsLog& log) {
    const RunEcho& e = log.echo();
    const PhaseTotals& t = log.totals();
    nlohmann::ordered_json j;
    j["config"] = {{"mode", e.mode},           {"backend", e.backend},   {"dataset", e.dataset},
                   {"c", e.c},                 {"epochs", e.epochs},     {"block_size", e.block_size},
                   {"parallelism", e.parallelism}, {"shard_size", e.shard_size}, {"seed", e.seed}};
    j["totals"] = {{"syncs", t.syncs},           {"evaluations", t.evaluations}, {"compute_ns", t.compute_ns},
                   {"comm_ns", t.comm_ns},       {"eval_ns", t.eval_ns},         {"bytes_sent", t.bytes_sent}};
    j["final_cv_accuracy"] = log.final_cv_accuracy ? nlohmann::ordered_json(*log.final_cv_accuracy) : nullptr;
    j["test_accuracy"] = log.test_accuracy ? nlohmann::ordered_json(*log.test_accuracy) : nullptr;
    j["written_at_utc"] = utc_timestamp();
    return j.dump(2) + "\n";
}

void emit_csv(const MetricsLog& log, const std::string& path) {
    write_file(path, to_csv(log));
    write_file(std::filesystem::path(path).replace_extension(".json").string(), summary_json(log));
}

std::string run_file_name(const RunEcho& echo) {
    const std::string name = echo.dataset.empty() ? "data" : echo.dataset;
    return "run_" + name + "_" + std::to_string(echo.parallelism) + "_" + std::to_string(echo.block_size) + "_" +
           std::to_string(echo.seed) + ".csv";
}

std::vector<BreakdownRow> breakdown_report(std::span<const MetricsLog> logs) {
    std::vector<BreakdownRow> rows;
    rows.reserve(logs.size());
    for (const MetricsLog& log : logs) {
        const PhaseTotals& t = log.totals();
        BreakdownRow row;
        row.parallelism = log.echo().parallelism;
        row.block_size = log.echo().block_size;
        row.syncs = t.syncs;
        row.compute_ns = t.compute_ns;
        row.comm_ns = t.comm_ns;
        row.eval_ns = t.eval_ns;
        row.bytes_sent = t.bytes_sent;
        row.final_cv_accuracy = log.final_cv_accuracy;
        row.test_accuracy = log.test_accuracy;
        row.comm_compute_ratio =
            t.compute_ns == 0 ? 0.0 : static_cast<double>(t.comm_ns) / static_cast<double>(t.compute_ns);
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const BreakdownRow& a, const BreakdownRow& b) {
        return std::tie(a.parallelism, a.block_size) < std::tie(b.parallelism, b.block_size);
    });
    return rows;
}

std::string breakdown_csv(std::span<const BreakdownRow> rows) {
    std::string out =
        "parallelism,block_size,syncs,compute_ns,comm_ns,eval_ns,bytes_sent,final_cv_accuracy,test_accuracy,"
        "comm_compute_ratio\n";
    for (const BreakdownRow& r : rows) {
        out += std::to_string(r.parallelism) + ',' + std::to_string(r.block_size) + ',' + std::to_string(r.syncs) +
               ',' + std::to_string(r.compute_ns) + ',' + std::to_string(r.comm_ns) + ',' +
               std::to_string(r.eval_ns) + ',' + std::to_string(r.bytes_sent) + ',' +
               format_optional(r.final_cv_accuracy) + ',' + format_optional(r.test_accuracy) + ',' +
               format_double(r.comm_compute_ratio) + '\n';
    }
    return out;
}

std::string breakdown_table(std::span<const BreakdownRow> rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%4s %6s %8s %12s %12s %12s %8s %8s %9s\n", "K", "B", "syncs", "compute_ms",
                  "comm_ms", "eval_ms", "cv_acc", "test_acc", "comm/comp");
    out << line;
    auto pct = [](const std::optional<double>& v) { return v ? *v * 100.0 : std::nan(""); };
    for (const BreakdownRow& r : rows) {
        std::snprintf(line, sizeof(line), "%4zu %6zu %8zu %12.3f %12.3f %12.3f %8.2f %8.2f %9.3f\n", r.parallelism,
                      r.block_size, r.syncs, static_cast<double>(r.compute_ns) / 1e6,
                      static_cast<double>(r.comm_ns) / 1e6, static_cast<double>(r.eval_ns) / 1e6,
                      pct(r.final_cv_accuracy), pct(r.test_accuracy), r.comm_compute_ratio);
        out << line;
    }
    return out.str();
}

}  // namespace psgd
