#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "psgd/comm.hpp"
#include "psgd/dataset.hpp"
#include "psgd/trainers.hpp"

namespace psgd::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kDataError = 2,
    kTrainingAbort = 3,
    kCommFailure = 4,
};

struct RunManifest {
    std::string data_path;
    std::string dataset_name;  // defaults to the data file stem
    SplitSpec split;
    ParseOptions parse;
    TrainerConfig trainer;
    TrainMode mode = TrainMode::Sequential;
    Backend backend = Backend::InProcess;
    Topology topology = Topology::Star;
    std::string coordinator = "127.0.0.1:29500";
    std::chrono::milliseconds sync_timeout = kDefaultSyncTimeout;
    std::string out_dir = ".";
    std::size_t restarts = 1;
    double sigma = 0.01;
    bool objective_on_train = false;

    // Throws DataError when the data file is missing or the output
    // directory cannot be created.
    void check_paths() const;
    std::string resolved_dataset_name() const;
};

// Train in the manifest's mode; writes model.json plus the metrics CSV and
// its JSON sidecar into out_dir and prints a JSON summary line to `out`.
// Socket-backend distributed runs are not handled here (see cmd_worker).
int cmd_train(const RunManifest& manifest, std::ostream& out, std::ostream& err);

struct EvaluateRequest {
    std::string model_path;
    std::string data_path;
    ParseOptions parse;
    std::optional<SplitSpec> split;  // evaluate one split of the data instead of all of it
    std::string subset = "test";     // train | cv | test
};

// Prints {"accuracy", "objective", "count", "confusion": {...}} to `out`.
int cmd_evaluate(const EvaluateRequest& request, std::ostream& out, std::ostream& err);

// Runs every (K, B) combination serially, skipping B > floor(train / K)
// with a logged reason. Writes one CSV per run plus breakdown.csv.
int cmd_sweep(const RunManifest& manifest, const std::vector<std::size_t>& block_sizes,
              const std::vector<std::size_t>& parallelisms, std::ostream& out, std::ostream& err);

// One member of a socket-backend group: joins, trains, writes
// model.rank{r}.json (rank 0 also writes model.json and the metrics).
int cmd_worker(const RunManifest& manifest, std::size_t rank, std::ostream& out, std::ostream& err);

// Full command line entry point (argv[0] is the program).
int run(int argc, const char* const* argv);

}  // namespace psgd::cli
