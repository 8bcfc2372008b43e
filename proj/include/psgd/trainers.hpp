#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psgd/comm.hpp"
#include "psgd/dataset.hpp"
#include "psgd/metrics.hpp"
#include "psgd/sgd_core.hpp"

namespace psgd {

struct EvalCadence {
    enum class Kind { EverySync, EveryNSyncs, PerEpoch };

    Kind kind = Kind::EverySync;
    std::size_t every = 1;

    static EvalCadence every_sync() { return {}; }
    static EvalCadence every_n(std::size_t n) { return {Kind::EveryNSyncs, n}; }
    static EvalCadence per_epoch() { return {Kind::PerEpoch, 1}; }

    // "every-sync", "every:N", "per-epoch"
    static EvalCadence parse(const std::string& text);
    std::string str() const;

    // sync_count is 1-based over the whole run.
    bool due(std::size_t sync_count, bool last_in_epoch) const noexcept;
};

struct TrainerConfig {
    HyperParams hyper;
    std::size_t block_size = 1;   // samples per worker between syncs
    std::size_t parallelism = 1;  // K
    std::uint64_t seed = 0;
    EvalCadence cadence;
    bool reshuffle_each_epoch = false;

    // Throws InvalidArgument unless K <= n and 1 <= B <= floor(n / K).
    void validate(std::size_t train_count) const;

    std::size_t shard_size(std::size_t train_count) const { return train_count / parallelism; }

    // ceil(shard / B)
    std::size_t syncs_per_epoch(std::size_t train_count) const;
};

// Called after every global model update: each sample step for the
// sequential trainer, each averaging round otherwise. sync_count is 1-based.
using SyncObserver = std::function<void(std::size_t epoch, std::size_t sync_count, std::span<const double> weights)>;

struct TrainHooks {
    const Dataset* cv = nullptr;              // evaluation set; no evaluation when null
    const Dataset* objective_data = nullptr;  // objective over this set instead of cv
    SyncObserver on_sync;
    std::string dataset_name;
};

struct TrainingResult {
    ModelState final_model;
    MetricsLog log;
    std::size_t restarts_used = 1;
    std::vector<double> mean_cv_curve;  // filled by restart_harness
};

// One pass over the (seeded-shuffle) training order per epoch, one
// sgd_step per sample, alpha fixed within an epoch. Logs one record per epoch.
TrainingResult train_sequential(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                 const TrainHooks& hooks = {});

// Single-threaded emulation of train_distributed: K shards, K independent
// B-step chains from the shared model each round, then averaging.
TrainingResult train_replica(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                             const TrainHooks& hooks = {});

// One worker's side of the distributed algorithm over `handle`. Every rank
// must call this with the same data, config and init. Only rank 0 evaluates.
TrainingResult run_worker(SyncHandle& handle, const Dataset& train, const TrainerConfig& config,
                          const ModelState& init, const TrainHooks& hooks = {});

// Runs config.parallelism worker threads over `group` and returns rank 0's
// result. The group size must equal config.parallelism.
TrainingResult train_distributed(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                 InProcessGroup& group, const TrainHooks& hooks = {});

// Same, but each worker thread joins a TCP group described by `options`
// (loopback in practice), exercising the socket backend inside one process.
TrainingResult train_distributed_sockets(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                         const SocketOptions& options, const TrainHooks& hooks = {});

enum class TrainMode { Sequential, Replica, Distributed };

TrainMode parse_mode(const std::string& text);
std::string to_string(TrainMode mode);

using TrainerFn = std::function<TrainingResult(const TrainerConfig&, const ModelState&)>;

// Runs `run` with seeds seed+0 .. seed+restarts-1, each from its own
// Gaussian initialization, and returns the run with the best final cv
// accuracy (first wins ties). mean_cv_curve averages the per-sync cv
// accuracy over all restarts.
TrainingResult restart_harness(const Dataset& cv, const TrainerConfig& config, std::size_t restarts,
                               std::size_t dimension, double sigma, const TrainerFn& run);

// Convenience form: the selected trainer, in-process backend for Distributed.
TrainingResult restart_harness(const Dataset& train, const Dataset& cv, const TrainerConfig& config,
                               std::size_t restarts, TrainMode mode, double sigma = 0.01,
                               const TrainHooks& hooks = {});

}  // namespace psgd
