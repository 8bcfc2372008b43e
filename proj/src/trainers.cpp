#include "psgd/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "psgd/error.hpp"

namespace psgd {

namespace {

RunEcho make_echo(const char* mode, const char* backend, const TrainerConfig& config, std::size_t shard,
                  const TrainHooks& hooks) {
    RunEcho e;
    e.mode = mode;
    e.backend = backend;
    e.dataset = hooks.dataset_name;
    e.c = config.hyper.c;
    e.epochs = config.hyper.t_max;
    e.block_size = config.block_size;
    e.parallelism = config.parallelism;
    e.shard_size = shard;
    e.seed = config.seed;
    return e;
}

void check_init(const Dataset& train, const ModelState& init) {
    if (init.weights.size() != train.dimension()) {
        throw InvalidArgument("trainers", "initial weights have length " + std::to_string(init.weights.size()) +
                                              ", dataset dimension is " + std::to_string(train.dimension()));
    }
    if (!init.finite()) throw InvalidArgument("trainers", "initial weights are not finite");
}

// Only the components touched by a sample's features can become non-finite
// in one step when the weights were finite before it.
bool step_finite(std::span<const double> w, const Sample& s) {
    for (const Feature& f : s.features) {
        if (!std::isfinite(w[f.index - 1])) return false;
    }
    return true;
}

[[noreturn]] void diverged(std::size_t epoch, std::size_t sample_index, const char* who) {
    throw TrainingAbort("trainers", std::string("non-finite weights in ") + who + " at epoch " +
                                        std::to_string(epoch) + ", sample index " + std::to_string(sample_index));
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& shard, const TrainerConfig& config,
                                     std::size_t epoch, std::size_t rank) {
    std::vector<std::size_t> order = shard;
    if (config.reshuffle_each_epoch) shuffle_in_place(order, epoch_seed(config.seed, epoch * config.parallelism + rank));
    return order;
}

void maybe_evaluate(SyncRecord& rec, std::span<const double> w, const TrainHooks& hooks, double c) {
    if (hooks.cv == nullptr) return;
    Stopwatch sw;
    rec.cv_accuracy = accuracy(w, *hooks.cv);
    rec.objective = objective(w, hooks.objective_data ? *hooks.objective_data : *hooks.cv, c);
    rec.eval_ns = sw.elapsed_ns();
}

}  // namespace

EvalCadence EvalCadence::parse(const std::string& text) {
    if (text == "every-sync") return every_sync();
    if (text == "per-epoch") return per_epoch();
    if (text.rfind("every:", 0) == 0) {
        try {
            std::size_t used = 0;
            const auto n = std::stoul(text.substr(6), &used);
            if (used == text.size() - 6 && n >= 1) return every_n(n);
        } catch (const std::exception&) {
        }
    }
    throw InvalidArgument("trainers", "bad eval cadence '" + text + "' (every-sync | every:N | per-epoch)");
}

std::string EvalCadence::str() const {
    switch (kind) {
        case Kind::EverySync: return "every-sync";
        case Kind::EveryNSyncs: return "every:" + std::to_string(every);
        case Kind::PerEpoch: return "per-epoch";
    }
    return "?";
}

bool EvalCadence::due(std::size_t sync_count, bool last_in_epoch) const noexcept {
    switch (kind) {
        case Kind::EverySync: return true;
        case Kind::EveryNSyncs: return every != 0 && sync_count % every == 0;
        case Kind::PerEpoch: return last_in_epoch;
    }
    return false;
}

void TrainerConfig::validate(std::size_t train_count) const {
    hyper.validate();
    if (parallelism < 1) throw InvalidArgument("trainers", "parallelism must be >= 1");
    if (block_size < 1) throw InvalidArgument("trainers", "block size must be >= 1");
    if (parallelism > train_count) {
        throw InvalidArgument("trainers", "parallelism " + std::to_string(parallelism) + " exceeds " +
                                              std::to_string(train_count) + " training samples");
    }
    if (block_size > shard_size(train_count)) {
        throw InvalidArgument("trainers", "block size " + std::to_string(block_size) + " exceeds shard size " +
                                              std::to_string(shard_size(train_count)));
    }
}

std::size_t TrainerConfig::syncs_per_epoch(std::size_t train_count) const {
    const std::size_t shard = shard_size(train_count);
    return (shard + block_size - 1) / block_size;
}

TrainingResult train_sequential(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                const TrainHooks& hooks) {
    config.hyper.validate();
    if (train.empty()) throw InvalidArgument("trainers", "training set is empty");
    check_init(train, init);

    const auto shard = partition_indices(train.size(), 1, config.seed).front();
    TrainerConfig echo_config = config;
    echo_config.parallelism = 1;
    echo_config.block_size = 1;
    TrainingResult result{ModelState{init.weights, 0}, MetricsLog(make_echo("seq", "none", echo_config, shard.size(), hooks)), 1, {}};
    std::vector<double>& w = result.final_model.weights;
    const double c = config.hyper.c;
    std::size_t step = 0;

    for (std::size_t t = 0; t < config.hyper.t_max; ++t) {
        const double alpha = learning_rate(t);
        const auto order = epoch_order(shard, config, t, 0);
        SyncRecord rec;
        rec.epoch = t;
        rec.sync_index = t;
        Stopwatch sw;
        for (std::size_t i : order) {
            sgd_step_inplace(w, train[i], c, alpha);
            if (!step_finite(w, train[i])) diverged(t, i, "sequential training");
            if (hooks.on_sync) hooks.on_sync(t, ++step, w);
        }
        rec.compute_ns = sw.elapsed_ns();
        maybe_evaluate(rec, w, hooks, c);
        result.log.record_sync(rec);
    }
    result.final_model.epoch = config.hyper.t_max;
    return result;
}

TrainingResult train_replica(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                             const TrainHooks& hooks) {
    config.validate(train.size());
    check_init(train, init);

    const std::size_t k = config.parallelism;
    const auto shards = partition_indices(train.size(), k, config.seed);
    const std::size_t shard = shards.front().size();
    const std::size_t rounds = config.syncs_per_epoch(train.size());
    const double c = config.hyper.c;

    TrainingResult result{ModelState{init.weights, 0}, MetricsLog(make_echo("replica", "none", config, shard, hooks)), 1, {}};
    std::vector<double>& w = result.final_model.weights;
    std::vector<Weights> candidates(k);
    std::size_t sync_count = 0;

    for (std::size_t t = 0; t < config.hyper.t_max; ++t) {
        const double alpha = learning_rate(t);
        std::vector<std::vector<std::size_t>> orders(k);
        for (std::size_t r = 0; r < k; ++r) orders[r] = epoch_order(shards[r], config, t, r);

        for (std::size_t round = 0; round < rounds; ++round) {
            const std::size_t lo = round * config.block_size;
            const std::size_t hi = std::min(shard, lo + config.block_size);
            SyncRecord rec;
            rec.epoch = t;
            rec.sync_index = sync_count++;

            Stopwatch compute;
            for (std::size_t r = 0; r < k; ++r) {
                candidates[r] = w;
                for (std::size_t i = lo; i < hi; ++i) {
                    const Sample& s = train[orders[r][i]];
                    sgd_step_inplace(candidates[r], s, c, alpha);
                    if (!step_finite(candidates[r], s)) diverged(t, orders[r][i], "replica training");
                }
            }
            rec.compute_ns = compute.elapsed_ns();

            // Averaging stands in for the collective; no bytes move.
            Stopwatch sync;
            w = average_models(candidates);
            rec.comm_ns = sync.elapsed_ns();

            if (hooks.on_sync) hooks.on_sync(t, sync_count, w);
            if (config.cadence.due(sync_count, round + 1 == rounds)) maybe_evaluate(rec, w, hooks, c);
            result.log.record_sync(rec);
        }
    }
    result.final_model.epoch = config.hyper.t_max;
    return result;
}

TrainingResult run_worker(SyncHandle& handle, const Dataset& train, const TrainerConfig& config,
                          const ModelState& init, const TrainHooks& hooks) {
    config.validate(train.size());
    check_init(train, init);
    if (handle.size() != config.parallelism) {
        throw InvalidArgument("trainers", "group has " + std::to_string(handle.size()) + " members, parallelism is " +
                                              std::to_string(config.parallelism));
    }

    const std::size_t rank = handle.rank();
    const bool leader = rank == 0;
    const auto k = static_cast<double>(config.parallelism);
    const auto shard_indices = partition_indices(train.size(), config.parallelism, config.seed)[rank];
    const std::size_t shard = shard_indices.size();
    const std::size_t rounds = config.syncs_per_epoch(train.size());
    const double c = config.hyper.c;

    TrainingResult result{ModelState{{}, 0}, MetricsLog(make_echo("dist", "", config, shard, hooks)), 1, {}};
    std::vector<double>& w = result.final_model.weights;
    w = handle.broadcast(init.weights, 0);
    std::vector<double> local(w.size());
    std::size_t sync_count = 0;

    for (std::size_t t = 0; t < config.hyper.t_max; ++t) {
        const double alpha = learning_rate(t);
        const auto order = epoch_order(shard_indices, config, t, rank);

        for (std::size_t round = 0; round < rounds; ++round) {
            const std::size_t lo = round * config.block_size;
            const std::size_t hi = std::min(shard, lo + config.block_size);
            SyncRecord rec;
            rec.epoch = t;
            rec.sync_index = sync_count++;

            Stopwatch compute;
            local = w;
            std::optional<std::size_t> bad_sample;
            for (std::size_t i = lo; i < hi && !bad_sample; ++i) {
                const Sample& s = train[order[i]];
                sgd_step_inplace(local, s, c, alpha);
                if (!step_finite(local, s)) bad_sample = order[i];
            }
            rec.compute_ns = compute.elapsed_ns();

            // A diverged worker still joins the collective; the non-finite
            // sum then aborts every member at the same sync.
            Stopwatch sync;
            const std::uint64_t bytes_before = handle.bytes_sent();
            const std::vector<double> sum = handle.allreduce_sum(local);
            for (std::size_t j = 0; j < w.size(); ++j) w[j] = sum[j] / k;
            rec.comm_ns = sync.elapsed_ns();
            rec.bytes_sent = handle.bytes_sent() - bytes_before;

            if (bad_sample) diverged(t, *bad_sample, ("distributed worker " + std::to_string(rank)).c_str());
            if (!std::all_of(w.begin(), w.end(), [](double v) { return std::isfinite(v); })) {
                throw TrainingAbort("trainers", "non-finite global weights at epoch " + std::to_string(t) + ", sync " +
                                                    std::to_string(sync_count) + " (diverged on another worker)");
            }

            if (leader) {
                if (hooks.on_sync) hooks.on_sync(t, sync_count, w);
                if (config.cadence.due(sync_count, round + 1 == rounds)) maybe_evaluate(rec, w, hooks, c);
            }
            result.log.record_sync(rec);
        }
    }
    result.final_model.epoch = config.hyper.t_max;
    return result;
}

namespace {

using HandleFactory = std::function<std::unique_ptr<SyncHandle>(std::size_t rank)>;

TrainingResult run_worker_threads(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                  const TrainHooks& hooks, const HandleFactory& make_handle) {
    const std::size_t k = config.parallelism;
    std::vector<std::optional<TrainingResult>> results(k);
    std::vector<std::exception_ptr> errors(k);
    auto body = [&](std::size_t r) {
        std::unique_ptr<SyncHandle> handle;
        try {
            handle = make_handle(r);
            results[r] = run_worker(*handle, train, config, init, hooks);
        } catch (const std::exception& e) {
            errors[r] = std::current_exception();
            if (handle) handle->abort(e.what());
        } catch (...) {
            errors[r] = std::current_exception();
            if (handle) handle->abort("unknown error");
        }
    };

    std::vector<std::thread> workers;
    for (std::size_t r = 1; r < k; ++r) workers.emplace_back(body, r);
    body(0);
    for (auto& th : workers) th.join();

    // Report the root cause rather than the CommErrors it triggered on peers.
    std::exception_ptr first;
    for (const auto& e : errors) {
        if (!e) continue;
        try {
            std::rethrow_exception(e);
        } catch (const CommError&) {
            if (!first) first = e;
        } catch (...) {
            std::rethrow_exception(e);
        }
    }
    if (first) std::rethrow_exception(first);
    return std::move(*results[0]);
}

}  // namespace

TrainingResult train_distributed(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                 InProcessGroup& group, const TrainHooks& hooks) {
    config.validate(train.size());
    check_init(train, init);
    if (group.size() != config.parallelism) {
        throw InvalidArgument("trainers", "group size " + std::to_string(group.size()) +
                                              " does not match parallelism " + std::to_string(config.parallelism));
    }
    std::vector<std::unique_ptr<SyncHandle>> handles;
    for (std::size_t r = 0; r < config.parallelism; ++r) handles.push_back(group.handle(r));
    TrainingResult out = run_worker_threads(train, config, init, hooks,
                                            [&](std::size_t r) { return std::move(handles[r]); });
    out.log.echo().backend = "inproc";
    return out;
}

TrainingResult train_distributed_sockets(const Dataset& train, const TrainerConfig& config, const ModelState& init,
                                         const SocketOptions& options, const TrainHooks& hooks) {
    config.validate(train.size());
    check_init(train, init);
    TrainingResult out = run_worker_threads(train, config, init, hooks, [&](std::size_t r) {
        return connect_socket_group(r, config.parallelism, options);
    });
    out.log.echo().backend = "socket";
    return out;
}

TrainMode parse_mode(const std::string& text) {
    if (text == "seq") return TrainMode::Sequential;
    if (text == "replica") return TrainMode::Replica;
    if (text == "dist") return TrainMode::Distributed;
    throw InvalidArgument("trainers", "unknown mode '" + text + "' (expected seq|replica|dist)");
}

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Sequential: return "seq";
        case TrainMode::Replica: return "replica";
        case TrainMode::Distributed: return "dist";
    }
    return "?";
}

TrainingResult restart_harness(const Dataset& cv, const TrainerConfig& config, std::size_t restarts,
                               std::size_t dimension, double sigma, const TrainerFn& run) {
    if (restarts < 1) throw InvalidArgument("trainers", "restart count must be >= 1");
    if (cv.empty()) throw InvalidArgument("trainers", "restart selection needs a nonempty cv set");

    std::optional<TrainingResult> best;
    double best_accuracy = -1.0;
    std::vector<double> curve_sum;
    for (std::size_t r = 0; r < restarts; ++r) {
        TrainerConfig cfg = config;
        cfg.seed = config.seed + r;
        TrainingResult res = run(cfg, gaussian_init(dimension, sigma, cfg.seed));
        const double acc = accuracy(res.final_model.weights, cv);
        res.log.final_cv_accuracy = acc;

        std::vector<double> curve;
        for (const SyncRecord& rec : res.log.records()) {
            if (rec.cv_accuracy) curve.push_back(*rec.cv_accuracy);
        }
        if (r == 0) {
            curve_sum = curve;
        } else {
            if (curve.size() != curve_sum.size()) throw InvalidArgument("trainers", "restarts produced curves of different length");
            for (std::size_t i = 0; i < curve.size(); ++i) curve_sum[i] += curve[i];
        }
        if (acc > best_accuracy) {
            best_accuracy = acc;
            best = std::move(res);
        }
    }
    for (double& v : curve_sum) v /= static_cast<double>(restarts);
    best->restarts_used = restarts;
    best->mean_cv_curve = std::move(curve_sum);
    return std::move(*best);
}

TrainingResult restart_harness(const Dataset& train, const Dataset& cv, const TrainerConfig& config,
                               std::size_t restarts, TrainMode mode, double sigma, const TrainHooks& hooks) {
    TrainHooks h = hooks;
    if (h.cv == nullptr) h.cv = &cv;
    auto run = [&](const TrainerConfig& cfg, const ModelState& init) {
        switch (mode) {
            case TrainMode::Sequential: return train_sequential(train, cfg, init, h);
            case TrainMode::Replica: return train_replica(train, cfg, init, h);
            case TrainMode::Distributed: {
                InProcessGroup group(cfg.parallelism);
                return train_distributed(train, cfg, init, group, h);
            }
        }
        throw InvalidArgument("trainers", "unknown mode");
    };
    return restart_harness(cv, config, restarts, train.dimension(), sigma, run);
}

}  // namespace psgd
