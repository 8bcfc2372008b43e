#include "psgd/cli.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "psgd/error.hpp"
#include "psgd/metrics.hpp"
#include "psgd/model_file.hpp"

extern char** environ;

namespace psgd::cli {

namespace fs = std::filesystem;

namespace {

struct Prepared {
    Dataset train;
    Dataset cv;
    Dataset test;
};

Prepared prepare(const RunManifest& m) {
    m.check_paths();
    Dataset all = load_libsvm(m.data_path, m.parse);
    Splits parts = split(all, m.split);
    return {std::move(parts.train), std::move(parts.cv), std::move(parts.test)};
}

TrainHooks make_hooks(const RunManifest& m, const Prepared& data) {
    TrainHooks hooks;
    hooks.cv = &data.cv;
    hooks.objective_data = m.objective_on_train ? &data.train : nullptr;
    hooks.dataset_name = m.resolved_dataset_name();
    return hooks;
}

ModelFile to_model_file(const TrainingResult& result) {
    ModelFile f;
    f.dimension = result.final_model.weights.size();
    f.weights = result.final_model.weights;
    f.config = result.log.echo();
    f.epochs_completed = result.final_model.epoch;
    return f;
}

std::string metrics_path(const RunManifest& m, const MetricsLog& log) {
    RunEcho named = log.echo();
    named.seed = m.trainer.seed;
    return (fs::path(m.out_dir) / run_file_name(named)).string();
}

void write_outputs(const RunManifest& m, TrainingResult& result, const Prepared& data, std::ostream& out) {
    result.log.test_accuracy = accuracy(result.final_model.weights, data.test);
    const std::string model_path = (fs::path(m.out_dir) / "model.json").string();
    to_model_file(result).save(model_path);
    const std::string csv = metrics_path(m, result.log);
    emit_csv(result.log, csv);

    nlohmann::ordered_json summary;
    summary["mode"] = result.log.echo().mode;
    summary["backend"] = result.log.echo().backend;
    summary["seed"] = result.log.echo().seed;
    summary["restarts"] = result.restarts_used;
    summary["syncs"] = result.log.totals().syncs;
    summary["final_cv_accuracy"] = result.log.final_cv_accuracy.value_or(0.0);
    summary["test_accuracy"] = *result.log.test_accuracy;
    summary["model"] = model_path;
    summary["metrics"] = csv;
    out << summary.dump() << '\n';
}

TrainerFn local_runner(const RunManifest& m, const Prepared& data, const TrainHooks& hooks) {
    return [&m, &data, hooks](const TrainerConfig& cfg, const ModelState& init) {
        switch (m.mode) {
            case TrainMode::Sequential: return train_sequential(data.train, cfg, init, hooks);
            case TrainMode::Replica: return train_replica(data.train, cfg, init, hooks);
            case TrainMode::Distributed: break;
        }
        if (m.backend == Backend::Socket) {
            SocketOptions opts{Endpoint::parse(m.coordinator), m.topology, m.sync_timeout};
            return train_distributed_sockets(data.train, cfg, init, opts, hooks);
        }
        InProcessGroup group(cfg.parallelism, m.sync_timeout);
        return train_distributed(data.train, cfg, init, group, hooks);
    };
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const CommError*>(&e)) return kCommFailure;
    if (dynamic_cast<const TrainingAbort*>(&e)) return kTrainingAbort;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const DataError*>(&e)) return kDataError;
    return kUsage;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

}  // namespace

void RunManifest::check_paths() const {
    if (data_path.empty()) throw DataError("cli", "no data file given (--data)");
    if (!fs::is_regular_file(data_path)) throw DataError("cli", "data file '" + data_path + "' does not exist");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("cli", "output directory '" + out_dir + "' is not writable");
}

std::string RunManifest::resolved_dataset_name() const {
    return dataset_name.empty() ? fs::path(data_path).stem().string() : dataset_name;
}

int cmd_train(const RunManifest& m, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Prepared data = prepare(m);
        if (m.mode != TrainMode::Sequential) m.trainer.validate(data.train.size());
        const TrainHooks hooks = make_hooks(m, data);
        TrainingResult result = restart_harness(data.cv, m.trainer, m.restarts, data.train.dimension(), m.sigma,
                                                local_runner(m, data, hooks));
        write_outputs(m, result, data, out);
        return int{kOk};
    });
}

int cmd_worker(const RunManifest& m, std::size_t rank, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Prepared data = prepare(m);
        m.trainer.validate(data.train.size());
        const TrainHooks hooks = make_hooks(m, data);
        SocketOptions opts{Endpoint::parse(m.coordinator), m.topology, m.sync_timeout};
        auto handle = connect_socket_group(rank, m.trainer.parallelism, opts);
        TrainingResult result;
        try {
            result = restart_harness(data.cv, m.trainer, m.restarts, data.train.dimension(), m.sigma,
                                     [&](const TrainerConfig& cfg, const ModelState& init) {
                                         return run_worker(*handle, data.train, cfg, init, hooks);
                                     });
        } catch (const std::exception& e) {
            handle->abort(e.what());
            throw;
        }
        result.log.echo().backend = "socket";
        to_model_file(result).save((fs::path(m.out_dir) / ("model.rank" + std::to_string(rank) + ".json")).string());
        if (rank == 0) write_outputs(m, result, data, out);
        return int{kOk};
    });
}

int cmd_evaluate(const EvaluateRequest& request, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ModelFile model = ModelFile::load(request.model_path);
        if (!fs::is_regular_file(request.data_path)) {
            throw DataError("cli", "data file '" + request.data_path + "' does not exist");
        }
        ParseOptions parse = request.parse;
        if (!parse.dimension) parse.dimension = model.dimension;
        Dataset data = load_libsvm(request.data_path, parse);
        if (data.dimension() != model.dimension) {
            throw DataError("cli", "data dimension " + std::to_string(data.dimension()) +
                                       " does not match model dimension " + std::to_string(model.dimension));
        }
        if (request.split) {
            Splits parts = split(data, *request.split);
            if (request.subset == "train") {
                data = std::move(parts.train);
            } else if (request.subset == "cv") {
                data = std::move(parts.cv);
            } else if (request.subset == "test") {
                data = std::move(parts.test);
            } else {
                throw InvalidArgument("cli", "unknown subset '" + request.subset + "' (train|cv|test)");
            }
        }
        const Confusion m = confusion(model.weights, data);
        nlohmann::ordered_json report;
        report["accuracy"] = accuracy(model.weights, data);
        report["objective"] = objective(model.weights, data, model.config.c);
        report["count"] = data.size();
        report["confusion"] = {{"true_positive", m.true_positive},
                               {"false_positive", m.false_positive},
                               {"true_negative", m.true_negative},
                               {"false_negative", m.false_negative}};
        out << report.dump() << '\n';
        return int{kOk};
    });
}

int cmd_sweep(const RunManifest& m, const std::vector<std::size_t>& block_sizes,
              const std::vector<std::size_t>& parallelisms, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (m.mode == TrainMode::Sequential) throw InvalidArgument("cli", "sweep needs --mode replica or dist");
        const Prepared data = prepare(m);
        const TrainHooks hooks = make_hooks(m, data);
        std::vector<MetricsLog> logs;

        for (std::size_t k : parallelisms) {
            for (std::size_t b : block_sizes) {
                RunManifest run = m;
                run.trainer.parallelism = k;
                run.trainer.block_size = b;
                const std::size_t shard = k == 0 ? 0 : data.train.size() / k;
                if (k == 0 || b == 0 || k > data.train.size() || b > shard) {
                    err << "skip K=" << k << " B=" << b << ": block size exceeds shard size " << shard << '\n';
                    continue;
                }
                TrainingResult result = restart_harness(data.cv, run.trainer, run.restarts, data.train.dimension(),
                                                        run.sigma, local_runner(run, data, hooks));
                result.log.test_accuracy = accuracy(result.final_model.weights, data.test);
                emit_csv(result.log, metrics_path(run, result.log));
                logs.push_back(std::move(result.log));
            }
        }

        const auto rows = breakdown_report(logs);
        const std::string report_path = (fs::path(m.out_dir) / "breakdown.csv").string();
        {
            std::ofstream f(report_path, std::ios::binary | std::ios::trunc);
            if (!f) throw DataError("cli", "cannot write '" + report_path + "'");
            f << breakdown_csv(rows);
        }
        out << breakdown_table(rows);
        return int{kOk};
    });
}

namespace {

struct ManifestArgs {
    RunManifest m;
    std::string split = "60/20/20";
    std::size_t dimension = 0;
    std::string mode = "seq";
    std::string backend = "inproc";
    std::string topology = "star";
    std::string eval = "every-sync";
    double timeout_secs = 30.0;
    std::uint64_t seed = 0;
    double c = 1.0;
    std::size_t epochs = 5;
    std::size_t block = 1;
    std::size_t k = 1;
};

void add_manifest_options(CLI::App* sub, ManifestArgs& a) {
    sub->add_option("--config", "key = value file supplying any of these options (command line wins)");
    sub->add_option("--data", a.m.data_path, "LIBSVM data file")->required();
    sub->add_option("--dataset-name", a.m.dataset_name, "name used in output file names (default: file stem)");
    sub->add_option("--split", a.split, "train/cv/test percentages")->capture_default_str();
    sub->add_option("--seed", a.seed, "seed for splitting, partitioning and initialization")->capture_default_str();
    sub->add_option("--dimension", a.dimension, "feature dimension override");
    sub->add_flag("--zero-as-negative", a.m.parse.zero_as_negative, "map label 0 to -1");
    sub->add_option("--mode", a.mode, "seq | replica | dist")->capture_default_str();
    sub->add_option("--c", a.c, "hinge-loss weight C")->capture_default_str();
    sub->add_option("--epochs", a.epochs, "epoch budget T")->capture_default_str();
    sub->add_option("--block", a.block, "block size B: samples per worker between syncs")->capture_default_str();
    sub->add_option("--k", a.k, "parallelism K")->capture_default_str();
    sub->add_option("--backend", a.backend, "inproc | socket")->capture_default_str();
    sub->add_option("--topology", a.topology, "star | ring (socket backend)")->capture_default_str();
    sub->add_option("--coordinator", a.m.coordinator, "rank-0 host:port (socket backend)")->capture_default_str();
    sub->add_option("--sync-timeout-secs", a.timeout_secs, "collective timeout")->capture_default_str();
    sub->add_option("--eval", a.eval, "every-sync | every:N | per-epoch")->capture_default_str();
    sub->add_flag("--objective-on-train", a.m.objective_on_train, "log the objective over the training split");
    sub->add_flag("--reshuffle-epochs", a.m.trainer.reshuffle_each_epoch, "reshuffle each shard every epoch");
    sub->add_option("--restarts", a.m.restarts, "Gaussian restarts, best by cv accuracy")->capture_default_str();
    sub->add_option("--sigma", a.m.sigma, "std-dev of the Gaussian initialization")->capture_default_str();
    sub->add_option("--out", a.m.out_dir, "output directory")->capture_default_str();
}

RunManifest finish(ManifestArgs& a) {
    RunManifest m = a.m;
    m.split = SplitSpec::parse(a.split, a.seed);
    if (a.dimension > 0) m.parse.dimension = a.dimension;
    m.mode = parse_mode(a.mode);
    m.backend = parse_backend(a.backend);
    m.topology = parse_topology(a.topology);
    m.trainer.cadence = EvalCadence::parse(a.eval);
    m.trainer.hyper.c = a.c;
    m.trainer.hyper.t_max = a.epochs;
    m.trainer.hyper.validate();
    m.trainer.block_size = a.block;
    m.trainer.parallelism = a.k;
    m.trainer.seed = a.seed;
    if (!(a.timeout_secs > 0.0)) throw InvalidArgument("cli", "--sync-timeout-secs must be positive");
    m.sync_timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout_secs * 1000.0));
    if (m.restarts < 1) throw InvalidArgument("cli", "--restarts must be >= 1");
    if (m.mode == TrainMode::Sequential) {
        m.trainer.block_size = 1;
        m.trainer.parallelism = 1;
    }
    return m;
}

// Launches ranks 1..K-1 as `worker` children of this executable with the
// same options, runs rank 0 here and collects the children's exit codes.
int spawn_socket_group(const RunManifest& m, int argc, const char* const* argv, std::ostream& out,
                       std::ostream& err) {
    std::vector<std::string> base;
    base.push_back(argv[0]);
    for (int i = 1; i < argc; ++i) base.push_back(std::string(argv[i]) == "train" ? "worker" : argv[i]);

    std::vector<pid_t> children;
    for (std::size_t r = 1; r < m.trainer.parallelism; ++r) {
        std::vector<std::string> args = base;
        args.push_back("--rank");
        args.push_back(std::to_string(r));
        std::vector<char*> cargs;
        for (auto& s : args) cargs.push_back(s.data());
        cargs.push_back(nullptr);
        pid_t pid = 0;
        if (posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, cargs.data(), environ) != 0) {
            err << "error: [cli] failed to launch worker rank " << r << '\n';
            for (pid_t c : children) ::kill(c, SIGTERM);
            return kCommFailure;
        }
        children.push_back(pid);
    }
    int code = cmd_worker(m, 0, out, err);
    for (pid_t pid : children) {
        int status = 0;
        ::waitpid(pid, &status, 0);
        const int child = WIFEXITED(status) ? WEXITSTATUS(status) : kCommFailure;
        if (code == kOk && child != kOk) code = child;
    }
    return code;
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
    std::vector<std::size_t> values;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        try {
            std::size_t used = 0;
            const std::string piece = text.substr(pos, comma - pos);
            values.push_back(std::stoul(piece, &used));
            if (used != piece.size()) throw std::invalid_argument(piece);
        } catch (const std::exception&) {
            throw InvalidArgument("cli", std::string("bad ") + what + " list '" + text + "'");
        }
        pos = comma + 1;
    }
    return values;
}

// Replaces `--config FILE` with the options it lists, placed right after the
// subcommand so that explicit command-line options override them. Keys in a
// [section] apply only to the subcommand of that name.
std::vector<std::string> expand_config(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::vector<std::string> out;
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (path.empty() || out.size() < 2) return args;

    std::ifstream in(path);
    if (!in) throw DataError("cli", "cannot open config file '" + path + "'");
    const std::string command = out[1];
    std::vector<std::string> injected;
    for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_config(in)) {
        if (!item.parents.empty() && item.parents.front() != command) continue;
        if (item.name.empty() || item.name == "++" || item.name == "--") continue;
        const std::string flag = "--" + item.name;
        if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "false")) {
            if (item.inputs[0] == "true") injected.push_back(flag);
            continue;
        }
        std::string value;
        for (const std::string& v : item.inputs) value += (value.empty() ? "" : ",") + v;
        injected.push_back(flag);
        injected.push_back(value);
    }
    out.insert(out.begin() + 2, injected.begin(), injected.end());
    return out;
}

}  // namespace

int run(int argc, const char* const* argv) {
    std::vector<std::string> expanded;
    try {
        expanded = expand_config(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    std::vector<const char*> expanded_argv;
    for (const std::string& a : expanded) expanded_argv.push_back(a.c_str());
    argc = static_cast<int>(expanded_argv.size());
    argv = expanded_argv.data();

    CLI::App app{"Data-parallel SGD linear SVM with tunable model-synchronization frequency"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    ManifestArgs train_args;
    auto* train = app.add_subcommand("train", "train a model (--mode seq|replica|dist)");
    add_manifest_options(train, train_args);

    ManifestArgs worker_args;
    std::size_t rank = 0;
    std::size_t group_size = 0;
    auto* worker = app.add_subcommand("worker", "join a socket-backend group as one rank");
    add_manifest_options(worker, worker_args);
    worker->add_option("--rank", rank, "this worker's rank")->required();
    worker->add_option("--group-size", group_size, "number of workers (same as --k)");

    ManifestArgs sweep_args;
    std::string blocks = "1,2,4,8,512";
    std::string ks = "1";
    auto* sweep = app.add_subcommand("sweep", "run a block-size x parallelism cross product");
    add_manifest_options(sweep, sweep_args);
    sweep->add_option("--blocks", blocks, "comma-separated block sizes")->capture_default_str();
    sweep->add_option("--ks", ks, "comma-separated parallelisms")->capture_default_str();

    EvaluateRequest eval;
    std::string eval_split;
    std::uint64_t eval_seed = 0;
    std::size_t eval_dimension = 0;
    auto* evaluate = app.add_subcommand("evaluate", "score a saved model on LIBSVM data");
    evaluate->add_option("--model", eval.model_path, "model file")->required();
    evaluate->add_option("--data", eval.data_path, "LIBSVM data file")->required();
    evaluate->add_option("--split", eval_split, "re-derive a split (e.g. 60/20/20) and score one part of it");
    evaluate->add_option("--seed", eval_seed, "split seed")->capture_default_str();
    evaluate->add_option("--subset", eval.subset, "train | cv | test")->capture_default_str();
    evaluate->add_option("--dimension", eval_dimension, "feature dimension override");
    evaluate->add_flag("--zero-as-negative", eval.parse.zero_as_negative, "map label 0 to -1");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (train->parsed()) {
            const RunManifest m = finish(train_args);
            if (m.mode == TrainMode::Distributed && m.backend == Backend::Socket) {
                return spawn_socket_group(m, argc, argv, std::cout, std::cerr);
            }
            return cmd_train(m, std::cout, std::cerr);
        }
        if (worker->parsed()) {
            worker_args.mode = "dist";
            RunManifest m = finish(worker_args);
            if (group_size != 0) m.trainer.parallelism = group_size;
            m.mode = TrainMode::Distributed;
            m.backend = Backend::Socket;
            return cmd_worker(m, rank, std::cout, std::cerr);
        }
        if (sweep->parsed()) {
            RunManifest m = finish(sweep_args);
            return cmd_sweep(m, parse_list(blocks, "block size"), parse_list(ks, "parallelism"), std::cout, std::cerr);
        }
        if (evaluate->parsed()) {
            if (!eval_split.empty()) eval.split = SplitSpec::parse(eval_split, eval_seed);
            if (eval_dimension > 0) eval.parse.dimension = eval_dimension;
            return cmd_evaluate(eval, std::cout, std::cerr);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kUsage;
}

}  // namespace psgd::cli
