#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <thread>

#include "psgd/comm.hpp"
#include "psgd/dataset.hpp"
#include "psgd/error.hpp"
#include "psgd/model_file.hpp"
#include "psgd/sgd_core.hpp"
#include "psgd/synthetic.hpp"
#include "psgd/trainers.hpp"

namespace py = pybind11;
using namespace psgd;

namespace {

ParseOptions parse_options(std::optional<std::size_t> dimension, bool zero_as_negative) {
    ParseOptions o;
    o.dimension = dimension;
    o.zero_as_negative = zero_as_negative;
    return o;
}

Sample to_sample(int label, const std::vector<std::pair<std::uint32_t, double>>& features) {
    Sample s;
    s.label = label;
    for (const auto& [i, v] : features) s.features.push_back({i, v});
    return s;
}

py::object optional_value(const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); }

py::dict result_dict(const TrainingResult& r) {
    py::list records;
    for (const SyncRecord& rec : r.log.records()) {
        py::dict d;
        d["epoch"] = rec.epoch;
        d["sync_index"] = rec.sync_index;
        d["objective"] = optional_value(rec.objective);
        d["cv_accuracy"] = optional_value(rec.cv_accuracy);
        d["compute_ns"] = rec.compute_ns;
        d["comm_ns"] = rec.comm_ns;
        d["eval_ns"] = rec.eval_ns;
        d["bytes_sent"] = rec.bytes_sent;
        records.append(d);
    }
    const PhaseTotals& t = r.log.totals();
    py::dict totals;
    totals["syncs"] = t.syncs;
    totals["evaluations"] = t.evaluations;
    totals["compute_ns"] = t.compute_ns;
    totals["comm_ns"] = t.comm_ns;
    totals["eval_ns"] = t.eval_ns;
    totals["bytes_sent"] = t.bytes_sent;

    py::dict out;
    out["weights"] = r.final_model.weights;
    out["epochs"] = r.final_model.epoch;
    out["records"] = records;
    out["totals"] = totals;
    out["final_cv_accuracy"] = optional_value(r.log.final_cv_accuracy);
    out["restarts_used"] = r.restarts_used;
    out["mean_cv_curve"] = r.mean_cv_curve;
    out["csv"] = to_csv(r.log);
    return out;
}

std::vector<std::vector<double>> allreduce_group(const std::vector<std::vector<double>>& inputs,
                                                 const std::string& backend, const std::string& topology,
                                                 std::uint16_t port, double timeout_secs) {
    const std::size_t k = inputs.size();
    if (k == 0) throw InvalidArgument("comm", "need at least one member");
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(timeout_secs * 1000));
    const Backend b = parse_backend(backend);
    SocketOptions opts{Endpoint{"127.0.0.1", port}, parse_topology(topology), timeout};
    std::unique_ptr<InProcessGroup> group;
    if (b == Backend::InProcess) group = std::make_unique<InProcessGroup>(k, timeout);

    std::vector<std::vector<double>> out(k);
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::thread> threads;
    for (std::size_t r = 0; r < k; ++r) {
        threads.emplace_back([&, r] {
            try {
                auto h = group ? group->handle(r) : connect_socket_group(r, k, opts);
                out[r] = h->allreduce_sum(inputs[r]);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_psgd, m) {
    m.doc() = "Data-parallel SGD linear SVM core";

    static py::exception<Error> base(m, "PsgdError", PyExc_RuntimeError);
    static py::exception<InvalidArgument> invalid(m, "InvalidArgumentError", base.ptr());
    static py::exception<ParseError> parse(m, "ParseError", base.ptr());
    static py::exception<DataError> data(m, "DataError", base.ptr());
    static py::exception<TrainingAbort> abort(m, "TrainingAbort", base.ptr());
    static py::exception<CommError> comm(m, "CommError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const InvalidArgument& e) {
            invalid(e.what());
        } catch (const ParseError& e) {
            parse(e.what());
        } catch (const DataError& e) {
            data(e.what());
        } catch (const TrainingAbort& e) {
            abort(e.what());
        } catch (const CommError& e) {
            comm(e.what());
        } catch (const Error& e) {
            base(e.what());
        }
    });

    py::class_<Dataset>(m, "Dataset")
        .def(py::init([](const std::vector<std::pair<int, std::vector<std::pair<std::uint32_t, double>>>>& rows,
                         std::size_t dimension) {
                 std::vector<Sample> samples;
                 for (const auto& [label, feats] : rows) samples.push_back(to_sample(label, feats));
                 return Dataset(std::move(samples), dimension);
             }),
             py::arg("samples"), py::arg("dimension"))
        .def("__len__", &Dataset::size)
        .def_property_readonly("dimension", &Dataset::dimension)
        .def("positive_count", &Dataset::positive_count)
        .def("labels",
             [](const Dataset& d) {
                 std::vector<int> out;
                 for (const Sample& s : d) out.push_back(s.label);
                 return out;
             })
        .def("sample",
             [](const Dataset& d, std::size_t i) {
                 if (i >= d.size()) throw py::index_error();
                 std::vector<std::pair<std::uint32_t, double>> feats;
                 for (const Feature& f : d[i].features) feats.emplace_back(f.index, f.value);
                 return std::make_pair(d[i].label, feats);
             })
        .def("to_libsvm",
             [](const Dataset& d) {
                 std::ostringstream out;
                 write_libsvm(d, out);
                 return out.str();
             })
        .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

    m.def(
        "parse_libsvm",
        [](const std::string& text, std::optional<std::size_t> dimension, bool zero_as_negative) {
            std::istringstream in(text);
            return parse_libsvm(in, parse_options(dimension, zero_as_negative));
        },
        py::arg("text"), py::arg("dimension") = py::none(), py::arg("zero_as_negative") = false);
    m.def(
        "load_libsvm",
        [](const std::string& path, std::optional<std::size_t> dimension, bool zero_as_negative) {
            return load_libsvm(path, parse_options(dimension, zero_as_negative));
        },
        py::arg("path"), py::arg("dimension") = py::none(), py::arg("zero_as_negative") = false);
    m.def(
        "split",
        [](const Dataset& d, const std::string& spec, std::uint64_t seed) {
            Splits s = split(d, SplitSpec::parse(spec, seed));
            return py::make_tuple(std::move(s.train), std::move(s.cv), std::move(s.test));
        },
        py::arg("dataset"), py::arg("spec") = "60/20/20", py::arg("seed") = 0);
    m.def("partition_indices", &partition_indices, py::arg("n"), py::arg("k"), py::arg("seed"));
    m.def("shuffled_indices", &shuffled_indices, py::arg("n"), py::arg("seed"));
    m.def(
        "make_synthetic",
        [](std::size_t samples, std::size_t dimension, double density, double gap, double label_noise,
           std::uint64_t seed) {
            return make_synthetic(SyntheticSpec{samples, dimension, density, gap, label_noise, seed});
        },
        py::arg("samples") = 256, py::arg("dimension") = 10, py::arg("density") = 1.0, py::arg("gap") = 0.1,
        py::arg("label_noise") = 0.0, py::arg("seed") = 1);

    auto sample_arg = [](int label, const std::vector<std::pair<std::uint32_t, double>>& feats) {
        return to_sample(label, feats);
    };
    m.def(
        "hinge",
        [sample_arg](const Weights& w, int y, const std::vector<std::pair<std::uint32_t, double>>& x) {
            return hinge(w, sample_arg(y, x));
        },
        py::arg("weights"), py::arg("label"), py::arg("features"));
    m.def(
        "subgradient",
        [sample_arg](const Weights& w, int y, const std::vector<std::pair<std::uint32_t, double>>& x, double c) {
            return subgradient(w, sample_arg(y, x), c);
        },
        py::arg("weights"), py::arg("label"), py::arg("features"), py::arg("c") = 1.0);
    m.def(
        "sgd_step",
        [sample_arg](const Weights& w, int y, const std::vector<std::pair<std::uint32_t, double>>& x, double c,
                     double alpha) { return sgd_step(w, sample_arg(y, x), c, alpha); },
        py::arg("weights"), py::arg("label"), py::arg("features"), py::arg("c"), py::arg("alpha"));
    m.def("learning_rate", &learning_rate, py::arg("epoch"));
    m.def(
        "objective", [](const Weights& w, const Dataset& d, double c) { return objective(w, d, c); },
        py::arg("weights"), py::arg("dataset"), py::arg("c") = 1.0);
    m.def(
        "accuracy", [](const Weights& w, const Dataset& d) { return accuracy(w, d); }, py::arg("weights"),
        py::arg("dataset"));
    m.def(
        "average_models", [](const std::vector<Weights>& models) { return average_models(models); },
        py::arg("models"));
    m.def(
        "gaussian_init", [](std::size_t d, double sigma, std::uint64_t seed) { return gaussian_init(d, sigma, seed).weights; },
        py::arg("dimension"), py::arg("sigma") = 0.01, py::arg("seed") = 0);

    m.def(
        "train",
        [](const Dataset& train, const std::string& mode, double c, std::size_t epochs, std::size_t block_size,
           std::size_t parallelism, std::uint64_t seed, std::optional<Dataset> cv, std::size_t restarts, double sigma,
           const std::string& backend, const std::string& topology, std::uint16_t port, const std::string& eval,
           bool reshuffle, std::optional<Weights> init) {
            TrainerConfig cfg;
            cfg.hyper.c = c;
            cfg.hyper.t_max = epochs;
            cfg.block_size = block_size;
            cfg.parallelism = parallelism;
            cfg.seed = seed;
            cfg.cadence = EvalCadence::parse(eval);
            cfg.reshuffle_each_epoch = reshuffle;
            const TrainMode m = parse_mode(mode);
            const Backend b = parse_backend(backend);
            TrainHooks hooks;
            if (cv) hooks.cv = &*cv;

            auto run_one = [&](const TrainerConfig& k, const ModelState& start) {
                if (m == TrainMode::Sequential) return train_sequential(train, k, start, hooks);
                if (m == TrainMode::Replica) return train_replica(train, k, start, hooks);
                if (b == Backend::Socket) {
                    return train_distributed_sockets(train, k, start,
                                                     SocketOptions{Endpoint{"127.0.0.1", port}, parse_topology(topology)},
                                                     hooks);
                }
                InProcessGroup group(k.parallelism);
                return train_distributed(train, k, start, group, hooks);
            };

            std::optional<TrainingResult> result;
            {
                py::gil_scoped_release release;
                if (init) {
                    result = run_one(cfg, ModelState{*init, 0});
                } else if (!cv) {
                    result = run_one(cfg, gaussian_init(train.dimension(), sigma, seed));
                } else {
                    result = restart_harness(*cv, cfg, restarts, train.dimension(), sigma, run_one);
                }
            }
            return result_dict(*result);
        },
        py::arg("train"), py::arg("mode") = "seq", py::arg("c") = 1.0, py::arg("epochs") = 1,
        py::arg("block_size") = 1, py::arg("parallelism") = 1, py::arg("seed") = 0, py::arg("cv") = py::none(),
        py::arg("restarts") = 1, py::arg("sigma") = 0.01, py::arg("backend") = "inproc", py::arg("topology") = "star",
        py::arg("port") = 29500, py::arg("eval") = "every-sync", py::arg("reshuffle") = false,
        py::arg("init") = py::none());

    m.def(
        "allreduce",
        [](const std::vector<std::vector<double>>& inputs, const std::string& backend, const std::string& topology,
           std::uint16_t port, double timeout_secs) {
            py::gil_scoped_release release;
            return allreduce_group(inputs, backend, topology, port, timeout_secs);
        },
        py::arg("inputs"), py::arg("backend") = "inproc", py::arg("topology") = "star", py::arg("port") = 29500,
        py::arg("timeout_secs") = 30.0);

    m.def(
        "save_model",
        [](const std::string& path, const Weights& w, std::size_t epochs) {
            ModelFile f;
            f.dimension = w.size();
            f.weights = w;
            f.epochs_completed = epochs;
            f.save(path);
        },
        py::arg("path"), py::arg("weights"), py::arg("epochs_completed") = 0);
    m.def(
        "load_model", [](const std::string& path) { return ModelFile::load(path).weights; }, py::arg("path"));
}
