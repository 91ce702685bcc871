#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "consolidate/experiments.hpp"

namespace py = pybind11;
using namespace ewc;

namespace {

NetworkKind kind_from(const std::string& name) {
    if (name == "dense") return NetworkKind::DenseNet;
    if (name == "conv") return NetworkKind::ConvNet;
    throw EwcError("unknown network kind \"" + name + "\" (dense, conv)");
}

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t d = 0; d < a.ndim(); ++d) shape[std::size_t(d)] = std::size_t(a.shape(d));
    Tensor t = Tensor::zeros(shape);
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

py::array_t<double> numpy_from(const std::vector<std::size_t>& shape, const double* src,
                               std::size_t n) {
    std::vector<py::ssize_t> dims(shape.begin(), shape.end());
    py::array_t<double> out(dims);
    std::copy(src, src + n, out.mutable_data());
    return out;
}

py::array_t<double> numpy_from_tensor(const Tensor& t) {
    return numpy_from(t.shape, t.data.data(), t.data.size());
}

std::vector<std::uint8_t> labels_from_numpy(const py::array_t<std::uint8_t>& a) {
    return {a.data(), a.data() + a.size()};
}

py::dict result_to_dict(const RunResult& r) {
    py::dict d;
    d["per_task_accuracy"] = r.per_task_accuracy;
    d["average_accuracy"] = r.average_accuracy;
    d["seed"] = r.seed;
    d["wall_time_s"] = r.wall_time_s;
    d["failed"] = r.failed;
    d["failure"] = r.failure;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Elastic weight consolidation: networks, importance estimators, penalties, "
              "and the sequential-training experiment protocol.";

    py::register_exception<EwcError>(m, "EwcError");

    py::class_<Dataset>(m, "Dataset")
        .def_static(
            "load",
            [](const std::string& images, const std::string& labels, bool train) {
                return load_dataset(images, labels, train ? Split::Train : Split::Test);
            },
            py::arg("images_path"), py::arg("labels_path"), py::arg("train") = true)
        .def_static(
            "from_arrays",
            [](const py::array_t<double, py::array::c_style | py::array::forcecast>& images,
               const py::array_t<std::uint8_t>& labels, bool train) {
                if (images.ndim() != 3 || images.shape(1) != 28 || images.shape(2) != 28)
                    throw EwcError("images must have shape (n, 28, 28)");
                Dataset ds;
                ds.images = tensor_from_numpy(images);
                ds.labels = labels_from_numpy(labels);
                ds.split = train ? Split::Train : Split::Test;
                if (ds.labels.size() != std::size_t(images.shape(0)))
                    throw EwcError("image/label count mismatch");
                return ds;
            },
            py::arg("images"), py::arg("labels"), py::arg("train") = true)
        .def("__len__", &Dataset::size)
        .def_property_readonly("images",
                               [](const Dataset& ds) { return numpy_from_tensor(ds.images); })
        .def_property_readonly("labels", [](const Dataset& ds) {
            return py::array_t<std::uint8_t>(std::vector<py::ssize_t>{py::ssize_t(ds.labels.size())}, ds.labels.data());
        });

    py::class_<TaskSpec>(m, "TaskSpec")
        .def_readonly("task_id", &TaskSpec::task_id)
        .def("__repr__", [](const TaskSpec& t) { return "<TaskSpec " + task_label(t) + ">"; });

    py::class_<TaskSequence>(m, "TaskSequence")
        .def_readonly("tasks", &TaskSequence::tasks)
        .def("__len__", [](const TaskSequence& s) { return s.tasks.size(); });

    m.def("make_task_sequence", &make_task_sequence, py::arg("key"), py::arg("seed") = 0);
    m.def("make_permuted_tasks", &make_permuted_tasks, py::arg("seed"), py::arg("n_tasks"),
          py::arg("first_identity") = false);

    py::class_<Network>(m, "Network")
        .def(py::init([](const std::string& kind) { return make_network(kind_from(kind)); }),
             py::arg("kind") = "dense")
        .def("seeded_init", &Network::seeded_init, py::arg("seed"))
        .def_property_readonly("param_count", &Network::param_count)
        .def_property(
            "params",
            [](const Network& net) {
                return numpy_from({net.param_count()}, net.params().data(), net.param_count());
            },
            [](Network& net, const py::array_t<double, py::array::c_style |
                                                           py::array::forcecast>& values) {
                if (std::size_t(values.size()) != net.param_count())
                    throw EwcError("parameter vector length mismatch");
                std::copy(values.data(), values.data() + values.size(), net.params().begin());
            })
        .def("predict",
             [](const Network& net,
                const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
                 auto pred = net.predict(tensor_from_numpy(x));
                 std::vector<std::uint8_t> classes(pred.begin(), pred.end());
                 return py::array_t<std::uint8_t>(
                     std::vector<py::ssize_t>{py::ssize_t(classes.size())}, classes.data());
             })
        .def("accuracy",
             [](const Network& net,
                const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                const py::array_t<std::uint8_t>& y) {
                 return net.accuracy(tensor_from_numpy(x), labels_from_numpy(y));
             })
        .def("loss",
             [](const Network& net,
                const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                const py::array_t<std::uint8_t>& y) {
                 return net.loss_ce(tensor_from_numpy(x), labels_from_numpy(y));
             });

    py::class_<ImportanceMap>(m, "ImportanceMap")
        .def_property_readonly(
            "omega",
            [](const ImportanceMap& map) {
                return numpy_from({map.omega.size()}, map.omega.data(), map.omega.size());
            })
        .def_property_readonly("method",
                               [](const ImportanceMap& map) { return method_name(map.method); })
        .def_readonly("n_samples_used", &ImportanceMap::n_samples_used);

    m.def(
        "fisher_importance",
        [](const Network& net, const Dataset& train, const std::string& kind,
           const std::string& mode, std::size_t n_samples, std::uint64_t seed) {
            const FisherMode fm = mode == "label"    ? FisherMode::Label
                                  : mode == "argmax" ? FisherMode::Argmax
                                  : mode == "sampled"
                                      ? FisherMode::Sampled
                                      : throw EwcError("fisher mode: label, argmax, sampled");
            return fisher_importance(net, train, TaskSpec{}, kind_from(kind), fm, n_samples,
                                     seed);
        },
        py::arg("net"), py::arg("train"), py::arg("kind") = "dense", py::arg("mode") = "label",
        py::arg("n_samples") = 0, py::arg("seed") = 0);
    m.def(
        "mas_importance",
        [](const Network& net, const Dataset& train, const std::string& kind,
           std::size_t n_samples) {
            return mas_importance(net, train, TaskSpec{}, kind_from(kind), n_samples);
        },
        py::arg("net"), py::arg("train"), py::arg("kind") = "dense", py::arg("n_samples") = 0);
    m.def(
        "total_abs_signal_importance",
        [](const Network& net, const Dataset& train, const std::string& kind,
           std::size_t n_samples) {
            return total_abs_signal_importance(net, train, TaskSpec{}, kind_from(kind),
                                               n_samples);
        },
        py::arg("net"), py::arg("train"), py::arg("kind") = "dense", py::arg("n_samples") = 0);
    m.def("accumulate", &accumulate, py::arg("prev"), py::arg("next"));

    py::class_<ConsolidatedState>(m, "ConsolidatedState")
        .def_property_readonly("w_star", [](const ConsolidatedState& s) {
            return numpy_from({s.w_star.size()}, s.w_star.data(), s.w_star.size());
        });

    m.def(
        "consolidate",
        [](const Network& net, const ImportanceMap& omega, const std::string& penalty,
           double lam, double alpha) {
            return consolidate(net, omega, {penalty_from_name(penalty), lam, alpha});
        },
        py::arg("net"), py::arg("omega"), py::arg("penalty") = "original", py::arg("lam") = 1.0,
        py::arg("alpha") = 0.001);
    m.def(
        "penalty_value",
        [](const ConsolidatedState& state, const Network& net) {
            return penalty_value(state, net.params());
        },
        py::arg("state"), py::arg("net"));
    m.def(
        "penalty_gradient",
        [](const ConsolidatedState& state, const Network& net) {
            GradientVector g = penalty_gradient(state, net.params());
            return numpy_from({g.size()}, g.data(), g.size());
        },
        py::arg("state"), py::arg("net"));
    m.def(
        "step_factor",
        [](const std::string& penalty, double alpha, double lam, double omega) {
            return step_factor(penalty_from_name(penalty), alpha, lam, omega);
        },
        py::arg("penalty"), py::arg("alpha"), py::arg("lam"), py::arg("omega"));
    m.def(
        "explosion_demo",
        [](double alpha, double lam, double omega, int steps, const std::string& penalty) {
            ExplosionTrajectory t =
                explosion_demo(alpha, lam, omega, steps, penalty_from_name(penalty));
            return py::make_tuple(t.distances, t.diverged);
        },
        py::arg("alpha"), py::arg("lam"), py::arg("omega"), py::arg("steps") = 10,
        py::arg("penalty") = "original");

    m.def("mean_ci", &mean_ci, py::arg("samples"), py::arg("significance") = 0.95);

    m.def(
        "run_sequential",
        [](const Dataset& mnist_train, const Dataset& mnist_test, const std::string& tasks_key,
           const std::string& method, const std::string& penalty, double lam, int epochs,
           std::size_t batch_size, std::uint64_t seed, std::size_t importance_samples) {
            DataStore store;
            store.mnist_train = mnist_train;
            store.mnist_test = mnist_test;
            RunConfig cfg;
            cfg.sequence = make_task_sequence(tasks_key, seed);
            cfg.method = method_from_name(method);
            cfg.penalty = penalty_from_name(penalty);
            cfg.lambda = lam;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            cfg.importance_samples = importance_samples;
            return result_to_dict(run_sequential(cfg, store));
        },
        py::arg("mnist_train"), py::arg("mnist_test"), py::arg("tasks_key") = "permuted-mnist-10",
        py::arg("method") = "mas", py::arg("penalty") = "original", py::arg("lam") = 4.5,
        py::arg("epochs") = 6, py::arg("batch_size") = 100, py::arg("seed") = 0,
        py::arg("importance_samples") = 0);
}
