#include <memory>
#include <optional>
#include <string>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "bdsvie/bdsvie.hpp"
#include "bdsvie/corpus.hpp"
#include "bdsvie/experiment.hpp"
#include "bdsvie/grid.hpp"
#include "bdsvie/order.hpp"
#include "bdsvie/parallel.hpp"

namespace py = pybind11;
using namespace bdsvie;

namespace {

/// (N+1, M) array of a path-major accessor.
template <class Get>
py::array_t<double> node_array(const ScenarioBatch& b, Get get) {
    py::array_t<double> out({b.steps() + 1, b.paths()});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i <= b.steps(); ++i)
        for (std::size_t p = 0; p < b.paths(); ++p) v(i, p) = get(i, p);
    return out;
}

}  // namespace

PYBIND11_MODULE(_bdsvie, m) {
    m.doc() = "Bindings for the BDSVIE/FDSVIE solvers and experiment corpus.";

    static py::exception<Error> error(m, "BdsvieError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = error;
            PyErr_SetObject(exc.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
        }
    });

    m.def("set_threads", &set_thread_count, py::arg("threads"));
    m.def("threads", &thread_count);

    m.def("list_problems_json", [] { return list_corpus_json(corpus()).dump(); });

    m.def(
        "run_json",
        [](const std::string& config, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
            auto cfg = parse_config(nlohmann::json::parse(config));
            RunRequest req{out, seed};
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg, req);
            }
            return py::make_tuple(r.exit_code, r.summary.dump(), r.out_dir);
        },
        py::arg("config"), py::arg("out") = py::none(), py::arg("seed_override") = py::none());

    m.def("strip_wallclock_json",
          [](const std::string& s) { return strip_wallclock(nlohmann::json::parse(s)).dump(); });

    m.def(
        "contraction_constants",
        [](double c, double alpha, double T, double beta) {
            auto k = contraction_constants(c, alpha, T, beta);
            py::dict d;
            d["K"] = k.K;
            d["delta"] = k.delta;
            d["epsilon"] = k.epsilon;
            d["beta_star"] = k.beta_star;
            return d;
        },
        py::arg("c"), py::arg("alpha"), py::arg("T"), py::arg("beta"));

    m.def(
        "scenarios",
        [](double T, std::size_t N, std::size_t M, std::uint64_t seed) {
            auto b = generate_scenarios(make_grid(T, N), M, 1, 1, seed);
            py::dict d;
            d["t"] = py::cast(b.grid().nodes);
            d["W"] = node_array(b, [&](std::size_t i, std::size_t p) { return b.W(i, p); });
            d["B"] = node_array(b, [&](std::size_t i, std::size_t p) { return b.B(i, p); });
            return d;
        },
        py::arg("T"), py::arg("N"), py::arg("M"), py::arg("seed"));

    py::class_<LipschitzApprox>(m, "LipschitzApprox")
        .def_property_readonly("n", &LipschitzApprox::n)
        .def_property_readonly("spacing", &LipschitzApprox::spacing)
        .def("safe_extent", &LipschitzApprox::safe_extent)
        .def("__call__", [](const LipschitzApprox& a, double x) { return a(x); }, py::arg("x"));

    m.def(
        "inf_convolution",
        [](py::function f, unsigned n, double M_growth, double R, double h, std::optional<double> L) {
            // Shared ownership keeps refcount traffic on the Python object under the GIL.
            auto fn = std::make_shared<py::function>(std::move(f));
            LipschitzApprox::Fn1 wrapped = [fn](double x) {
                py::gil_scoped_acquire gil;
                return (*fn)(x).cast<double>();
            };
            py::gil_scoped_release release;
            return inf_convolution(wrapped, n, M_growth, R, h, L);
        },
        py::arg("f"), py::arg("n"), py::arg("M"), py::arg("R"), py::arg("h"), py::arg("L") = py::none());
}
