#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "isocal/calibration.hpp"
#include "isocal/embedding_io.hpp"
#include "isocal/errors.hpp"
#include "isocal/experiment.hpp"
#include "isocal/flow.hpp"
#include "isocal/isotropy.hpp"
#include "isocal/report.hpp"
#include "isocal/run_record.hpp"
#include "isocal/stats.hpp"
#include "isocal/svd.hpp"

namespace py = pybind11;
using namespace isocal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ContractError("expected a 2-d array");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw ContractError("expected a 1-d array");
    return std::vector<double>(a.data(), a.data() + a.shape(0));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

SpectrumConfig spectrum_config(const std::string& prior, double lambda, double c1, double c2, double gamma) {
    SpectrumConfig cfg;
    if (prior == "polynomial")
        cfg.kind = PriorKind::polynomial;
    else if (prior == "exponential")
        cfg.kind = PriorKind::exponential;
    else
        throw ContractError("prior must be 'polynomial' or 'exponential'");
    cfg.lambda = lambda;
    cfg.c1 = c1;
    cfg.c2 = c2;
    cfg.gamma = gamma;
    return cfg;
}

Method method_from(const std::string& label) {
    const auto m = parse_method(label);
    if (!m) throw ContractError("unknown method '" + label + "'");
    return *m;
}

}  // namespace

PYBIND11_MODULE(_isocal, m) {
    m.doc() = "Isotropy metrics and calibration methods for embedding matrices";

    auto base = py::register_exception<Error>(m, "IsocalError");
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<DegenerateSpectrumError>(m, "DegenerateSpectrumError", numerical.ptr());
    py::register_exception<DegenerateEmbeddingError>(m, "DegenerateEmbeddingError", numerical.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    // metrics
    m.def("isotropy", [](const Array& w) {
        const IsotropyReport r = isotropy(to_matrix(w));
        py::dict d;
        d["i1"] = r.i1;
        d["i2"] = r.i2;
        d["log_z"] = to_array(r.log_z);
        d["probes"] = to_array(r.probes.probes);
        return d;
    }, py::arg("w"), "I1, I2, log Z at each probe and the probe set of an N x d matrix.");
    m.def("isotropy_i1", [](const Array& w) { return isotropy_i1(to_matrix(w)); }, py::arg("w"));
    m.def("isotropy_i2", [](const Array& w) { return isotropy_i2(to_matrix(w)); }, py::arg("w"));
    m.def("log_partition", [](const Array& w, const Array& v) {
        const auto vec = to_vector(v);
        return log_partition(to_matrix(w), vec);
    }, py::arg("w"), py::arg("v"));
    m.def("mean_pairwise_cosine", [](const Array& w) { return mean_pairwise_cosine(to_matrix(w)); }, py::arg("w"));

    m.def("svd", [](const Array& w) {
        const SvdFactors f = svd(to_matrix(w));
        return py::make_tuple(to_array(f.left), to_array(f.singular_values), to_array(f.right));
    }, py::arg("w"), "Thin SVD (U, s, V) with W = U diag(s) V^T and s descending.");

    // calibration objectives
    m.def("cosreg_loss", [](const Array& w, double lambda_c) { return cosreg_loss(to_matrix(w), {lambda_c}); },
          py::arg("w"), py::arg("lambda_c") = 1.0);
    m.def("cosreg_grad", [](const Array& w, double lambda_c) { return to_array(cosreg_grad(to_matrix(w), {lambda_c})); },
          py::arg("w"), py::arg("lambda_c") = 1.0);
    m.def("spectrum_prior", [](std::size_t k, const std::string& prior, double c1, double c2, double gamma) {
        return spectrum_prior(k, spectrum_config(prior, 1.0, c1, c2, gamma));
    }, py::arg("k"), py::arg("prior") = "polynomial", py::arg("c1") = 1.0, py::arg("c2") = 0.5, py::arg("gamma") = -0.5);
    m.def("spectrum_loss", [](const Array& w, const std::string& prior, double lambda, double c1, double c2, double gamma) {
        return spectrum_loss(to_matrix(w), spectrum_config(prior, lambda, c1, c2, gamma));
    }, py::arg("w"), py::arg("prior") = "polynomial", py::arg("lambda_") = 1.0, py::arg("c1") = 1.0,
       py::arg("c2") = 0.5, py::arg("gamma") = -0.5);
    m.def("spectrum_grad", [](const Array& w, const std::string& prior, double lambda, double c1, double c2, double gamma) {
        return to_array(spectrum_grad_w(to_matrix(w), spectrum_config(prior, lambda, c1, c2, gamma)));
    }, py::arg("w"), py::arg("prior") = "polynomial", py::arg("lambda_") = 1.0, py::arg("c1") = 1.0,
       py::arg("c2") = 0.5, py::arg("gamma") = -0.5);

    // flows
    py::class_<FlowModel>(m, "Flow")
        .def(py::init([](std::size_t dim, std::uint64_t seed, std::size_t layers, double s_max) {
                 Rng rng(seed);
                 return make_flow(dim, rng, {layers, s_max, 0});
             }),
             py::arg("dim"), py::arg("seed") = 0, py::arg("layers") = 4, py::arg("s_max") = 3.0)
        .def_readonly("dim", &FlowModel::dim)
        .def_property_readonly("num_layers", [](const FlowModel& f) { return f.layers.size(); })
        .def_property("parameters", [](const FlowModel& f) { return to_array(f.parameters()); },
                      [](FlowModel& f, const Array& p) { f.set_parameters(to_vector(p)); })
        .def("forward", [](const FlowModel& f, const Array& z) {
            const auto r = flow_forward(f, to_vector(z));
            return py::make_tuple(to_array(r.value), r.log_det);
        }, py::arg("z"))
        .def("inverse", [](const FlowModel& f, const Array& h) {
            const auto r = flow_inverse(f, to_vector(h));
            return py::make_tuple(to_array(r.value), r.log_det);
        }, py::arg("h"))
        .def("nll", [](const FlowModel& f, const Array& batch) { return flow_nll(f, to_matrix(batch)); }, py::arg("batch"))
        .def("calibrate", [](const FlowModel& f, const Array& h) { return to_array(flow_calibrate(f, to_matrix(h))); },
             py::arg("h"))
        .def("fit", [](const FlowModel& f, const Array& data, std::size_t steps, double step_size,
                       std::size_t batch_size, std::uint64_t seed) {
            Rng rng(seed);
            FlowFitResult r;
            {
                py::gil_scoped_release release;
                r = flow_fit(f, to_matrix(data), {steps, step_size, batch_size}, rng);
            }
            return py::make_tuple(r.model, r.curve);
        }, py::arg("data"), py::arg("steps") = 400, py::arg("step_size") = 1e-2, py::arg("batch_size") = 0,
           py::arg("seed") = 0, "Returns (fitted flow, NLL curve); the receiver is left unchanged.");

    // statistics
    m.def("welch_ttest", [](const std::vector<double>& a, const std::vector<double>& b) {
        const TTestResult r = welch_ttest(a, b);
        py::dict d;
        d["t"] = r.t;
        d["dof"] = r.dof;
        d["p"] = r.p;
        d["degenerate"] = r.degenerate;
        return d;
    }, py::arg("a"), py::arg("b"));

    // files
    m.def("read_embeddings", [](const std::filesystem::path& p) { return to_array(read_embeddings(p)); }, py::arg("path"));
    m.def("write_embeddings", [](const Array& w, const std::filesystem::path& p) { write_embeddings(to_matrix(w), p); },
          py::arg("w"), py::arg("path"));

    // protocol
    m.def("run_method", [](const std::string& method, std::uint64_t seed, std::size_t epochs, std::size_t vocab,
                           std::size_t dim, std::size_t context, std::size_t train_sequences,
                           std::size_t eval_sequences) {
        ExperimentConfig cfg;
        cfg.model.epochs = epochs;
        cfg.model.vocab_size = vocab;
        cfg.model.dim = dim;
        cfg.model.context_len = context;
        cfg.train_sequences = train_sequences;
        cfg.eval_sequences = eval_sequences;
        const Method mth = method_from(method);
        MethodRun run;
        {
            py::gil_scoped_release release;
            run = run_method(cfg, mth, seed, make_dataset(cfg));
        }
        py::dict d;
        d["method"] = std::string(method_label(run.record.method));
        d["seed"] = run.record.seed;
        d["accuracy"] = run.record.accuracy;
        d["perplexity"] = run.record.perplexity;
        d["i1"] = run.record.i1;
        d["i2"] = run.record.i2;
        d["seconds_per_epoch"] = run.record.seconds_per_epoch;
        d["output_matrix"] = to_array(run.training.model.output);
        d["record"] = serialize(run.record);
        return d;
    }, py::arg("method"), py::arg("seed") = 1, py::arg("epochs") = 10, py::arg("vocab") = 64, py::arg("dim") = 32,
       py::arg("context") = 16, py::arg("train_sequences") = 4096, py::arg("eval_sequences") = 1024,
       "Train one (method, seed) run of the toy protocol and return its summary.");

    m.def("report", [](const std::vector<std::string>& records, bool csv, bool timing) {
        std::vector<RunRecord> rs;
        for (const auto& text : records) rs.push_back(parse_run_record(text));
        const ReportTable t = aggregate(rs);
        return csv ? render_csv(t, {timing}) : render_text(t, {timing});
    }, py::arg("records"), py::arg("csv") = false, py::arg("timing") = true,
       "Aggregate serialized run records into a text or CSV table.");
}
