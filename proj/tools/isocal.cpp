// isocal: isotropy metrics, calibration experiments and report tables.
//
// Exit codes: 0 success, 1 usage, 2 I/O or parse error, 3 numerical failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isocal/embedding_io.hpp"
#include "isocal/errors.hpp"
#include "isocal/experiment.hpp"
#include "isocal/flow.hpp"
#include "isocal/isotropy.hpp"
#include "isocal/report.hpp"
#include "isocal/run_record.hpp"
#include "isocal/svd.hpp"
#include "isocal/text_format.hpp"

namespace fs = std::filesystem;
using namespace isocal;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumerical = 3;

class UsageError : public Error {
public:
    using Error::Error;
};

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<Method> parse_methods(const std::string& spec) {
    std::vector<Method> out;
    for (const auto& label : split_commas(spec)) {
        if (label == "all") {
            out.insert(out.end(), {Method::none, Method::cosreg, Method::spectrum_pol, Method::spectrum_exp,
                                   Method::flow_posthoc});
            continue;
        }
        const auto m = parse_method(label);
        if (!m)
            throw UsageError("unknown method '" + label +
                             "' (expected none, cosreg, spectrum-pol, spectrum-exp, flow, flow-posthoc, flow-joint, all)");
        if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
    }
    if (out.empty()) throw UsageError("no method given");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> out;
    for (const auto& s : split_commas(spec)) {
        const auto v = parse_uint(s);
        if (!v) throw UsageError("malformed seed '" + s + "'");
        out.push_back(*v);
    }
    if (out.empty()) throw UsageError("no seeds given");
    return out;
}

int cmd_analyze(const std::string& path, bool machine, std::size_t top) {
    const Matrix w = read_embeddings(fs::path(path));
    const IsotropyReport rep = isotropy(w);
    const SvdFactors f = svd(w);
    std::cout << "N=" << w.rows() << " d=" << w.cols() << '\n';
    std::cout << "I1 " << format_short(rep.i1) << '\n';
    std::cout << "I2 " << format_short(rep.i2) << '\n';
    std::cout << "mean pairwise cosine " << format_short(mean_pairwise_cosine(w)) << '\n';
    std::cout << "top singular values:";
    for (std::size_t k = 0; k < std::min(top, f.singular_values.size()); ++k)
        std::cout << ' ' << format_short(f.singular_values[k]);
    std::cout << '\n';
    if (machine) std::cout << "I1=" << format_short(rep.i1) << " I2=" << format_short(rep.i2) << '\n';
    return 0;
}

struct TrainArgs {
    std::string methods = "none";
    std::string seeds;
    std::uint64_t seed = 1;
    std::optional<double> lambda_c, lambda_p, lambda_e, c1, c2, gamma;
    double lambda_f = 1.0;
    double flow_step_size = 1e-2;
    std::size_t epochs = 0, dim = 0, vocab = 0, context = 0, batch = 0;
    std::optional<double> step_size;
    std::size_t train_seqs = 0, eval_seqs = 0;
    std::uint64_t data_seed = 0;
    std::string out = "runs";
    bool quiet = false;
};

ExperimentConfig experiment_from(const TrainArgs& a) {
    ExperimentConfig cfg;
    if (a.epochs) cfg.model.epochs = a.epochs;
    if (a.dim) cfg.model.dim = a.dim;
    if (a.vocab) cfg.model.vocab_size = a.vocab;
    if (a.context) cfg.model.context_len = a.context;
    if (a.batch) cfg.model.batch_size = a.batch;
    if (a.step_size) cfg.model.step_size = *a.step_size;
    if (a.train_seqs) cfg.train_sequences = a.train_seqs;
    if (a.eval_seqs) cfg.eval_sequences = a.eval_seqs;
    cfg.data_seed = a.data_seed;
    if (a.lambda_c) cfg.cosreg.lambda_c = *a.lambda_c;
    cfg.lambda_p = a.lambda_p;
    cfg.lambda_e = a.lambda_e;
    cfg.c1 = a.c1;
    cfg.c2 = a.c2;
    cfg.gamma = a.gamma;
    cfg.lambda_f = a.lambda_f;
    if (!(a.flow_step_size > 0.0)) throw UsageError("--flow-step-size must be positive");
    cfg.flow_step_size = a.flow_step_size;
    try {
        cfg.model.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    const auto methods = parse_methods(a.methods);
    const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{a.seed} : parse_seeds(a.seeds);
    const ExperimentConfig cfg = experiment_from(a);
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create output directory " + a.out + ": " + ec.message());

    const Dataset data = make_dataset(cfg);
    for (Method m : methods)
        for (std::uint64_t seed : seeds) {
            MethodRun run = run_method(cfg, m, seed, data);
            const std::string stem = std::string(method_label(m)) + "_seed" + std::to_string(seed);
            write_run_record(run.record, fs::path(a.out) / (stem + ".run"));
            write_embeddings(run.training.model.output, fs::path(a.out) / (stem + "_W.isoemb"));
            if (run.flow) write_flow(*run.flow, fs::path(a.out) / (stem + ".isoflow"));
            const auto skipped = run.record.extra_value("skipped_reg_steps");
            if (skipped && *skipped != "0")
                std::cerr << "warning: " << stem << ": spectrum gradient skipped on " << *skipped
                          << " steps (degenerate singular values)\n";
            if (!a.quiet)
                std::cout << stem << ": accuracy=" << format_short(run.record.accuracy)
                          << " perplexity=" << format_short(run.record.perplexity)
                          << " I1=" << format_short(run.record.i1) << " I2=" << format_short(run.record.i2)
                          << " sec/epoch=" << format_short(run.record.seconds_per_epoch) << '\n';
        }
    return 0;
}

struct FlowFitArgs {
    std::string input;
    std::size_t steps = 400;
    double step_size = 1e-2;
    std::size_t batch = 0;
    std::size_t layers = 4;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_flow_fit(const FlowFitArgs& a) {
    const Matrix h = read_embeddings(fs::path(a.input));
    Rng rng(a.seed);
    FlowConfig fc;
    fc.num_layers = a.layers;
    FlowModel init = make_flow(h.cols(), rng, fc);
    FlowFitOptions opts{a.steps, a.step_size, a.batch};
    if (!(opts.step_size > 0.0)) throw UsageError("--step-size must be positive");
    const FlowFitResult fit = flow_fit(std::move(init), h, opts, rng);
    const Matrix z = flow_calibrate(fit.model, h);
    const IsotropyReport before = isotropy(h);
    const IsotropyReport after = isotropy(z);
    std::cout << "nll initial=" << format_short(fit.curve.empty() ? flow_nll(fit.model, h) : fit.curve.front())
              << " final=" << format_short(flow_nll(fit.model, h)) << '\n';
    std::cout << "input I1=" << format_short(before.i1) << " I2=" << format_short(before.i2) << '\n';
    std::cout << "calibrated I1=" << format_short(after.i1) << " I2=" << format_short(after.i2) << '\n';
    if (!a.out.empty()) {
        write_embeddings(z, fs::path(a.out + ".isoemb"));
        write_flow(fit.model, fs::path(a.out + ".isoflow"));
    }
    return 0;
}

int cmd_report(const std::string& dir, const std::string& csv_path, bool no_timing) {
    const auto records = read_run_records(fs::path(dir));
    ReportTable table;
    try {
        table = aggregate(records);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    ReportOptions opts;
    opts.include_timing = !no_timing;
    std::cout << render_text(table, opts);
    const fs::path csv = csv_path.empty() ? fs::path(dir) / "report.csv" : fs::path(csv_path);
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw IoError("cannot write " + csv.string());
    out << render_csv(table, opts);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"isocal: embedding isotropy metrics and calibration experiments"};
    app.require_subcommand(1);

    std::string analyze_path;
    bool machine = false;
    std::size_t top = 10;
    auto* analyze = app.add_subcommand("analyze", "Print N, d, I1, I2 and the top singular values of an ISOEMB file");
    analyze->add_option("file", analyze_path, "ISOEMB embedding file")->required();
    analyze->add_flag("--machine", machine, "Also print a line 'I1=<v> I2=<v>'");
    analyze->add_option("--top", top, "Number of singular values to print");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train the toy model for each method x seed and write run records");
    train->add_option("--method", ta.methods,
                      "Comma-separated methods: none, cosreg, spectrum-pol, spectrum-exp, flow (= flow-posthoc), "
                      "flow-joint, all");
    train->add_option("--seeds", ta.seeds, "Comma-separated seeds (overrides --seed)");
    train->add_option("--seed", ta.seed, "Single seed");
    train->add_option("--lambda-c", ta.lambda_c, "Cosine regularization constant");
    train->add_option("--lambda-p", ta.lambda_p, "Polynomial spectrum constant");
    train->add_option("--lambda-e", ta.lambda_e, "Exponential spectrum constant");
    train->add_option("--lambda-f", ta.lambda_f, "Weight of the flow NLL in flow-joint mode");
    train->add_option("--flow-step-size", ta.flow_step_size, "Adam step for the flow in flow-joint mode");
    train->add_option("--c1", ta.c1, "Prior scale (default: largest initial singular value)");
    train->add_option("--c2", ta.c2, "Exponential prior rate");
    train->add_option("--gamma", ta.gamma, "Prior decay exponent");
    train->add_option("--epochs", ta.epochs, "Training epochs");
    train->add_option("--dim", ta.dim, "Embedding dimension d");
    train->add_option("--vocab", ta.vocab, "Vocabulary size N");
    train->add_option("--context", ta.context, "Context length L");
    train->add_option("--batch-size", ta.batch, "Minibatch size");
    train->add_option("--step-size", ta.step_size, "Gradient-descent step size");
    train->add_option("--train-seqs", ta.train_seqs, "Training windows");
    train->add_option("--eval-seqs", ta.eval_seqs, "Held-out windows");
    train->add_option("--data-seed", ta.data_seed, "Seed of the synthetic Markov data");
    train->add_option("--out", ta.out, "Output directory for run records");
    train->add_flag("--quiet", ta.quiet, "Do not print per-run summaries");

    FlowFitArgs fa;
    auto* flowfit = app.add_subcommand("flow-fit", "Fit a flow to embeddings and report isotropy before/after");
    flowfit->add_option("file", fa.input, "ISOEMB file of contextual vectors")->required();
    flowfit->add_option("--steps", fa.steps, "Gradient steps");
    flowfit->add_option("--step-size", fa.step_size, "Gradient-descent step size");
    flowfit->add_option("--batch-size", fa.batch, "Rows per step (0 = all)");
    flowfit->add_option("--layers", fa.layers, "Coupling layers");
    flowfit->add_option("--seed", fa.seed, "Initialization seed");
    flowfit->add_option("--out", fa.out, "Output prefix: writes <out>.isoemb and <out>.isoflow");

    std::string report_dir, csv_path;
    bool no_timing = false;
    auto* report = app.add_subcommand("report", "Aggregate run records into mean/std tables with significance");
    report->add_option("dir", report_dir, "Directory of *.run files")->required();
    report->add_option("--csv", csv_path, "CSV output path (default <dir>/report.csv)");
    report->add_flag("--no-timing", no_timing, "Omit the wall-clock column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*analyze) return cmd_analyze(analyze_path, machine, top);
        if (*train) return cmd_train(ta);
        if (*flowfit) return cmd_flow_fit(fa);
        if (*report) return cmd_report(report_dir, csv_path, no_timing);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}
