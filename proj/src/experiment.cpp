#include "isocal/experiment.hpp"

#include <chrono>
#include <string>

#include "isocal/errors.hpp"
#include "isocal/isotropy.hpp"
#include "isocal/svd.hpp"
#include "isocal/text_format.hpp"

namespace isocal {

namespace {

// Keep run-record key/value pairs in one place so every method writes the same layout.
void put(RunRecord& r, std::string key, double v) { r.extra.emplace_back(std::move(key), format_exact(v)); }
void put(RunRecord& r, std::string key, std::uint64_t v) { r.extra.emplace_back(std::move(key), std::to_string(v)); }
void put(RunRecord& r, std::string key, std::string v) { r.extra.emplace_back(std::move(key), std::move(v)); }

Batch head(const Batch& b, std::size_t n) {
    n = std::min(n, b.size());
    Batch out{b.context_len, {}, {}};
    out.contexts.assign(b.contexts.begin(), b.contexts.begin() + static_cast<std::ptrdiff_t>(n * b.context_len));
    out.targets.assign(b.targets.begin(), b.targets.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

}  // namespace

Dataset make_dataset(const ExperimentConfig& cfg) {
    Rng rng(cfg.data_seed);
    MarkovData md = gen_markov_data(cfg.model.vocab_size, cfg.model.context_len,
                                    cfg.train_sequences + cfg.eval_sequences, rng, cfg.markov);
    Dataset ds;
    ds.train = head(md.sequences, cfg.train_sequences);
    ds.eval.context_len = cfg.model.context_len;
    const std::size_t L = cfg.model.context_len;
    ds.eval.contexts.assign(md.sequences.contexts.begin() + static_cast<std::ptrdiff_t>(cfg.train_sequences * L),
                            md.sequences.contexts.end());
    ds.eval.targets.assign(md.sequences.targets.begin() + static_cast<std::ptrdiff_t>(cfg.train_sequences),
                           md.sequences.targets.end());
    return ds;
}

SpectrumConfig resolve_spectrum(const ExperimentConfig& cfg, Method method, std::uint64_t seed) {
    SpectrumConfig s;
    const bool poly = method == Method::spectrum_pol;
    s.kind = poly ? PriorKind::polynomial : PriorKind::exponential;
    s.lambda = poly ? cfg.lambda_p.value_or(1.0) : cfg.lambda_e.value_or(1.0);
    s.c2 = cfg.c2.value_or(0.5);
    s.gamma = cfg.gamma.value_or(poly ? -0.5 : 1.0);
    if (cfg.c1) {
        s.c1 = *cfg.c1;
    } else {
        ToyModelConfig mc = cfg.model;
        mc.seed = seed;
        Rng rng(seed);  // same stream train() uses to initialize the model
        const ToyModel initial = make_toy_model(mc, rng);
        s.c1 = svd(initial.output).singular_values.front();
    }
    s.validate();
    return s;
}

Calibration calibration_for(const ExperimentConfig& cfg, Method method, std::uint64_t seed) {
    switch (method) {
        case Method::none:
        case Method::flow_posthoc:
            return Calibration::none();
        case Method::cosreg:
            return Calibration::cos(cfg.cosreg);
        case Method::spectrum_pol:
        case Method::spectrum_exp:
            return Calibration::spec(resolve_spectrum(cfg, method, seed));
        case Method::flow_joint:
            return Calibration::flow(cfg.lambda_f, cfg.flow_step_size);
    }
    return Calibration::none();
}

Matrix contextual_vectors(const ToyModel& model, const Batch& data, std::size_t max_rows) {
    return forward(model, head(data, max_rows)).h;
}

MethodRun run_method(const ExperimentConfig& cfg, Method method, std::uint64_t seed, const Dataset& data) {
    ToyModelConfig mc = cfg.model;
    mc.seed = seed;
    const Calibration calib = calibration_for(cfg, method, seed);

    MethodRun out;
    TrainOptions topts;
    topts.flow = cfg.flow;
    out.training = train(mc, calib, data, topts);
    const TrainingRun& tr = out.training;
    const EpochRecord& last = tr.epochs.back();

    double seconds = 0.0;
    std::size_t skipped = 0;
    for (const auto& e : tr.epochs) {
        seconds += e.seconds;
        skipped += e.skipped_steps;
    }

    RunRecord& r = out.record;
    r.method = method;
    r.seed = seed;
    r.accuracy = last.accuracy;
    r.perplexity = last.perplexity;
    r.i1 = last.i1;
    r.i2 = last.i2;
    if (tr.constant_prediction) r.degenerate.insert("accuracy");

    if (method == Method::flow_posthoc || method == Method::flow_joint) {
        const Matrix h_eval = contextual_vectors(tr.model, data.eval, data.eval.size());
        if (method == Method::flow_posthoc) {
            const auto t0 = std::chrono::steady_clock::now();
            const Matrix h_fit = contextual_vectors(tr.model, data.train, cfg.posthoc_fit_rows);
            Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
            FlowModel init = make_flow(mc.dim, rng, cfg.flow);
            FlowFitResult fit = flow_fit(std::move(init), h_fit, cfg.posthoc_fit, rng);
            // The post-hoc fit is part of the method's cost; spread it over the epochs.
            seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            put(r, "flow_nll_initial", fit.curve.front());
            put(r, "flow_nll_final", flow_nll(fit.model, h_fit));
            out.flow = std::move(fit.model);
        } else {
            out.flow = *tr.flow;
            put(r, "flow_nll_final", flow_nll(*out.flow, h_eval));
        }
        out.calibrated = flow_calibrate(*out.flow, h_eval);
        const IsotropyReport iz = isotropy(out.calibrated);
        const IsotropyReport ih = isotropy(h_eval);
        r.i1 = iz.i1;
        r.i2 = iz.i2;
        put(r, "i1_h", ih.i1);
        put(r, "i2_h", ih.i2);
    }
    r.seconds_per_epoch = seconds / static_cast<double>(tr.epochs.size());

    put(r, "i1_w", last.i1);
    put(r, "i2_w", last.i2);
    put(r, "mean_cosine_w", mean_pairwise_cosine(tr.model.output));
    put(r, "task_loss", last.task_loss);
    put(r, "reg_loss", last.reg_loss);
    put(r, "skipped_reg_steps", static_cast<std::uint64_t>(skipped));
    put(r, "vocab", static_cast<std::uint64_t>(mc.vocab_size));
    put(r, "dim", static_cast<std::uint64_t>(mc.dim));
    put(r, "context_len", static_cast<std::uint64_t>(mc.context_len));
    put(r, "epochs", static_cast<std::uint64_t>(mc.epochs));
    put(r, "step_size", mc.step_size);
    put(r, "batch_size", static_cast<std::uint64_t>(mc.batch_size));
    put(r, "train_sequences", static_cast<std::uint64_t>(cfg.train_sequences));
    put(r, "eval_sequences", static_cast<std::uint64_t>(cfg.eval_sequences));
    put(r, "data_seed", cfg.data_seed);
    switch (calib.kind) {
        case Calibration::Kind::cosreg:
            put(r, "lambda_c", calib.cosreg.lambda_c);
            break;
        case Calibration::Kind::spectrum:
            put(r, "prior", std::string(calib.spectrum.kind == PriorKind::polynomial ? "polynomial" : "exponential"));
            put(r, "lambda", calib.spectrum.lambda);
            put(r, "c1", calib.spectrum.c1);
            put(r, "c2", calib.spectrum.c2);
            put(r, "gamma", calib.spectrum.gamma);
            break;
        case Calibration::Kind::flow_joint:
            put(r, "lambda_f", calib.lambda_f);
            put(r, "flow_step_size", calib.flow_step_size);
            break;
        default:
            break;
    }
    put(r, "rng", std::string(Rng::algorithm));
    return out;
}

}  // namespace isocal
