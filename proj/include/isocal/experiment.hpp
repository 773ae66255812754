#pragma once

#include <cstdint>
#include <optional>

#include "isocal/calibration.hpp"
#include "isocal/flow.hpp"
#include "isocal/matrix.hpp"
#include "isocal/run_record.hpp"
#include "isocal/toymodel.hpp"

namespace isocal {

/// Everything that determines a run besides (method, seed).
struct ExperimentConfig {
    ToyModelConfig model;
    std::size_t train_sequences = 4096;
    std::size_t eval_sequences = 1024;
    std::uint64_t data_seed = 0;
    MarkovOptions markov;

    CosRegConfig cosreg;
    // Unset values use the defaults: lambda 1, c1 = largest singular value
    // of the initial output matrix, c2 = 0.5, gamma -0.5 (polynomial) or 1.0
    // (exponential).
    std::optional<double> lambda_p;
    std::optional<double> lambda_e;
    std::optional<double> c1;
    std::optional<double> c2;
    std::optional<double> gamma;

    double lambda_f = 1.0;
    double flow_step_size = 1e-2;  // Adam step for the jointly trained flow
    FlowConfig flow;
    FlowFitOptions posthoc_fit{400, 1e-2, 256};
    std::size_t posthoc_fit_rows = 2048;
};

/// Training and evaluation windows from one Markov chain seeded by data_seed.
Dataset make_dataset(const ExperimentConfig& cfg);

/// The spectrum prior for `method` (spectrum_pol or spectrum_exp) and seed,
/// with defaults resolved.
SpectrumConfig resolve_spectrum(const ExperimentConfig& cfg, Method method, std::uint64_t seed);

Calibration calibration_for(const ExperimentConfig& cfg, Method method, std::uint64_t seed);

/// Contextual vectors (forward().h) of the first `max_rows` windows of data.
Matrix contextual_vectors(const ToyModel& model, const Batch& data, std::size_t max_rows);

struct MethodRun {
    TrainingRun training;
    RunRecord record;
    std::optional<FlowModel> flow;  // fitted (post-hoc) or jointly trained flow
    Matrix calibrated;              // flow methods: calibrated eval contextual vectors
};

/// Trains one (method, seed) run and summarizes it as a RunRecord. For
/// flow-posthoc the baseline model is trained, then a flow is fitted to its
/// training-set contextual vectors and applied to the evaluation set.
MethodRun run_method(const ExperimentConfig& cfg, Method method, std::uint64_t seed, const Dataset& data);

}  // namespace isocal
