#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isocal/calibration.hpp"
#include "isocal/flow.hpp"
#include "isocal/matrix.hpp"
#include "isocal/rng.hpp"

namespace isocal {

struct ToyModelConfig {
    std::size_t vocab_size = 64;
    std::size_t dim = 32;
    std::size_t context_len = 16;
    std::uint64_t seed = 1;
    std::size_t epochs = 10;
    double step_size = 0.5;
    std::size_t batch_size = 32;
    bool tie_output = false;
    double init_std = 0.02;

    void validate() const;
};

/// Single-head attention language model over a fixed context window.
///
/// For context tokens t_1..t_L with x_j = embeddings[t_j]:
///   q = query x_L, k_j = key x_j, v_j = value x_j,
///   a = softmax(q . k_j / sqrt(d)),
///   h = x_L + proj sum_j a_j v_j,
///   logits = output h.
/// No positional encoding is used. With tie_output the output matrix is the
/// embedding matrix.
struct ToyModel {
    Matrix embeddings;  // N x d
    Matrix query;       // d x d
    Matrix key;
    Matrix value;
    Matrix proj;
    Matrix output;      // N x d, the calibration target
    bool tied = false;

    std::size_t vocab_size() const noexcept { return output.rows(); }
    std::size_t dim() const noexcept { return output.cols(); }

    std::size_t parameter_count() const;
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);
};

ToyModel make_toy_model(const ToyModelConfig& cfg, Rng& rng);
ToyModel zero_like(const ToyModel& m);

/// Token windows. Row b of `contexts` (context_len entries) predicts targets[b].
struct Batch {
    std::size_t context_len = 0;
    std::vector<std::uint32_t> contexts;
    std::vector<std::uint32_t> targets;

    std::size_t size() const noexcept { return targets.size(); }
    std::span<const std::uint32_t> context(std::size_t b) const {
        return {contexts.data() + b * context_len, context_len};
    }
    void validate(std::size_t vocab_size) const;
};

enum class ChainKind { random, identity, uniform };

struct MarkovOptions {
    ChainKind kind = ChainKind::random;
    // Row j of the transition matrix is softmax(concentration * g_j) with g_j
    // standard Gaussian; larger values give more predictable chains.
    double concentration = 2.0;
};

struct MarkovData {
    Matrix transition;  // N x N, row-stochastic
    Batch sequences;
};

/// Samples a transition matrix, then num_sequences windows of L + 1 tokens
/// (first token uniform). The last token of each window is the target.
MarkovData gen_markov_data(std::size_t vocab_size, std::size_t context_len, std::size_t num_sequences,
                           Rng& rng, const MarkovOptions& options = {});

/// Consecutive slices of `all` holding batch_size windows (the last may be shorter).
std::vector<Batch> make_batches(const Batch& all, std::size_t batch_size);

struct ForwardResult {
    Matrix h;          // B x d contextual vectors
    Matrix logits;     // B x N
    Matrix attention;  // B x L
};

ForwardResult forward(const ToyModel& model, const Batch& batch);

/// Mean over rows of -log softmax(logits)[target].
double nll_loss(const Matrix& logits, std::span<const std::uint32_t> targets);

/// Regularization applied during training.
struct Calibration {
    enum class Kind { none, cosreg, spectrum, flow_joint };
    Kind kind = Kind::none;
    CosRegConfig cosreg;
    SpectrumConfig spectrum;
    double lambda_f = 1.0;
    // Step size for the flow parameters in joint mode (Adam when train_step
    // is given an AdamState, plain gradient descent otherwise).
    double flow_step_size = 1e-2;
    // When false the flow term does not backpropagate into the model, so the
    // flow tracks the contextual vectors without reshaping them. With the
    // gradient on, the encoder can shrink h to drive the flow NLL down and the
    // task loss stops improving.
    bool flow_input_grad = false;

    static Calibration none() { return {}; }
    static Calibration cos(CosRegConfig c) { return {Kind::cosreg, c, {}, 1.0}; }
    static Calibration spec(SpectrumConfig s) { return {Kind::spectrum, {}, s, 1.0}; }
    static Calibration flow(double lambda_f, double flow_step_size = 1e-2) {
        return {Kind::flow_joint, {}, {}, lambda_f, flow_step_size, false};
    }
};

struct StepMetrics {
    double task_loss = 0.0;
    double reg_loss = 0.0;  // penalty on W, or lambda_f * flow NLL on H
    bool reg_skipped = false;

    double total() const noexcept { return task_loss + reg_loss; }
};

struct LossGrad {
    StepMetrics metrics;
    ToyModel grad;                   // same layout as the model
    std::vector<double> flow_grad;   // empty unless flow_joint
};

/// Total loss (task NLL + calibration term) and its gradient with respect to
/// every model parameter and, in flow_joint mode, the flow parameters.
/// A degenerate spectrum drops the regularizer gradient and sets reg_skipped.
LossGrad loss_and_grad(const ToyModel& model, const Batch& batch, const Calibration& calib,
                       const FlowModel* flow = nullptr);

/// Loss only (no gradients); for checks.
double total_loss(const ToyModel& model, const Batch& batch, const Calibration& calib,
                  const FlowModel* flow = nullptr);

/// One plain gradient-descent update of the model. In flow_joint mode the
/// flow is also updated with calib.flow_step_size, through `flow_opt` if given.
StepMetrics train_step(ToyModel& model, const Batch& batch, const Calibration& calib, double step_size,
                       FlowModel* flow = nullptr, AdamState* flow_opt = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    double perplexity = 0.0;
    double nll = 0.0;
    bool constant_prediction = false;  // every example got the same argmax
};

/// Argmax accuracy (ties go to the lowest index) and exp(mean NLL).
EvalResult evaluate(const ToyModel& model, const Batch& data);

struct EpochRecord {
    double task_loss = 0.0;
    double reg_loss = 0.0;
    double accuracy = 0.0;
    double perplexity = 0.0;
    double i1 = 0.0;
    double i2 = 0.0;
    double seconds = 0.0;
    std::size_t skipped_steps = 0;
};

struct Dataset {
    Batch train;
    Batch eval;
};

struct TrainingRun {
    std::uint64_t seed = 0;
    ToyModelConfig config;
    Calibration calibration;
    std::vector<EpochRecord> epochs;
    ToyModel model;
    std::optional<FlowModel> flow;  // flow_joint only
    bool constant_prediction = false;
};

struct TrainOptions {
    FlowConfig flow;  // architecture of the jointly trained flow
};

/// epochs x (shuffled) minibatch train_step sweeps, evaluating on
/// dataset.eval and measuring isotropy of the output matrix after each epoch.
/// Throws NumericalError if a loss becomes non-finite.
TrainingRun train(const ToyModelConfig& cfg, const Calibration& calib, const Dataset& dataset,
                  const TrainOptions& options = {});

}  // namespace isocal
