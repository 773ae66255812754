#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "isocal/errors.hpp"
#include "isocal/matrix.hpp"
#include "isocal/rng.hpp"

namespace isocal {

/// One-hidden-layer tanh perceptron: out = w2 tanh(w1 x + b1) + b2.
struct Mlp {
    Matrix w1;               // hidden x in
    std::vector<double> b1;  // hidden
    Matrix w2;               // out x hidden
    std::vector<double> b2;  // out
};

/// Affine coupling step. Coordinates in `pass` go through unchanged; each
/// coordinate in `transformed` becomes x * exp(s) + t, where s and t are
/// computed from the pass-through values. s = s_max * tanh(raw / s_max), so
/// |s| < s_max.
struct CouplingLayer {
    std::vector<std::size_t> pass;
    std::vector<std::size_t> transformed;
    Mlp scale_net;
    Mlp shift_net;
    double s_max = 3.0;
};

/// Stack of coupling layers mapping latent z (standard Gaussian prior) to
/// embedding space: h = f(z).
struct FlowModel {
    std::size_t dim = 0;
    std::vector<CouplingLayer> layers;

    std::size_t parameter_count() const;
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);
};

struct FlowConfig {
    std::size_t num_layers = 4;
    double s_max = 3.0;
    // Hidden width; 0 means 2 * dim.
    std::size_t hidden = 0;
};

/// Layer l passes the even coordinates through when l is even and the odd
/// ones when l is odd. First-layer weights are Gaussian with std
/// 1/sqrt(fan_in); output layers start at zero, so the new flow is the
/// identity map.
FlowModel make_flow(std::size_t dim, Rng& rng, const FlowConfig& cfg = {});

struct FlowResult {
    std::vector<double> value;
    double log_det = 0.0;
};

/// h = f(z), with log |det df/dz|.
FlowResult flow_forward(const FlowModel& model, std::span<const double> z);
/// z = f^{-1}(h), with log |det df^{-1}/dh|.
FlowResult flow_inverse(const FlowModel& model, std::span<const double> h);

/// Mean over rows of -[log N(f^{-1}(h); 0, I) + log |det df^{-1}/dh|].
double flow_nll(const FlowModel& model, const Matrix& batch);

struct FlowNllGrad {
    double nll = 0.0;
    std::vector<double> params;  // same order as FlowModel::parameters()
    Matrix inputs;               // d nll / d batch
};

FlowNllGrad flow_nll_grad(const FlowModel& model, const Matrix& batch);

enum class FlowOptimizer { adam, plain };

/// Adam moment estimates (beta1 0.9, beta2 0.999, eps 1e-8) for one parameter vector.
class AdamState {
public:
    void step(std::span<double> params, std::span<const double> grad, double step_size);

private:
    std::vector<double> m1_, m2_;
    double decay1_ = 1.0, decay2_ = 1.0;
};

struct FlowFitOptions {
    std::size_t steps = 400;
    double step_size = 1e-2;
    // Rows per gradient step; 0 uses the full data every step. Minibatches
    // are drawn by reshuffling the rows with `rng` once per pass.
    std::size_t batch_size = 0;
    // Adam (beta1 0.9, beta2 0.999, eps 1e-8) or fixed-step gradient descent.
    FlowOptimizer optimizer = FlowOptimizer::adam;
};

struct FlowFitResult {
    FlowModel model;
    std::vector<double> curve;  // NLL of the batch used at each step, before the update
};

/// Thrown when the NLL becomes non-finite. Holds the last model whose NLL was finite.
class FlowDivergenceError : public NumericalError {
public:
    FlowDivergenceError(FlowModel last, std::size_t step, double last_nll);
    const FlowModel& last_finite_model() const noexcept { return last_; }
    std::size_t step() const noexcept { return step_; }
    double last_finite_nll() const noexcept { return last_nll_; }

private:
    FlowModel last_;
    std::size_t step_;
    double last_nll_;
};

/// Minimizes flow_nll over `data` with first-order gradient steps.
FlowFitResult flow_fit(FlowModel model, const Matrix& data, const FlowFitOptions& options, Rng& rng);

/// Row-wise f^{-1}.
Matrix flow_calibrate(const FlowModel& model, const Matrix& h);

}  // namespace isocal
