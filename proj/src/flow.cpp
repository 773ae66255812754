#include "isocal/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace isocal {

namespace {

template <class Model, class F>
void for_each_block(Model& model, F&& f) {
    for (auto& layer : model.layers) {
        for (auto* net : {&layer.scale_net, &layer.shift_net}) {
            f(net->w1.data());
            f(std::span(net->b1));
            f(net->w2.data());
            f(std::span(net->b2));
        }
    }
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    Mlp net{Matrix(hidden, in), std::vector<double>(hidden, 0.0), Matrix(out, hidden),
            std::vector<double>(out, 0.0)};
    const double std = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    for (double& x : net.w1.data()) x = std * rng.gaussian();
    return net;
}

// Per-layer, per-sample intermediate values kept for backprop.
struct NetTrace {
    std::vector<double> hidden;
    std::vector<double> out;
};

void mlp_eval(const Mlp& net, std::span<const double> in, NetTrace& tr) {
    const std::size_t hsz = net.b1.size();
    tr.hidden.resize(hsz);
    for (std::size_t a = 0; a < hsz; ++a) tr.hidden[a] = std::tanh(net.b1[a] + dot(net.w1.row(a), in));
    tr.out.resize(net.b2.size());
    for (std::size_t o = 0; o < net.b2.size(); ++o) tr.out[o] = net.b2[o] + dot(net.w2.row(o), tr.hidden);
}

// Accumulates parameter gradients into g (laid out like the net) and adds the
// input gradient into gin.
void mlp_backward(const Mlp& net, std::span<const double> in, const NetTrace& tr,
                  std::span<const double> gout, std::span<double> g, std::span<double> gin) {
    const std::size_t nin = net.w1.cols();
    const std::size_t hsz = net.b1.size();
    const std::size_t nout = net.b2.size();
    double* gw1 = g.data();
    double* gb1 = gw1 + hsz * nin;
    double* gw2 = gb1 + hsz;
    double* gb2 = gw2 + nout * hsz;

    std::vector<double> ghid(hsz, 0.0);
    for (std::size_t o = 0; o < nout; ++o) {
        const double go = gout[o];
        if (go == 0.0) continue;
        gb2[o] += go;
        for (std::size_t a = 0; a < hsz; ++a) {
            gw2[o * hsz + a] += go * tr.hidden[a];
            ghid[a] += go * net.w2(o, a);
        }
    }
    for (std::size_t a = 0; a < hsz; ++a) {
        const double gpre = ghid[a] * (1.0 - tr.hidden[a] * tr.hidden[a]);
        if (gpre == 0.0) continue;
        gb1[a] += gpre;
        for (std::size_t i = 0; i < nin; ++i) {
            gw1[a * nin + i] += gpre * in[i];
            gin[i] += gpre * net.w1(a, i);
        }
    }
}

std::size_t mlp_size(const Mlp& net) {
    return net.w1.size() + net.b1.size() + net.w2.size() + net.b2.size();
}

struct LayerEval {
    std::vector<double> pass_values;
    NetTrace scale;
    NetTrace shift;
    std::vector<double> s;  // clamped log-scales
};

void eval_layer(const CouplingLayer& layer, std::span<const double> x, LayerEval& ev) {
    ev.pass_values.resize(layer.pass.size());
    for (std::size_t i = 0; i < layer.pass.size(); ++i) ev.pass_values[i] = x[layer.pass[i]];
    mlp_eval(layer.scale_net, ev.pass_values, ev.scale);
    mlp_eval(layer.shift_net, ev.pass_values, ev.shift);
    ev.s.resize(layer.transformed.size());
    for (std::size_t j = 0; j < ev.s.size(); ++j)
        ev.s[j] = layer.s_max * std::tanh(ev.scale.out[j] / layer.s_max);
}

void require_dim(const FlowModel& model, std::size_t n, const char* who) {
    if (n != model.dim)
        throw ContractError(std::string(who) + ": expected dimension " + std::to_string(model.dim) +
                            ", got " + std::to_string(n));
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

std::size_t FlowModel::parameter_count() const {
    std::size_t n = 0;
    for_each_block(*this, [&](auto block) { n += block.size(); });
    return n;
}

std::vector<double> FlowModel::parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for_each_block(*this, [&](auto block) { flat.insert(flat.end(), block.begin(), block.end()); });
    return flat;
}

void FlowModel::set_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ContractError("FlowModel: parameter count mismatch");
    std::size_t pos = 0;
    for_each_block(*this, [&](std::span<double> block) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), block.size(), block.begin());
        pos += block.size();
    });
}

FlowModel make_flow(std::size_t dim, Rng& rng, const FlowConfig& cfg) {
    if (dim < 1) throw ContractError("make_flow: dimension must be positive");
    if (!(cfg.s_max > 0.0)) throw ContractError("make_flow: s_max must be positive");
    const std::size_t hidden = cfg.hidden ? cfg.hidden : 2 * dim;
    FlowModel model;
    model.dim = dim;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        CouplingLayer layer;
        layer.s_max = cfg.s_max;
        for (std::size_t i = 0; i < dim; ++i) {
            if (i % 2 == l % 2)
                layer.pass.push_back(i);
            else
                layer.transformed.push_back(i);
        }
        const std::size_t in = layer.pass.size();
        const std::size_t out = layer.transformed.size();
        layer.scale_net = make_mlp(in, hidden, out, rng);
        layer.shift_net = make_mlp(in, hidden, out, rng);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

FlowResult flow_forward(const FlowModel& model, std::span<const double> z) {
    require_dim(model, z.size(), "flow_forward");
    FlowResult r{std::vector<double>(z.begin(), z.end()), 0.0};
    LayerEval ev;
    for (const auto& layer : model.layers) {
        eval_layer(layer, r.value, ev);
        for (std::size_t j = 0; j < layer.transformed.size(); ++j) {
            double& x = r.value[layer.transformed[j]];
            x = x * std::exp(ev.s[j]) + ev.shift.out[j];
            r.log_det += ev.s[j];
        }
    }
    return r;
}

FlowResult flow_inverse(const FlowModel& model, std::span<const double> h) {
    require_dim(model, h.size(), "flow_inverse");
    FlowResult r{std::vector<double>(h.begin(), h.end()), 0.0};
    LayerEval ev;
    for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
        eval_layer(*it, r.value, ev);
        for (std::size_t j = 0; j < it->transformed.size(); ++j) {
            double& x = r.value[it->transformed[j]];
            x = (x - ev.shift.out[j]) * std::exp(-ev.s[j]);
            r.log_det -= ev.s[j];
        }
    }
    return r;
}

double flow_nll(const FlowModel& model, const Matrix& batch) {
    if (batch.rows() == 0) throw ContractError("flow_nll: empty batch");
    require_dim(model, batch.cols(), "flow_nll");
    const double d = static_cast<double>(model.dim);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.rows(); ++i) {
        const FlowResult r = flow_inverse(model, batch.row(i));
        total += d * kHalfLog2Pi + 0.5 * dot(r.value, r.value) - r.log_det;
    }
    return total / static_cast<double>(batch.rows());
}

FlowNllGrad flow_nll_grad(const FlowModel& model, const Matrix& batch) {
    if (batch.rows() == 0) throw ContractError("flow_nll_grad: empty batch");
    require_dim(model, batch.cols(), "flow_nll_grad");
    const std::size_t n_layers = model.layers.size();
    const double d = static_cast<double>(model.dim);
    const double inv_b = 1.0 / static_cast<double>(batch.rows());

    // Offsets of each net's gradient block in the flat parameter vector.
    std::vector<std::size_t> scale_off(n_layers), shift_off(n_layers);
    {
        std::size_t pos = 0;
        for (std::size_t l = 0; l < n_layers; ++l) {
            scale_off[l] = pos;
            pos += mlp_size(model.layers[l].scale_net);
            shift_off[l] = pos;
            pos += mlp_size(model.layers[l].shift_net);
        }
    }

    FlowNllGrad out{0.0, std::vector<double>(model.parameter_count(), 0.0),
                    Matrix(batch.rows(), batch.cols())};
    std::vector<LayerEval> evals(n_layers);
    std::vector<double> gs, gt, gpass;

    for (std::size_t row = 0; row < batch.rows(); ++row) {
        // Inverse pass, layers applied last to first; evals[l] holds layer l's input.
        std::vector<double> x(batch.row(row).begin(), batch.row(row).end());
        double sum_s = 0.0;
        for (std::size_t k = n_layers; k-- > 0;) {
            const auto& layer = model.layers[k];
            eval_layer(layer, x, evals[k]);
            for (std::size_t j = 0; j < layer.transformed.size(); ++j) {
                double& v = x[layer.transformed[j]];
                v = (v - evals[k].shift.out[j]) * std::exp(-evals[k].s[j]);
                sum_s += evals[k].s[j];
            }
        }
        out.nll += d * kHalfLog2Pi + 0.5 * dot(x, x) + sum_s;

        // Backward: per-sample loss is 0.5 |z|^2 + sum s, scaled by 1/B.
        std::vector<double> g(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = inv_b * x[i];
        for (std::size_t k = 0; k < n_layers; ++k) {
            const auto& layer = model.layers[k];
            const auto& ev = evals[k];
            const std::size_t nt = layer.transformed.size();
            gs.assign(nt, 0.0);
            gt.assign(nt, 0.0);
            for (std::size_t j = 0; j < nt; ++j) {
                const std::size_t idx = layer.transformed[j];
                const double out_val = x[idx];  // layer output (z side)
                const double e = std::exp(-ev.s[j]);
                const double gx = g[idx];
                const double ds = -gx * out_val + inv_b;
                const double th = std::tanh(ev.scale.out[j] / layer.s_max);
                gs[j] = ds * (1.0 - th * th);
                gt[j] = -gx * e;
                g[idx] = gx * e;
                // Restore the layer input for the next (earlier-applied) layer.
                x[idx] = out_val / e + ev.shift.out[j];
            }
            gpass.assign(layer.pass.size(), 0.0);
            std::span<double> params(out.params);
            mlp_backward(layer.scale_net, ev.pass_values, ev.scale, gs,
                         params.subspan(scale_off[k], mlp_size(layer.scale_net)), gpass);
            mlp_backward(layer.shift_net, ev.pass_values, ev.shift, gt,
                         params.subspan(shift_off[k], mlp_size(layer.shift_net)), gpass);
            for (std::size_t i = 0; i < layer.pass.size(); ++i) g[layer.pass[i]] += gpass[i];
        }
        std::copy(g.begin(), g.end(), out.inputs.row(row).begin());
    }
    out.nll *= inv_b;
    return out;
}

FlowDivergenceError::FlowDivergenceError(FlowModel last, std::size_t step, double last_nll)
    : NumericalError("flow_fit: NLL became non-finite at step " + std::to_string(step) +
                     " (last finite NLL " + std::to_string(last_nll) + ")"),
      last_(std::move(last)),
      step_(step),
      last_nll_(last_nll) {}

void AdamState::step(std::span<double> params, std::span<const double> grad, double step_size) {
    if (params.size() != grad.size()) throw ContractError("AdamState: gradient size mismatch");
    if (m1_.empty()) {
        m1_.assign(params.size(), 0.0);
        m2_.assign(params.size(), 0.0);
    } else if (m1_.size() != params.size()) {
        throw ContractError("AdamState: parameter count changed");
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    decay1_ *= beta1;
    decay2_ *= beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
        m1_[i] = beta1 * m1_[i] + (1.0 - beta1) * grad[i];
        m2_[i] = beta2 * m2_[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m1_[i] / (1.0 - decay1_);
        const double vhat = m2_[i] / (1.0 - decay2_);
        params[i] -= step_size * mhat / (std::sqrt(vhat) + eps);
    }
}

FlowFitResult flow_fit(FlowModel model, const Matrix& data, const FlowFitOptions& options, Rng& rng) {
    if (data.rows() == 0) throw ContractError("flow_fit: empty data");
    if (!(options.step_size > 0.0)) throw ContractError("flow_fit: step_size must be positive");
    require_dim(model, data.cols(), "flow_fit");

    const bool full = options.batch_size == 0 || options.batch_size >= data.rows();
    std::vector<std::size_t> order(data.rows());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = data.rows();

    auto next_batch = [&]() {
        Matrix b(options.batch_size, data.cols());
        for (std::size_t r = 0; r < options.batch_size; ++r) {
            if (cursor == data.rows()) {
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            auto src = data.row(order[cursor++]);
            std::copy(src.begin(), src.end(), b.row(r).begin());
        }
        return b;
    };

    FlowFitResult result;
    result.curve.reserve(options.steps);
    std::vector<double> params = model.parameters();
    AdamState adam;
    std::vector<double> previous;
    double last_finite = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t step = 0; step < options.steps; ++step) {
        const FlowNllGrad g = full ? flow_nll_grad(model, data) : flow_nll_grad(model, next_batch());
        const bool finite = std::isfinite(g.nll) &&
                            std::all_of(g.params.begin(), g.params.end(), [](double v) { return std::isfinite(v); });
        if (!finite) {
            if (step > 0) model.set_parameters(previous);
            throw FlowDivergenceError(std::move(model), step, last_finite);
        }
        last_finite = g.nll;
        result.curve.push_back(g.nll);
        previous = params;
        if (options.optimizer == FlowOptimizer::plain) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= options.step_size * g.params[i];
        } else {
            adam.step(params, g.params, options.step_size);
        }
        model.set_parameters(params);
    }
    result.model = std::move(model);
    return result;
}

Matrix flow_calibrate(const FlowModel& model, const Matrix& h) {
    require_dim(model, h.cols(), "flow_calibrate");
    Matrix z(h.rows(), h.cols());
    for (std::size_t i = 0; i < h.rows(); ++i) {
        const FlowResult r = flow_inverse(model, h.row(i));
        std::copy(r.value.begin(), r.value.end(), z.row(i).begin());
    }
    return z;
}

}  // namespace isocal
