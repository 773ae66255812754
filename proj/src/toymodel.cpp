#include "isocal/toymodel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "isocal/errors.hpp"
#include "isocal/isotropy.hpp"

namespace isocal {

namespace {

template <class Model, class F>
void for_each_block(Model& m, F&& f) {
    f(m.embeddings.data());
    f(m.query.data());
    f(m.key.data());
    f(m.value.data());
    f(m.proj.data());
    if (!m.tied) f(m.output.data());
}

void fill_gaussian(Matrix& m, double std, Rng& rng) {
    for (double& x : m.data()) x = std * rng.gaussian();
}

// Row-wise softmax in place.
void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double& x : r) {
            x = std::exp(x - mx);
            s += x;
        }
        for (double& x : r) x /= s;
    }
}

double log_sum_exp(std::span<const double> r) {
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - mx);
    return mx + std::log(s);
}

// Per-vocabulary projections, shared by every position in the batch.
struct Projected {
    Matrix q, k, v;  // N x d: row t is query/key/value applied to embeddings[t]
};

Projected project(const ToyModel& m) {
    return {matmul_nt(m.embeddings, m.query), matmul_nt(m.embeddings, m.key),
            matmul_nt(m.embeddings, m.value)};
}

struct Trace {
    ForwardResult out;
    Matrix mixed;  // B x d, sum_j a_j v_j
};

Trace run_forward(const ToyModel& m, const Projected& p, const Batch& batch) {
    const std::size_t B = batch.size();
    const std::size_t L = batch.context_len;
    const std::size_t d = m.dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Trace tr{{Matrix(B, d), Matrix(B, m.vocab_size()), Matrix(B, L)}, Matrix(B, d)};
    for (std::size_t b = 0; b < B; ++b) {
        const auto ctx = batch.context(b);
        const auto q = p.q.row(ctx[L - 1]);
        auto a = tr.out.attention.row(b);
        for (std::size_t j = 0; j < L; ++j) a[j] = dot(q, p.k.row(ctx[j])) * inv_sqrt_d;
        const double mx = *std::max_element(a.begin(), a.end());
        double s = 0.0;
        for (double& x : a) {
            x = std::exp(x - mx);
            s += x;
        }
        for (double& x : a) x /= s;

        auto o = tr.mixed.row(b);
        for (std::size_t j = 0; j < L; ++j) {
            const auto v = p.v.row(ctx[j]);
            for (std::size_t c = 0; c < d; ++c) o[c] += a[j] * v[c];
        }
        auto h = tr.out.h.row(b);
        const auto x_last = m.embeddings.row(ctx[L - 1]);
        for (std::size_t c = 0; c < d; ++c) h[c] = x_last[c] + dot(m.proj.row(c), o);
    }
    tr.out.logits = matmul_nt(tr.out.h, m.output);
    return tr;
}

double task_nll(const Matrix& logits, std::span<const std::uint32_t> targets) {
    double acc = 0.0;
    for (std::size_t b = 0; b < logits.rows(); ++b)
        acc += log_sum_exp(logits.row(b)) - logits(b, targets[b]);
    return acc / static_cast<double>(logits.rows());
}

// Calibration penalty on W plus its gradient (grad may be null).
double output_penalty(const Matrix& w, const Calibration& calib, Matrix* grad, bool& skipped) {
    skipped = false;
    switch (calib.kind) {
        case Calibration::Kind::cosreg: {
            if (calib.cosreg.lambda_c == 0.0) return 0.0;
            if (grad) *grad += cosreg_grad(w, calib.cosreg);
            return cosreg_loss(w, calib.cosreg);
        }
        case Calibration::Kind::spectrum: {
            if (calib.spectrum.lambda == 0.0) return 0.0;
            const double loss = spectrum_loss(w, calib.spectrum);
            if (grad) {
                try {
                    *grad += spectrum_grad_w(w, calib.spectrum);
                } catch (const DegenerateSpectrumError&) {
                    skipped = true;
                }
            }
            return loss;
        }
        default:
            return 0.0;
    }
}

void require_flow(const Calibration& calib, const FlowModel* flow, std::size_t dim) {
    if (calib.kind != Calibration::Kind::flow_joint) return;
    if (!flow) throw ContractError("flow_joint calibration needs a flow model");
    if (flow->dim != dim) throw ContractError("flow_joint: flow dimension does not match model");
}

}  // namespace

void ToyModelConfig::validate() const {
    if (vocab_size < 2) throw ContractError("toy model: vocab_size must be >= 2");
    if (dim < 2) throw ContractError("toy model: dim must be >= 2");
    if (context_len < 2) throw ContractError("toy model: context_len must be >= 2");
    if (batch_size < 1) throw ContractError("toy model: batch_size must be >= 1");
    if (!(step_size > 0.0)) throw ContractError("toy model: step_size must be positive");
    if (!(init_std >= 0.0)) throw ContractError("toy model: init_std must be nonnegative");
}

std::size_t ToyModel::parameter_count() const {
    std::size_t n = 0;
    for_each_block(*this, [&](auto blk) { n += blk.size(); });
    return n;
}

std::vector<double> ToyModel::parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for_each_block(*this, [&](auto blk) { flat.insert(flat.end(), blk.begin(), blk.end()); });
    return flat;
}

void ToyModel::set_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ContractError("ToyModel: parameter count mismatch");
    std::size_t pos = 0;
    for_each_block(*this, [&](std::span<double> blk) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), blk.size(), blk.begin());
        pos += blk.size();
    });
    if (tied) output = embeddings;
}

ToyModel make_toy_model(const ToyModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = cfg.vocab_size;
    const std::size_t d = cfg.dim;
    ToyModel m{Matrix(n, d), Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(n, d),
               cfg.tie_output};
    fill_gaussian(m.embeddings, cfg.init_std, rng);
    fill_gaussian(m.query, cfg.init_std, rng);
    fill_gaussian(m.key, cfg.init_std, rng);
    fill_gaussian(m.value, cfg.init_std, rng);
    fill_gaussian(m.proj, cfg.init_std, rng);
    if (m.tied)
        m.output = m.embeddings;
    else
        fill_gaussian(m.output, cfg.init_std, rng);
    return m;
}

ToyModel zero_like(const ToyModel& m) {
    return {Matrix(m.embeddings.rows(), m.embeddings.cols()), Matrix(m.query.rows(), m.query.cols()),
            Matrix(m.key.rows(), m.key.cols()),               Matrix(m.value.rows(), m.value.cols()),
            Matrix(m.proj.rows(), m.proj.cols()),             Matrix(m.output.rows(), m.output.cols()),
            m.tied};
}

void Batch::validate(std::size_t vocab_size) const {
    if (context_len == 0 || contexts.size() != targets.size() * context_len)
        throw ContractError("batch: contexts do not match targets x context_len");
    for (auto t : contexts)
        if (t >= vocab_size) throw ContractError("batch: token index out of range");
    for (auto t : targets)
        if (t >= vocab_size) throw ContractError("batch: target index out of range");
}

MarkovData gen_markov_data(std::size_t vocab_size, std::size_t context_len, std::size_t num_sequences,
                           Rng& rng, const MarkovOptions& options) {
    if (vocab_size < 2) throw ContractError("gen_markov_data: vocab_size must be >= 2");
    if (context_len < 1) throw ContractError("gen_markov_data: context_len must be >= 1");
    const std::size_t n = vocab_size;

    MarkovData data{Matrix(n, n), Batch{context_len, {}, {}}};
    switch (options.kind) {
        case ChainKind::identity:
            data.transition = Matrix::identity(n);
            break;
        case ChainKind::uniform:
            data.transition = Matrix(n, n, 1.0 / static_cast<double>(n));
            break;
        case ChainKind::random:
            for (double& x : data.transition.data()) x = options.concentration * rng.gaussian();
            softmax_rows(data.transition);
            break;
    }

    auto step = [&](std::uint32_t from) {
        const auto row = data.transition.row(from);
        const double u = rng.uniform();
        double c = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            c += row[j];
            if (u < c) return static_cast<std::uint32_t>(j);
        }
        // Rounding left u above the cumulative sum: take the last nonzero entry.
        for (std::size_t j = n; j-- > 0;)
            if (row[j] > 0.0) return static_cast<std::uint32_t>(j);
        return from;
    };

    data.sequences.contexts.reserve(num_sequences * context_len);
    data.sequences.targets.reserve(num_sequences);
    for (std::size_t s = 0; s < num_sequences; ++s) {
        auto tok = static_cast<std::uint32_t>(rng.below(n));
        for (std::size_t j = 0; j < context_len; ++j) {
            data.sequences.contexts.push_back(tok);
            tok = step(tok);
        }
        data.sequences.targets.push_back(tok);
    }
    return data;
}

std::vector<Batch> make_batches(const Batch& all, std::size_t batch_size) {
    if (batch_size == 0) throw ContractError("make_batches: batch_size must be positive");
    std::vector<Batch> out;
    const std::size_t L = all.context_len;
    for (std::size_t start = 0; start < all.size(); start += batch_size) {
        const std::size_t end = std::min(all.size(), start + batch_size);
        Batch b{L, {}, {}};
        b.contexts.assign(all.contexts.begin() + static_cast<std::ptrdiff_t>(start * L),
                          all.contexts.begin() + static_cast<std::ptrdiff_t>(end * L));
        b.targets.assign(all.targets.begin() + static_cast<std::ptrdiff_t>(start),
                         all.targets.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(b));
    }
    return out;
}

ForwardResult forward(const ToyModel& model, const Batch& batch) {
    batch.validate(model.vocab_size());
    return run_forward(model, project(model), batch).out;
}

double nll_loss(const Matrix& logits, std::span<const std::uint32_t> targets) {
    if (logits.rows() != targets.size() || logits.rows() == 0)
        throw ContractError("nll_loss: logits rows must match targets");
    for (auto t : targets)
        if (t >= logits.cols()) throw ContractError("nll_loss: target out of range");
    return task_nll(logits, targets);
}

LossGrad loss_and_grad(const ToyModel& model, const Batch& batch, const Calibration& calib,
                       const FlowModel* flow) {
    batch.validate(model.vocab_size());
    require_flow(calib, flow, model.dim());
    const std::size_t B = batch.size();
    const std::size_t L = batch.context_len;
    const std::size_t d = model.dim();
    const std::size_t n = model.vocab_size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    const Projected p = project(model);
    const Trace tr = run_forward(model, p, batch);
    const Matrix& H = tr.out.h;

    LossGrad out{{}, zero_like(model), {}};
    out.metrics.task_loss = task_nll(tr.out.logits, batch.targets);

    // d loss / d logits = (softmax - onehot) / B
    Matrix glogits = tr.out.logits;
    softmax_rows(glogits);
    for (std::size_t b = 0; b < B; ++b) glogits(b, batch.targets[b]) -= 1.0;
    glogits *= 1.0 / static_cast<double>(B);

    Matrix gW = matmul_tn(glogits, H);
    Matrix gH = matmul(glogits, model.output);

    bool skipped = false;
    out.metrics.reg_loss = output_penalty(model.output, calib, &gW, skipped);
    out.metrics.reg_skipped = skipped;

    if (calib.kind == Calibration::Kind::flow_joint && calib.lambda_f != 0.0) {
        FlowNllGrad fg = flow_nll_grad(*flow, H);
        out.metrics.reg_loss = calib.lambda_f * fg.nll;
        for (double& g : fg.params) g *= calib.lambda_f;
        out.flow_grad = std::move(fg.params);
        if (calib.flow_input_grad) {
            fg.inputs *= calib.lambda_f;
            gH += fg.inputs;
        }
    } else if (calib.kind == Calibration::Kind::flow_joint) {
        out.flow_grad.assign(flow->parameter_count(), 0.0);
    }

    // Backprop through attention into per-vocabulary projection gradients.
    Matrix gQ(n, d), gK(n, d), gV(n, d);
    Matrix& gE = out.grad.embeddings;
    std::vector<double> go(d), ga(L);
    for (std::size_t b = 0; b < B; ++b) {
        const auto ctx = batch.context(b);
        const auto gh = gH.row(b);
        const auto o = tr.mixed.row(b);
        const auto a = tr.out.attention.row(b);
        const std::uint32_t last = ctx[L - 1];

        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) out.grad.proj(r, c) += gh[r] * o[c];
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < d; ++r) s += model.proj(r, c) * gh[r];
            go[c] = s;
        }
        auto ge_last = gE.row(last);
        for (std::size_t c = 0; c < d; ++c) ge_last[c] += gh[c];

        double weighted = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            ga[j] = dot(go, p.v.row(ctx[j]));
            weighted += a[j] * ga[j];
            auto gv = gV.row(ctx[j]);
            for (std::size_t c = 0; c < d; ++c) gv[c] += a[j] * go[c];
        }
        const auto q = p.q.row(last);
        auto gq = gQ.row(last);
        for (std::size_t j = 0; j < L; ++j) {
            const double gs = a[j] * (ga[j] - weighted) * inv_sqrt_d;
            if (gs == 0.0) continue;
            const auto k = p.k.row(ctx[j]);
            auto gk = gK.row(ctx[j]);
            for (std::size_t c = 0; c < d; ++c) {
                gq[c] += gs * k[c];
                gk[c] += gs * q[c];
            }
        }
    }
    // Row t of gQ is d loss / d (query embeddings[t]).
    out.grad.query = matmul_tn(gQ, model.embeddings);
    out.grad.key = matmul_tn(gK, model.embeddings);
    out.grad.value = matmul_tn(gV, model.embeddings);
    gE += matmul(gQ, model.query);
    gE += matmul(gK, model.key);
    gE += matmul(gV, model.value);

    if (model.tied) {
        gE += gW;
        out.grad.output = gE;
    } else {
        out.grad.output = std::move(gW);
    }
    return out;
}

double total_loss(const ToyModel& model, const Batch& batch, const Calibration& calib,
                  const FlowModel* flow) {
    batch.validate(model.vocab_size());
    require_flow(calib, flow, model.dim());
    const Trace tr = run_forward(model, project(model), batch);
    double loss = task_nll(tr.out.logits, batch.targets);
    bool skipped = false;
    loss += output_penalty(model.output, calib, nullptr, skipped);
    if (calib.kind == Calibration::Kind::flow_joint && calib.lambda_f != 0.0)
        loss += calib.lambda_f * flow_nll(*flow, tr.out.h);
    return loss;
}

StepMetrics train_step(ToyModel& model, const Batch& batch, const Calibration& calib, double step_size,
                       FlowModel* flow, AdamState* flow_opt) {
    LossGrad lg = loss_and_grad(model, batch, calib, flow);
    auto params = model.parameters();
    const auto grads = lg.grad.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step_size * grads[i];
    model.set_parameters(params);
    if (calib.kind == Calibration::Kind::flow_joint) {
        auto fp = flow->parameters();
        if (flow_opt)
            flow_opt->step(fp, lg.flow_grad, calib.flow_step_size);
        else
            for (std::size_t i = 0; i < fp.size(); ++i) fp[i] -= calib.flow_step_size * lg.flow_grad[i];
        flow->set_parameters(fp);
    }
    return lg.metrics;
}

EvalResult evaluate(const ToyModel& model, const Batch& data) {
    if (data.size() == 0) throw ContractError("evaluate: empty data");
    const ForwardResult fr = forward(model, data);
    EvalResult r;
    std::size_t correct = 0;
    std::size_t first_pred = 0;
    bool constant = true;
    for (std::size_t b = 0; b < data.size(); ++b) {
        const auto row = fr.logits.row(b);
        const std::size_t pred =
            static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (b == 0)
            first_pred = pred;
        else if (pred != first_pred)
            constant = false;
        if (pred == data.targets[b]) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.nll = task_nll(fr.logits, data.targets);
    r.perplexity = std::exp(r.nll);
    r.constant_prediction = constant && data.size() > 1;
    return r;
}

TrainingRun train(const ToyModelConfig& cfg, const Calibration& calib, const Dataset& dataset,
                  const TrainOptions& options) {
    cfg.validate();
    if (dataset.train.size() == 0 || dataset.eval.size() == 0)
        throw ContractError("train: dataset must have train and eval windows");
    dataset.train.validate(cfg.vocab_size);
    dataset.eval.validate(cfg.vocab_size);
    if (dataset.train.context_len != cfg.context_len)
        throw ContractError("train: dataset context length differs from config");

    Rng rng(cfg.seed);
    TrainingRun run;
    run.seed = cfg.seed;
    run.config = cfg;
    run.calibration = calib;
    run.model = make_toy_model(cfg, rng);
    if (calib.kind == Calibration::Kind::flow_joint) run.flow = make_flow(cfg.dim, rng, options.flow);
    AdamState flow_opt;

    const std::size_t L = cfg.context_len;
    std::vector<std::size_t> order(dataset.train.size());
    std::iota(order.begin(), order.end(), 0);
    Batch shuffled{L, std::vector<std::uint32_t>(dataset.train.contexts.size()),
                   std::vector<std::uint32_t>(dataset.train.size())};

    using clock = std::chrono::steady_clock;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = clock::now();
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto src = dataset.train.context(order[i]);
            std::copy(src.begin(), src.end(), shuffled.contexts.begin() + static_cast<std::ptrdiff_t>(i * L));
            shuffled.targets[i] = dataset.train.targets[order[i]];
        }

        EpochRecord rec;
        std::size_t steps = 0;
        for (const Batch& b : make_batches(shuffled, cfg.batch_size)) {
            const StepMetrics m =
                train_step(run.model, b, calib, cfg.step_size, run.flow ? &*run.flow : nullptr, &flow_opt);
            if (!std::isfinite(m.task_loss) || !std::isfinite(m.reg_loss))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(steps) + " (task " + std::to_string(m.task_loss) +
                                     ", regularizer " + std::to_string(m.reg_loss) + ")");
            rec.task_loss += m.task_loss;
            rec.reg_loss += m.reg_loss;
            if (m.reg_skipped) ++rec.skipped_steps;
            ++steps;
        }
        rec.task_loss /= static_cast<double>(steps);
        rec.reg_loss /= static_cast<double>(steps);
        rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();

        const EvalResult ev = evaluate(run.model, dataset.eval);
        rec.accuracy = ev.accuracy;
        rec.perplexity = ev.perplexity;
        run.constant_prediction = ev.constant_prediction;
        const IsotropyReport iso = isotropy(run.model.output);
        rec.i1 = iso.i1;
        rec.i2 = iso.i2;
        run.epochs.push_back(rec);
    }
    return run;
}

}  // namespace isocal
