#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "isocal/errors.hpp"
#include "isocal/finite_diff.hpp"
#include "isocal/svd.hpp"
#include "isocal/toymodel.hpp"
#include "toy_helpers.hpp"

using namespace isocal;

TEST_SUITE("toymodel") {

TEST_CASE("identity chain gives constant sequences") {
    Rng rng(1);
    const MarkovData d = gen_markov_data(6, 4, 50, rng, {ChainKind::identity, 2.0});
    for (std::size_t b = 0; b < d.sequences.size(); ++b) {
        const auto ctx = d.sequences.context(b);
        for (auto t : ctx) CHECK(t == ctx[0]);
        CHECK(d.sequences.targets[b] == ctx[0]);
    }
}

TEST_CASE("random chains are row-stochastic and reproducible") {
    Rng a(2), b(2);
    const MarkovData x = gen_markov_data(8, 5, 40, a);
    const MarkovData y = gen_markov_data(8, 5, 40, b);
    CHECK(x.sequences.contexts == y.sequences.contexts);
    CHECK(x.sequences.targets == y.sequences.targets);
    CHECK(x.transition == y.transition);
    for (std::size_t i = 0; i < 8; ++i) {
        double s = 0.0;
        for (double p : x.transition.row(i)) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("batches partition the windows in order") {
    Rng rng(3);
    const MarkovData d = gen_markov_data(5, 3, 10, rng);
    const auto bs = make_batches(d.sequences, 4);
    REQUIRE(bs.size() == 3);
    CHECK(bs[2].size() == 2);
    CHECK(bs[1].targets[0] == d.sequences.targets[4]);
    CHECK_THROWS_AS(make_batches(d.sequences, 0), ContractError);
}

TEST_CASE("zero model gives zero contextual vectors and uniform logits") {
    const ToyModel m = toy::model(5, 4, 0.0, 1);
    Rng rng(4);
    const Batch b = gen_markov_data(5, 3, 7, rng).sequences;
    const ForwardResult fr = forward(m, b);
    CHECK(fr.h.max_abs() == 0.0);
    CHECK(fr.logits.max_abs() == 0.0);
    CHECK(nll_loss(fr.logits, b.targets) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
}

TEST_CASE("hand trace of one attention step") {
    ToyModel m = toy::model(3, 2, 0.0, 1);
    m.embeddings = Matrix{{1, 0}, {0, 1}, {1, 1}};
    m.query = Matrix::identity(2);
    m.key = Matrix::identity(2);
    m.value = Matrix{{1, 2}, {0, 1}};
    m.proj = Matrix{{0.5, 0}, {0, 2}};
    m.output = Matrix{{1, 0}, {0, 1}, {1, -1}};
    const Batch b{2, {0, 2}, {1}};

    // q = x_2 = (1,1); k_1 = (1,0), k_2 = (1,1); v_1 = (1,0), v_2 = (3,1).
    const double s1 = 1.0 / std::sqrt(2.0), s2 = 2.0 / std::sqrt(2.0);
    const double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
    const double a2 = 1.0 - a1;
    const double o0 = a1 * 1.0 + a2 * 3.0, o1 = a2 * 1.0;
    const double h0 = 1.0 + 0.5 * o0, h1 = 1.0 + 2.0 * o1;

    const ForwardResult fr = forward(m, b);
    CHECK(fr.attention(0, 0) == doctest::Approx(a1).epsilon(1e-14));
    CHECK(fr.attention(0, 1) == doctest::Approx(a2).epsilon(1e-14));
    CHECK(fr.h(0, 0) == doctest::Approx(h0).epsilon(1e-14));
    CHECK(fr.h(0, 1) == doctest::Approx(h1).epsilon(1e-14));
    CHECK(fr.logits(0, 0) == doctest::Approx(h0).epsilon(1e-14));
    CHECK(fr.logits(0, 1) == doctest::Approx(h1).epsilon(1e-14));
    CHECK(fr.logits(0, 2) == doctest::Approx(h0 - h1).epsilon(1e-14));
}

TEST_CASE("attention rows sum to one") {
    const ToyModel m = toy::model(7, 4, 1.0, 5);
    Rng rng(6);
    const Batch b = gen_markov_data(7, 5, 20, rng).sequences;
    const ForwardResult fr = forward(m, b);
    for (std::size_t i = 0; i < b.size(); ++i) {
        double s = 0.0;
        for (double a : fr.attention.row(i)) s += a;
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("cross-entropy on hand cases") {
    const std::vector<std::uint32_t> t0{0};
    CHECK(nll_loss(Matrix{{0, 0}}, t0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double tiny = nll_loss(Matrix{{10, -10}}, t0);
    CHECK(tiny == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
    CHECK(tiny == doctest::Approx(2.06e-9).epsilon(1e-2));
    const Matrix l{{0.3, -1.2, 2.2}, {1.0, 0.0, -4.0}};
    const std::vector<std::uint32_t> t{2, 1};
    Matrix shifted = l;
    for (double& x : shifted.data()) x += 123.0;
    CHECK(std::abs(nll_loss(l, t) - nll_loss(shifted, t)) < 1e-12);
    const std::vector<std::uint32_t> bad{3, 0};
    CHECK_THROWS_AS(nll_loss(l, bad), ContractError);
}

TEST_CASE("total-loss gradient matches finite differences") {
    for (const auto& [name, calib] : toy::gradient_calibrations()) {
        SUBCASE(name.c_str()) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                const auto r = toy::gradient_check(calib, seed, false);
                CHECK(r.model_error <= 1e-5);
                CHECK(r.flow_error <= 1e-5);
            }
        }
    }
}

TEST_CASE("tied output gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        CHECK(toy::gradient_check(Calibration::none(), seed, true).model_error <= 1e-5);
        CHECK(toy::gradient_check(Calibration::cos({1.0}), seed, true).model_error <= 1e-5);
    }
}

TEST_CASE("detached flow term leaves the model gradient equal to the task gradient") {
    Rng rng(7);
    const ToyModel m = toy::model(5, 4, 0.5, 8);
    const Batch b = gen_markov_data(5, 3, 6, rng).sequences;
    const FlowModel f = toy::random_flow(4, 9);
    const LossGrad task = loss_and_grad(m, b, Calibration::none());
    const LossGrad joint = loss_and_grad(m, b, Calibration::flow(1.0), &f);
    CHECK(task.grad.parameters() == joint.grad.parameters());
    CHECK(joint.metrics.reg_loss == doctest::Approx(flow_nll(f, forward(m, b).h)));
}

TEST_CASE("zero-weight cosine penalty leaves training unchanged") {
    ToyModelConfig cfg = toy::small_config();
    const Dataset data = toy::small_dataset(cfg, ChainKind::random);
    const TrainingRun a = train(cfg, Calibration::none(), data);
    const TrainingRun b = train(cfg, Calibration::cos({0.0}), data);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.epochs.back().accuracy == b.epochs.back().accuracy);
}

TEST_CASE("training is reproducible") {
    ToyModelConfig cfg = toy::small_config();
    const Dataset data = toy::small_dataset(cfg, ChainKind::random);
    const TrainingRun a = train(cfg, Calibration::none(), data);
    const TrainingRun b = train(cfg, Calibration::none(), data);
    CHECK(a.model.parameters() == b.model.parameters());
    for (std::size_t e = 0; e < a.epochs.size(); ++e) {
        CHECK(a.epochs[e].task_loss == b.epochs[e].task_loss);
        CHECK(a.epochs[e].i1 == b.epochs[e].i1);
    }
    cfg.seed = 2;
    const TrainingRun c = train(cfg, Calibration::none(), data);
    CHECK(c.model.parameters() != a.model.parameters());
}

TEST_CASE("identity chain is learned") {
    ToyModelConfig cfg;  // N = 64, d = 32, L = 16
    const Dataset data = toy::small_dataset(cfg, ChainKind::identity, 2048, 512);
    const TrainingRun run = train(cfg, Calibration::none(), data);
    CHECK(run.epochs.size() == 10);
    CHECK(run.epochs.back().accuracy >= 0.99);
}

TEST_CASE("uniform chain cannot be predicted above chance") {
    ToyModelConfig cfg = toy::small_config();
    cfg.vocab_size = 64;
    const Dataset data = toy::small_dataset(cfg, ChainKind::uniform, 1024, 4096);
    const TrainingRun run = train(cfg, Calibration::none(), data);
    const double p = 1.0 / 64.0;
    const double sigma = std::sqrt(p * (1 - p) / 4096.0);
    CHECK(run.epochs.back().accuracy <= p + 3 * sigma);
}

TEST_CASE("spectrum calibration raises isotropy of the output matrix") {
    ToyModelConfig cfg = toy::small_config();
    cfg.vocab_size = 16;
    cfg.dim = 8;
    const Dataset data = toy::small_dataset(cfg, ChainKind::random);
    const TrainingRun base = train(cfg, Calibration::none(), data);
    SpectrumConfig s;
    s.kind = PriorKind::polynomial;
    s.gamma = -0.5;
    Rng init(cfg.seed);
    s.c1 = svd(make_toy_model(cfg, init).output).singular_values[0];
    const TrainingRun spec = train(cfg, Calibration::spec(s), data);
    CHECK(spec.epochs.back().i1 >= base.epochs.back().i1);
    CHECK(spec.epochs.back().i2 <= base.epochs.back().i2);
}

TEST_CASE("joint flow training keeps a flow and stays finite") {
    ToyModelConfig cfg = toy::small_config();
    const Dataset data = toy::small_dataset(cfg, ChainKind::random);
    const TrainingRun run = train(cfg, Calibration::flow(1.0), data);
    REQUIRE(run.flow.has_value());
    CHECK(run.flow->dim == cfg.dim);
    for (const auto& e : run.epochs) CHECK(std::isfinite(e.reg_loss));
}

TEST_CASE("uniform-logit model predicts token 0 everywhere") {
    Rng rng(10);
    const Batch eval = gen_markov_data(64, 4, 20000, rng, {ChainKind::uniform, 2.0}).sequences;
    const ToyModel m = toy::model(64, 4, 0.0, 1);
    const EvalResult r = evaluate(m, eval);
    const double p = 1.0 / 64.0;
    CHECK(std::abs(r.accuracy - p) <= 3 * std::sqrt(p * (1 - p) / 20000.0));
    CHECK(r.constant_prediction);
    CHECK(r.perplexity == doctest::Approx(64.0).epsilon(1e-12));
}

TEST_CASE("perfect memorization of the identity chain") {
    Rng rng(11);
    const Batch eval = gen_markov_data(6, 3, 100, rng, {ChainKind::identity, 2.0}).sequences;
    ToyModel m = toy::model(6, 6, 0.0, 1);
    m.embeddings = Matrix::identity(6);
    m.output = Matrix::identity(6) * 10.0;
    const EvalResult r = evaluate(m, eval);
    CHECK(r.accuracy == 1.0);
    CHECK(std::abs(r.perplexity - std::exp(r.nll)) < 1e-12);
}

TEST_CASE("configuration and data validation") {
    ToyModelConfig bad = toy::small_config();
    bad.step_size = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    const ToyModel m = toy::model(4, 3, 0.1, 1);
    const Batch out_of_range{2, {0, 7}, {1}};
    CHECK_THROWS_AS(forward(m, out_of_range), ContractError);
    Rng rng(12);
    const Batch ok = gen_markov_data(4, 2, 3, rng).sequences;
    CHECK_THROWS_AS(loss_and_grad(m, ok, Calibration::flow(1.0), nullptr), ContractError);
}

}  // TEST_SUITE
