#include "doctest.h"

#include <sstream>

#include "gradient_fixture.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "thzce/training.hpp"

using namespace thzce;
using namespace testutil;

TEST_CASE("weighted loss")
{
    Rng rng(1);
    CMat H = random_cmat(rng, 6, 2);
    ConfigWeightTable t;
    t.middle = {48, 10.0};
    t.weights = {{{48, 10.0}, 1.0}, {{16, 0.0}, 0.25}};
    CHECK(weighted_nmse_loss(H, H, 16, 0.0, t) == 0.0);
    CHECK(weighted_nmse_loss(H, CMat::Zero(6, 2), 48, 10.0, t) == doctest::Approx(1.0));
    CHECK(weighted_nmse_loss(H, CMat::Zero(6, 2), 16, 0.0, t) == doctest::Approx(0.25));
    CHECK(weighted_nmse_loss(H, 0.5 * H, 48, 10.0, t) == doctest::Approx(nmse(H, 0.5 * H).linear));
    CHECK_THROWS_AS(weighted_nmse_loss(H, H, 32, 5.0, t), std::out_of_range);
}

TEST_CASE("configuration weights")
{
    std::map<ConfigKey, double> baseline = {{{48, 10.0}, 0.02}, {{16, 0.0}, 0.04}, {{64, 20.0}, 0.005}};
    ConfigWeightTable t = compute_config_weights(baseline, {48, 10.0});
    CHECK(t.at({48, 10.0}) == 1.0);
    CHECK(t.at({16, 0.0}) == doctest::Approx(0.5));
    CHECK(t.at({64, 20.0}) == doctest::Approx(4.0));
    baseline[{32, 5.0}] = 0.0;
    CHECK_THROWS_AS(compute_config_weights(baseline, {48, 10.0}), std::invalid_argument);
    CHECK_THROWS_AS(compute_config_weights({{{16, 0.0}, 0.1}}, {48, 10.0}), std::invalid_argument);
}

namespace {

double tensor_relative_error(const Tensor &a, const Tensor &b)
{
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

} // namespace

TEST_CASE("analytic gradients match central differences")
{
    for (int depth : {1, 2})
    {
        GradientProblem p(17 + depth, depth);
        const TrainingSample &s = p.samples[0];
        ModelGradient grad = zero_gradient(p.model);
        sample_loss_and_gradient(p.model, p.corpus, s, 1.0, &grad);

        const double h = 1e-6;
        for (int l = 0; l < depth; ++l)
            for (std::size_t t = 0; t < 8; ++t)
            {
                Tensor fd = *grad[l].tensors()[t];
                for (std::size_t i = 0; i < fd.size(); ++i)
                {
                    UnfoldedModel plus = p.model, minus = p.model;
                    (*plus.layers[l].tensors()[t])[i] += h;
                    (*minus.layers[l].tensors()[t])[i] -= h;
                    fd[i] = (sample_loss_and_gradient(plus, p.corpus, s, 1.0, nullptr) -
                             sample_loss_and_gradient(minus, p.corpus, s, 1.0, nullptr)) /
                            (2 * h);
                }
                CAPTURE(depth);
                CAPTURE(l);
                CAPTURE(LayerWeights::kNames[t]);
                CHECK(tensor_relative_error(*grad[l].tensors()[t], fd) <= 1e-4);
            }
    }
}

TEST_CASE("gradient special cases")
{
    GradientProblem p(5, 1, 3);

    SUBCASE("detached estimate has zero gradient")
    {
        p.model.layers[0].conv2_w.data.assign(p.model.layers[0].conv2_w.size(), 0.0);
        p.model.layers[0].conv2_b[0] = -1.0; // gamma = relu(-1) = 0 everywhere
        ModelGradient grad = zero_gradient(p.model);
        sample_loss_and_gradient(p.model, p.corpus, p.samples[0], 1.0, &grad);
        for (Tensor *t : grad[0].tensors())
            for (double v : t->data)
                CHECK(v == 0.0);
    }

    SUBCASE("batch gradient is the mean of sample gradients")
    {
        std::vector<const TrainingSample *> batch;
        for (const auto &s : p.samples)
            batch.push_back(&s);
        ModelGradient total = zero_gradient(p.model);
        const double loss = backward(p.model, p.corpus, batch, p.table, total);

        ModelGradient manual = zero_gradient(p.model);
        double manual_loss = 0.0;
        for (const auto &s : p.samples)
            manual_loss += sample_loss_and_gradient(p.model, p.corpus, s, 1.0, &manual, 1.0 / 3.0) / 3.0;
        CHECK(loss == doctest::Approx(manual_loss).epsilon(1e-14));
        for (std::size_t t = 0; t < 8; ++t)
            CHECK(tensor_relative_error(*total[0].tensors()[t], *manual[0].tensors()[t]) < 1e-12);

        // loss weight scales the gradient
        ModelGradient doubled = zero_gradient(p.model);
        ModelGradient single = zero_gradient(p.model);
        sample_loss_and_gradient(p.model, p.corpus, p.samples[1], 2.0, &doubled);
        sample_loss_and_gradient(p.model, p.corpus, p.samples[1], 1.0, &single);
        for (std::size_t i = 0; i < single[0].conv1_w.size(); ++i)
            CHECK(doubled[0].conv1_w[i] == doctest::Approx(2.0 * single[0].conv1_w[i]));
    }

    SUBCASE("loss is non-negative and matches evaluation")
    {
        Evaluation ev = evaluate(p.model, p.corpus, p.samples, p.table);
        CHECK(ev.loss >= 0.0);
        CHECK(ev.diverged == 0);
        CHECK(ev.count.at({6, 10.0}) == 3);
        double sum = 0.0;
        for (const auto &s : p.samples)
        {
            UnfoldedOutput out = unfolded_forward(p.corpus.setup(6).whitened, s.R, s.sigma2(), 6, 10.0, p.model);
            sum += weighted_nmse_loss(s.H, reconstruct(p.corpus.dictionary, out.X), 6, 10.0, p.table);
        }
        CHECK(ev.loss == doctest::Approx(sum / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("adam")
{
    GradientProblem p(7);
    UnfoldedModel model = p.model;

    SUBCASE("zero gradient leaves parameters unchanged")
    {
        OptimizerState st = OptimizerState::fresh(model);
        adam_step(model, zero_gradient(model), st, 1e-3);
        for (std::size_t t = 0; t < 8; ++t)
            CHECK(model.layers[0].tensors()[t]->data == p.model.layers[0].tensors()[t]->data);
    }

    SUBCASE("single step against hand evaluation")
    {
        OptimizerState st = OptimizerState::fresh(model);
        ModelGradient g = zero_gradient(model);
        g[0].conv1_w[0] = 0.3;
        g[0].fc2_b[5] = -2.0;
        adam_step(model, g, st, 0.01);
        // m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2: step = lr g / (|g| + eps)
        CHECK(model.layers[0].conv1_w[0] == doctest::Approx(p.model.layers[0].conv1_w[0] - 0.01 * 0.3 / (0.3 + 1e-8)));
        CHECK(model.layers[0].fc2_b[5] == doctest::Approx(p.model.layers[0].fc2_b[5] + 0.01 * 2.0 / (2.0 + 1e-8)));
        CHECK(st.m[0].conv1_w[0] == doctest::Approx(0.03));
        CHECK(st.v[0].conv1_w[0] == doctest::Approx(0.001 * 0.09));
        CHECK(model.layers[0].conv1_w[1] == p.model.layers[0].conv1_w[1]);
    }

    SUBCASE("constant gradient moves by the learning rate")
    {
        OptimizerState st = OptimizerState::fresh(model);
        ModelGradient g = zero_gradient(model);
        g[0].conv2_b[0] = 0.37;
        double last = model.layers[0].conv2_b[0];
        double step = 0.0;
        for (int i = 0; i < 3000; ++i)
        {
            adam_step(model, g, st, 1e-3);
            step = last - model.layers[0].conv2_b[0];
            last = model.layers[0].conv2_b[0];
        }
        CHECK(step == doctest::Approx(1e-3).epsilon(1e-3));
    }

    SUBCASE("state must match the model")
    {
        OptimizerState st = OptimizerState::fresh(model);
        UnfoldedModel deeper = model;
        deeper.layers.push_back(deeper.layers[0]);
        CHECK_THROWS_AS(adam_step(deeper, zero_gradient(deeper), st, 1e-3), std::invalid_argument);
    }

    SUBCASE("sgd and momentum")
    {
        ModelGradient g = zero_gradient(model);
        g[0].fc1_w[3] = 1.5;
        OptimizerState sgd = OptimizerState::fresh(model, OptimizerKind::sgd);
        UnfoldedModel a = model;
        optimizer_step(a, g, sgd, 0.1);
        CHECK(a.layers[0].fc1_w[3] == doctest::Approx(model.layers[0].fc1_w[3] - 0.15));
        OptimizerState mom = OptimizerState::fresh(model, OptimizerKind::momentum);
        UnfoldedModel b = model;
        optimizer_step(b, g, mom, 0.1);
        optimizer_step(b, g, mom, 0.1);
        CHECK(b.layers[0].fc1_w[3] == doctest::Approx(model.layers[0].fc1_w[3] - 0.1 * 1.5 - 0.1 * 1.5 * 1.9));
    }
}

TEST_CASE("layer-wise training")
{
    GradientProblem p(9, 1, 12);
    std::vector<TrainingSample> train(p.samples.begin(), p.samples.begin() + 8);
    std::vector<TrainingSample> val(p.samples.begin() + 8, p.samples.end());
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.max_epochs = 3;
    cfg.seed = 3;

    SUBCASE("L_max = 1 returns one layer")
    {
        cfg.L_max = 1;
        TrainResult r = layerwise_train(p.corpus, train, val, p.table, cfg);
        CHECK(r.model.depth() == 1);
        CHECK(r.log.stages.size() == 1);
        CHECK(r.log.stages[0].best_val_loss <= r.log.stages[0].initial_val_loss);
    }

    SUBCASE("returned depth is the last improving stage")
    {
        cfg.L_max = 3;
        TrainResult r = layerwise_train(p.corpus, train, val, p.table, cfg);
        const auto &st = r.log.stages;
        REQUIRE(!st.empty());
        int expect = st[0].depth;
        for (std::size_t i = 1; i < st.size(); ++i)
            if (st[i].best_val_loss < st[i - 1].best_val_loss)
                expect = st[i].depth;
            else
                break;
        CHECK(r.model.depth() == expect);

        std::ostringstream os;
        r.log.write_jsonl(os);
        std::istringstream is(os.str());
        std::string line;
        int epochs = 0, stages = 0;
        while (std::getline(is, line))
        {
            auto j = nlohmann::json::parse(line);
            (j["event"] == "epoch" ? epochs : stages) += 1;
        }
        CHECK(epochs == static_cast<int>(r.log.epochs.size()));
        CHECK(stages == static_cast<int>(st.size()));
    }

    SUBCASE("serial runs are reproducible")
    {
        cfg.L_max = 2;
        TrainResult a = layerwise_train(p.corpus, train, val, p.table, cfg);
        TrainResult b = layerwise_train(p.corpus, train, val, p.table, cfg);
        REQUIRE(a.model.depth() == b.model.depth());
        for (int l = 0; l < a.model.depth(); ++l)
            for (std::size_t t = 0; t < 8; ++t)
                CHECK(a.model.layers[l].tensors()[t]->data == b.model.layers[l].tensors()[t]->data);
    }

    SUBCASE("argument checks")
    {
        CHECK_THROWS_AS(layerwise_train(p.corpus, {}, val, p.table, cfg), std::invalid_argument);
        std::vector<TrainingSample> stray = train;
        stray[2].snr_db = 5.0;
        CHECK_THROWS_AS(mixed_train(p.corpus, stray, val, p.table, cfg), std::invalid_argument);
    }
}
