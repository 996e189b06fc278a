#include "thzce/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "thzce/measurement.hpp"

namespace thzce {

// ---------------------------------------------------------------- data

double ConfigWeightTable::at(const ConfigKey &key) const
{
    auto it = weights.find(key);
    if (it == weights.end())
        throw std::out_of_range("no loss weight for M=" + std::to_string(key.M) +
                                ", SNR=" + std::to_string(key.snr_db) + " dB");
    return it->second;
}

ConfigWeightTable ConfigWeightTable::uniform(std::span<const ConfigKey> keys, ConfigKey middle)
{
    ConfigWeightTable t;
    t.middle = middle;
    for (const auto &k : keys)
        t.weights[k] = 1.0;
    t.weights[middle] = 1.0;
    return t;
}

PilotSetup make_pilot_setup(const RMat &W, std::span<const CMat> dictionary)
{
    PilotSetup setup;
    setup.W = W;
    setup.Phi = measurement_matrices(W, dictionary);
    setup.whitened = whiten(setup.Phi);
    return setup;
}

double TrainingSample::sigma2() const { return std::pow(10.0, -snr_db / 10.0); }

const PilotSetup &Corpus::setup(int M) const
{
    auto it = setups.find(M);
    if (it == setups.end())
        throw std::out_of_range("no pilot setup for M=" + std::to_string(M));
    return it->second;
}

// ---------------------------------------------------------------- loss

double weighted_nmse_loss(const CMat &H, const CMat &H_hat, int M, double snr_db, const ConfigWeightTable &table)
{
    return table.at({M, snr_db}) * nmse(H, H_hat).linear;
}

ConfigWeightTable compute_config_weights(const std::map<ConfigKey, double> &baseline_nmse, ConfigKey middle)
{
    auto mid = baseline_nmse.find(middle);
    if (mid == baseline_nmse.end())
        throw std::invalid_argument("baseline NMSE for the middle configuration is missing");
    ConfigWeightTable t;
    t.middle = middle;
    for (const auto &[key, value] : baseline_nmse)
    {
        if (!(value > 0.0) || !std::isfinite(value))
            throw std::invalid_argument("baseline NMSE must be positive and finite");
        t.weights[key] = mid->second / value;
    }
    return t;
}

// ---------------------------------------------------------------- gradients

ModelGradient zero_gradient(const UnfoldedModel &model)
{
    return ModelGradient(model.layers.size(), LayerWeights::zeros(model.hidden));
}

namespace {

struct StateAdjoint
{
    CVec mu;
    RVec tau_x;
    CVec s;
};

// Reverse pass of amp_e_step. `out` holds adjoints of the step's outputs on entry and
// adjoints of its inputs (prev state) on return; gamma_bar accumulates.
void e_step_backward(const CMat &B, const RMat &B2, const AmpState &prev, const RVec &gamma, const EStepCache &c,
                     StateAdjoint &adj, RVec &gamma_bar)
{
    const Eigen::Index G = gamma.size();

    CVec q_bar = adj.mu.cwiseQuotient(c.den.cast<cplx>());
    RVec den_sq = c.den.cwiseProduct(c.den);
    RVec den_bar(G);
    for (Eigen::Index g = 0; g < G; ++g)
    {
        double v = -(std::real(std::conj(adj.mu(g)) * c.q(g)) + adj.tau_x(g) * c.tau_q(g)) / den_sq(g);
        den_bar(g) = c.den_raw(g) < kNumericFloor ? 0.0 : v;
    }
    RVec tau_q_bar = adj.tau_x.cwiseQuotient(c.den) + den_bar.cwiseProduct(gamma);
    gamma_bar += den_bar.cwiseProduct(c.tau_q);

    CVec mu_bar = q_bar;
    tau_q_bar += (q_bar.conjugate().cwiseProduct(c.v)).real();
    CVec v_bar = c.tau_q.cast<cplx>().cwiseProduct(q_bar);

    CVec s_bar_total = adj.s;
    s_bar_total.noalias() += B * v_bar;

    RVec u_bar(G);
    for (Eigen::Index g = 0; g < G; ++g)
        u_bar(g) = c.u(g) < kNumericFloor ? 0.0 : -tau_q_bar(g) * c.tau_q(g) * c.tau_q(g);
    RVec tau_s_bar = B2 * u_bar;
    tau_s_bar += (s_bar_total.conjugate().cwiseProduct(c.resid)).real();
    CVec p_bar = -c.tau_s.cast<cplx>().cwiseProduct(s_bar_total);

    const Eigen::Index M = c.tau_s.size();
    RVec tau_p_bar(M);
    for (Eigen::Index m = 0; m < M; ++m)
        tau_p_bar(m) = c.tau_p_noise(m) < kNumericFloor ? 0.0 : -tau_s_bar(m) * c.tau_s(m) * c.tau_s(m);

    mu_bar.noalias() += B.adjoint() * p_bar;
    tau_p_bar -= (p_bar.conjugate().cwiseProduct(prev.s)).real();
    CVec s_bar = -c.tau_p.cast<cplx>().cwiseProduct(p_bar);

    adj.mu = std::move(mu_bar);
    adj.tau_x = B2.transpose() * tau_p_bar;
    adj.s = std::move(s_bar);
}

// Reverse pass of dnn_m_step; adds input adjoints to adj[k] and weight gradients to grad.
void m_step_backward(const LayerWeights &layer, const MStepCache &c, const RVec &gamma_bar, int M, double snr_db,
                     std::span<const AmpState> inputs, std::span<StateAdjoint> adj, LayerWeights &grad)
{
    const int S = c.mean.S, Q = c.mean.Q, G = S * Q;
    const auto K = inputs.size();

    FeatureMap z_bar(1, S, Q);
    for (int g = 0; g < G; ++g)
        z_bar.data[g] = c.conv2_pre.data[g] > 0.0 ? gamma_bar(g) : 0.0;

    FeatureMap scaled_bar(kConvChannels, S, Q);
    conv2d_same_backward(c.scaled, layer.conv2_w, z_bar, &scaled_bar, grad.conv2_w, grad.conv2_b);

    // attention branch
    std::vector<double> att_bar(kConvChannels, 0.0);
    FeatureMap mean_bar(kConvChannels, S, Q);
    for (int ch = 0; ch < kConvChannels; ++ch)
    {
        auto sb = scaled_bar.plane(ch);
        auto mp = c.mean.plane(ch);
        auto mb = mean_bar.plane(ch);
        double acc = 0.0;
        for (int g = 0; g < G; ++g)
        {
            acc += sb[g] * mp[g];
            mb[g] = sb[g] * c.attention[ch];
        }
        att_bar[ch] = acc;
    }

    const int h = layer.hidden();
    const auto x = attention_input(M, snr_db);
    std::vector<double> hid_bar(h, 0.0);
    for (int ch = 0; ch < kConvChannels; ++ch)
    {
        const double a = c.attention[ch];
        const double z2_bar = att_bar[ch] * a * (1.0 - a);
        grad.fc2_b[ch] += z2_bar;
        for (int j = 0; j < h; ++j)
        {
            const double hid = c.fc1_pre[j] > 0.0 ? c.fc1_pre[j] : 0.0;
            grad.fc2_w[static_cast<std::size_t>(ch) * h + j] += z2_bar * hid;
            hid_bar[j] += z2_bar * layer.fc2_w[static_cast<std::size_t>(ch) * h + j];
        }
    }
    for (int j = 0; j < h; ++j)
    {
        const double pre_bar = c.fc1_pre[j] > 0.0 ? hid_bar[j] : 0.0;
        grad.fc1_w[2 * j] += pre_bar * x[0];
        grad.fc1_w[2 * j + 1] += pre_bar * x[1];
        grad.fc1_b[j] += pre_bar;
    }

    // first convolution, one branch per subcarrier
    const double inv_k = 1.0 / static_cast<double>(K);
    FeatureMap pre_bar(kConvChannels, S, Q);
    FeatureMap in_bar(2, S, Q);
    for (std::size_t k = 0; k < K; ++k)
    {
        const auto &pre = c.conv1_pre[k].data;
        for (std::size_t i = 0; i < pre.size(); ++i)
            pre_bar.data[i] = pre[i] > 0.0 ? inv_k * mean_bar.data[i] : 0.0;
        std::fill(in_bar.data.begin(), in_bar.data.end(), 0.0);
        conv2d_same_backward(c.input[k], layer.conv1_w, pre_bar, &in_bar, grad.conv1_w, grad.conv1_b);
        for (int g = 0; g < G; ++g)
        {
            adj[k].mu(g) += 2.0 * in_bar.data[g] * inputs[k].mu(g);
            adj[k].tau_x(g) += in_bar.data[G + g];
        }
    }
}

} // namespace

double sample_loss_and_gradient(const UnfoldedModel &model, const Corpus &corpus, const TrainingSample &sample,
                                double weight, ModelGradient *grad, double scale)
{
    const PilotSetup &setup = corpus.setup(sample.M);
    const WhitenedProblem &problem = setup.whitened;
    const int K = problem.K();

    UnfoldedTrace trace;
    UnfoldedOutput out = unfolded_forward(problem, sample.R, sample.sigma2(), sample.M, sample.snr_db, model,
                                          grad ? &trace : nullptr);

    const double ref = sample.H.squaredNorm();
    if (ref == 0.0)
        throw std::invalid_argument("training sample has a zero channel");
    CMat err(sample.H.rows(), K);
    for (int k = 0; k < K; ++k)
        err.col(k) = sample.H.col(k) - corpus.dictionary[k] * out.X.col(k);
    const double loss = weight * err.squaredNorm() / ref;
    if (!std::isfinite(loss))
        throw DivergenceError("non-finite training loss");
    if (!grad)
        return loss;

    if (grad->size() != model.layers.size())
        throw std::invalid_argument("gradient does not match the model depth");

    const int L = model.depth();
    const int G = problem.G();
    std::vector<StateAdjoint> adj(K);
    const double coeff = -2.0 * weight * scale / ref;
    for (int k = 0; k < K; ++k)
    {
        adj[k].mu = coeff * (corpus.dictionary[k].adjoint() * err.col(k));
        adj[k].tau_x = RVec::Zero(G);
        adj[k].s = CVec::Zero(problem.M());
    }

    for (int i = L; i >= 0; --i)
    {
        RVec gamma_bar = RVec::Zero(G);
        for (int k = 0; k < K; ++k)
            e_step_backward(problem.B[k], problem.B2[k], trace.states[i][k], trace.gammas[i], trace.estep[i][k],
                            adj[k], gamma_bar);
        if (i == 0)
            break; // gamma^0 is a constant
        m_step_backward(model.layers[i - 1], trace.mstep[i - 1], gamma_bar, sample.M, sample.snr_db,
                        trace.states[i], adj, (*grad)[i - 1]);
    }
    return loss;
}

double backward(const UnfoldedModel &model, const Corpus &corpus, std::span<const TrainingSample *const> batch,
                const ConfigWeightTable &table, ModelGradient &grad)
{
    if (batch.empty())
        throw std::invalid_argument("backward: empty batch");
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const TrainingSample *s : batch)
        total += sample_loss_and_gradient(model, corpus, *s, table.at(s->key()), &grad, scale);
    return total * scale;
}

// ---------------------------------------------------------------- optimisers

OptimizerState OptimizerState::fresh(const UnfoldedModel &model, OptimizerKind kind)
{
    OptimizerState s;
    s.kind = kind;
    s.m = zero_gradient(model);
    s.v = zero_gradient(model);
    return s;
}

namespace {

template <typename F>
void for_each_param(UnfoldedModel &model, const ModelGradient &grad, OptimizerState &state, F &&f)
{
    if (grad.size() != model.layers.size() || state.m.size() != model.layers.size() ||
        state.v.size() != model.layers.size())
        throw std::invalid_argument("optimizer state does not match the model");
    for (std::size_t l = 0; l < model.layers.size(); ++l)
    {
        auto p = model.layers[l].tensors();
        auto g = grad[l].tensors();
        auto m = state.m[l].tensors();
        auto v = state.v[l].tensors();
        for (std::size_t t = 0; t < p.size(); ++t)
        {
            if (!p[t]->same_shape(*g[t]) || !p[t]->same_shape(*m[t]) || !p[t]->same_shape(*v[t]))
                throw std::invalid_argument("optimizer tensors do not match parameter shapes");
            for (std::size_t i = 0; i < p[t]->size(); ++i)
                f((*p[t])[i], (*g[t])[i], (*m[t])[i], (*v[t])[i]);
        }
    }
}

} // namespace

void adam_step(UnfoldedModel &model, const ModelGradient &grad, OptimizerState &state, double lr)
{
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
    for_each_param(model, grad, state, [&](double &p, double g, double &m, double &v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    });
}

void optimizer_step(UnfoldedModel &model, const ModelGradient &grad, OptimizerState &state, double lr)
{
    switch (state.kind)
    {
    case OptimizerKind::adam:
        adam_step(model, grad, state, lr);
        return;
    case OptimizerKind::sgd:
        ++state.step;
        for_each_param(model, grad, state, [&](double &p, double g, double &, double &) { p -= lr * g; });
        return;
    case OptimizerKind::momentum:
        ++state.step;
        for_each_param(model, grad, state, [&](double &p, double g, double &m, double &) {
            m = state.momentum * m + g;
            p -= lr * m;
        });
        return;
    }
}

// ---------------------------------------------------------------- training

void TrainingLog::write_jsonl(std::ostream &os) const
{
    for (const auto &e : epochs)
    {
        nlohmann::json j;
        j["event"] = "epoch";
        j["stage"] = e.stage;
        j["epoch"] = e.epoch;
        j["lr"] = e.lr;
        j["train_loss"] = e.train_loss;
        j["val_loss"] = e.val_loss;
        j["skipped"] = e.skipped;
        nlohmann::json per = nlohmann::json::array();
        for (const auto &[key, value] : e.val_nmse)
            per.push_back({{"M", key.M}, {"snr_db", key.snr_db}, {"nmse", value}});
        j["val_nmse"] = per;
        os << j.dump() << '\n';
    }
    for (const auto &s : stages)
    {
        nlohmann::json j;
        j["event"] = "stage";
        j["depth"] = s.depth;
        j["initial_val_loss"] = s.initial_val_loss;
        j["best_val_loss"] = s.best_val_loss;
        j["epochs"] = s.epochs;
        os << j.dump() << '\n';
    }
}

Evaluation evaluate(const UnfoldedModel &model, const Corpus &corpus, std::span<const TrainingSample> samples,
                    const ConfigWeightTable &table)
{
    Evaluation ev;
    if (samples.empty())
        return ev;
    double total = 0.0;
    for (const auto &s : samples)
    {
        double nm;
        try
        {
            nm = sample_loss_and_gradient(model, corpus, s, 1.0, nullptr);
        }
        catch (const DivergenceError &)
        {
            nm = std::numeric_limits<double>::infinity();
            ++ev.diverged;
        }
        total += table.at(s.key()) * nm;
        ev.nmse[s.key()] += nm;
        ev.count[s.key()] += 1;
    }
    for (auto &[key, value] : ev.nmse)
        value /= ev.count[key];
    ev.loss = total / static_cast<double>(samples.size());
    return ev;
}

UnfoldedModel initial_model(int S, int Q, int depth, std::uint64_t seed, int hidden)
{
    UnfoldedModel model;
    model.S = S;
    model.Q = Q;
    model.hidden = hidden;
    Rng rng = make_stream(seed, {0x1417});
    for (int l = 0; l < depth; ++l)
        model.layers.push_back(LayerWeights::glorot(rng, hidden));
    return model;
}

TrainResult train_fixed_depth(UnfoldedModel model, const Corpus &corpus, std::span<const TrainingSample> train,
                              std::span<const TrainingSample> val, const ConfigWeightTable &table,
                              const TrainConfig &cfg)
{
    if (train.empty() || val.empty())
        throw std::invalid_argument("training needs non-empty training and validation sets");
    if (cfg.batch < 1)
        throw std::invalid_argument("batch size must be positive");

    TrainResult result;
    const int depth = model.depth();
    Rng rng = make_stream(cfg.seed, {0x5348, static_cast<std::uint64_t>(depth)});

    Evaluation initial = evaluate(model, corpus, val, table);
    StageRecord stage;
    stage.depth = depth;
    stage.initial_val_loss = initial.loss;

    UnfoldedModel best = model;
    double best_loss = initial.loss;
    double lr = cfg.lr0;
    int since_improve = 0, since_decay = 0;

    OptimizerState opt = OptimizerState::fresh(model, cfg.optimizer);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    int epoch = 0;
    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch)
    {
        std::shuffle(order.begin(), order.end(), rng);
        double train_total = 0.0;
        int used = 0, skipped = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch)
        {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            ModelGradient grad = zero_gradient(model);
            ModelGradient sample_grad = zero_gradient(model);
            int ok = 0;
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i)
            {
                const TrainingSample &s = train[order[i]];
                for (auto &layer : sample_grad)
                    for (Tensor *t : layer.tensors())
                        std::fill(t->data.begin(), t->data.end(), 0.0);
                try
                {
                    batch_loss += sample_loss_and_gradient(model, corpus, s, table.at(s.key()), &sample_grad);
                }
                catch (const DivergenceError &)
                {
                    ++skipped;
                    continue;
                }
                ++ok;
                for (std::size_t l = 0; l < grad.size(); ++l)
                {
                    auto dst = grad[l].tensors();
                    auto src = sample_grad[l].tensors();
                    for (std::size_t t = 0; t < dst.size(); ++t)
                        for (std::size_t j = 0; j < dst[t]->size(); ++j)
                            (*dst[t])[j] += (*src[t])[j];
                }
            }
            if (ok == 0)
                continue;
            for (auto &layer : grad)
                for (Tensor *t : layer.tensors())
                    for (double &x : t->data)
                        x /= ok;
            optimizer_step(model, grad, opt, lr);
            train_total += batch_loss;
            used += ok;
        }

        Evaluation ev = evaluate(model, corpus, val, table);
        EpochRecord rec;
        rec.stage = depth;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = used ? train_total / used : std::numeric_limits<double>::quiet_NaN();
        rec.val_loss = ev.loss;
        rec.val_nmse = ev.nmse;
        rec.skipped = skipped;
        result.log.epochs.push_back(rec);
        if (cfg.verbose)
            std::cerr << "  depth " << depth << " epoch " << epoch << " lr " << lr << " train " << rec.train_loss
                      << " val " << ev.loss << (skipped ? " skipped " + std::to_string(skipped) : "") << '\n';

        if (ev.loss < best_loss)
        {
            best_loss = ev.loss;
            best = model;
            since_improve = 0;
            since_decay = 0;
        }
        else
        {
            ++since_improve;
            ++since_decay;
            if (since_decay >= cfg.lr_patience)
            {
                lr *= cfg.lr_decay;
                since_decay = 0;
            }
            if (since_improve >= cfg.early_stop_patience)
                break;
        }
    }

    stage.best_val_loss = best_loss;
    stage.epochs = std::min(epoch, cfg.max_epochs);
    result.log.stages.push_back(stage);
    result.model = std::move(best);
    return result;
}

TrainResult layerwise_train(const Corpus &corpus, std::span<const TrainingSample> train,
                            std::span<const TrainingSample> val, const ConfigWeightTable &table,
                            const TrainConfig &cfg, std::optional<UnfoldedModel> start)
{
    if (train.empty())
        throw std::invalid_argument("layerwise_train: empty dataset");
    if (cfg.L_max < 1)
        throw std::invalid_argument("layerwise_train: L_max must be at least 1");

    UnfoldedModel model = start ? std::move(*start) : initial_model(corpus.S, corpus.Q, 1, cfg.seed);
    if (model.layers.empty())
        model.layers.push_back(initial_model(model.S, model.Q, 1, cfg.seed, model.hidden).layers.front());
    if (corpus.dictionary.empty() || model.G() != corpus.dictionary.front().cols())
        throw std::invalid_argument("layerwise_train: model grid does not match the dictionary");

    TrainResult out;
    std::optional<UnfoldedModel> previous;
    double previous_loss = std::numeric_limits<double>::infinity();
    for (int depth = model.depth(); depth <= cfg.L_max; ++depth)
    {
        if (previous)
            model.layers.push_back(model.layers.back());
        TrainResult stage = train_fixed_depth(model, corpus, train, val, table, cfg);
        out.log.epochs.insert(out.log.epochs.end(), stage.log.epochs.begin(), stage.log.epochs.end());
        out.log.stages.insert(out.log.stages.end(), stage.log.stages.begin(), stage.log.stages.end());
        const double loss = stage.log.stages.back().best_val_loss;
        if (cfg.verbose)
            std::cerr << "depth " << model.depth() << " best val " << loss << '\n';
        if (previous && !(loss < previous_loss))
            break;
        previous = stage.model;
        previous_loss = loss;
        model = std::move(stage.model);
    }
    out.model = std::move(*previous);
    return out;
}

TrainResult mixed_train(const Corpus &corpus, std::span<const TrainingSample> train,
                        std::span<const TrainingSample> val, const ConfigWeightTable &table, const TrainConfig &cfg)
{
    for (auto set : {train, val})
        for (const auto &s : set)
            if (!table.weights.contains(s.key()))
                throw std::invalid_argument("mixed_train: sample configuration (M=" + std::to_string(s.M) +
                                            ") is not in the weight table");
    return layerwise_train(corpus, train, val, table, cfg);
}

} // namespace thzce
