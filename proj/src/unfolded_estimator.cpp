#include "thzce/unfolded_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "thzce/binary_io.hpp"

namespace thzce {

// ---------------------------------------------------------------- tensors

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims))
{
    std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    data.assign(n, 0.0);
}

LayerWeights LayerWeights::zeros(int hidden)
{
    const auto h = static_cast<std::size_t>(hidden);
    LayerWeights w;
    w.conv1_w = Tensor({kConvChannels, 2, kKernel, kKernel});
    w.conv1_b = Tensor({kConvChannels});
    w.conv2_w = Tensor({1, kConvChannels, kKernel, kKernel});
    w.conv2_b = Tensor({1});
    w.fc1_w = Tensor({h, 2});
    w.fc1_b = Tensor({h});
    w.fc2_w = Tensor({kConvChannels, h});
    w.fc2_b = Tensor({kConvChannels});
    return w;
}

LayerWeights LayerWeights::glorot(Rng &rng, int hidden)
{
    LayerWeights w = zeros(hidden);
    auto fill = [&](Tensor &t, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> ud(-limit, limit);
        for (auto &x : t.data)
            x = ud(rng);
    };
    const double taps = kKernel * kKernel;
    fill(w.conv1_w, 2 * taps, kConvChannels * taps);
    fill(w.conv2_w, kConvChannels * taps, taps);
    fill(w.fc1_w, 2, hidden);
    fill(w.fc2_w, hidden, kConvChannels);
    return w;
}

std::array<Tensor *, 8> LayerWeights::tensors()
{
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::array<const Tensor *, 8> LayerWeights::tensors() const
{
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

bool LayerWeights::valid() const
{
    const LayerWeights ref = zeros(hidden());
    auto mine = tensors();
    auto theirs = ref.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i)
    {
        if (!mine[i]->same_shape(*theirs[i]) || mine[i]->data.size() != theirs[i]->data.size())
            return false;
        for (double x : mine[i]->data)
            if (!std::isfinite(x))
                return false;
    }
    return true;
}

void UnfoldedModel::validate() const
{
    if (layers.empty())
        throw std::invalid_argument("unfolded model needs at least one layer");
    if (S < 1 || Q < 1)
        throw std::invalid_argument("unfolded model grid shape must be positive");
    for (const auto &layer : layers)
        if (layer.hidden() != hidden || !layer.valid())
            throw std::invalid_argument("unfolded model layers have inconsistent or non-finite weights");
}

// ---------------------------------------------------------------- convolution

FeatureMap::FeatureMap(int channels, int rows, int cols)
    : C(channels), S(rows), Q(cols), data(static_cast<std::size_t>(channels) * rows * cols, 0.0)
{
}

namespace {

constexpr int kPad = kKernel / 2;

void check_conv_shapes(const FeatureMap &input, const Tensor &kernel, const Tensor &bias)
{
    if (kernel.shape.size() != 4 || kernel.shape[2] != kKernel || kernel.shape[3] != kKernel)
        throw std::invalid_argument("conv2d_same: kernel must be [C_out][C_in][5][5]");
    if (static_cast<int>(kernel.shape[1]) != input.C)
        throw std::invalid_argument("conv2d_same: kernel input channels do not match the feature map");
    if (bias.size() != kernel.shape[0])
        throw std::invalid_argument("conv2d_same: one bias per output channel is required");
    if (input.S < 1 || input.Q < 1)
        throw std::invalid_argument("conv2d_same: empty feature map");
}

// Visits every (output row, input row, column shift) triple that touches valid input.
template <typename F>
void for_each_tap(int S, int Q, F &&f)
{
    for (int ky = 0; ky < kKernel; ++ky)
    {
        const int dy = ky - kPad;
        for (int s = std::max(0, -dy); s < std::min(S, S - dy); ++s)
            for (int kx = 0; kx < kKernel; ++kx)
            {
                const int dx = kx - kPad;
                const int q0 = std::max(0, -dx);
                const int q1 = std::min(Q, Q - dx);
                if (q0 < q1)
                    f(ky, kx, s, s + dy, dx, q0, q1);
            }
    }
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

FeatureMap conv2d_same(const FeatureMap &input, const Tensor &kernel, const Tensor &bias)
{
    check_conv_shapes(input, kernel, bias);
    const int C_out = static_cast<int>(kernel.shape[0]);
    const int C_in = input.C;
    const int S = input.S, Q = input.Q;

    FeatureMap out(C_out, S, Q);
    for (int co = 0; co < C_out; ++co)
    {
        std::fill(out.plane(co).begin(), out.plane(co).end(), bias[co]);
        for (int ci = 0; ci < C_in; ++ci)
        {
            const double *w = &kernel.data[(static_cast<std::size_t>(co) * C_in + ci) * kKernel * kKernel];
            for_each_tap(S, Q, [&](int ky, int kx, int s, int sy, int dx, int q0, int q1) {
                const double wk = w[ky * kKernel + kx];
                double *o = &out.at(co, s, 0);
                const double *in = &input.at(ci, sy, 0);
                for (int q = q0; q < q1; ++q)
                    o[q] += wk * in[q + dx];
            });
        }
    }
    return out;
}

void conv2d_same_backward(const FeatureMap &input, const Tensor &kernel, const FeatureMap &grad_output,
                          FeatureMap *grad_input, Tensor &grad_kernel, Tensor &grad_bias)
{
    check_conv_shapes(input, kernel, grad_bias);
    const int C_out = static_cast<int>(kernel.shape[0]);
    const int C_in = input.C;
    const int S = input.S, Q = input.Q;
    if (grad_output.C != C_out || grad_output.S != S || grad_output.Q != Q)
        throw std::invalid_argument("conv2d_same_backward: gradient shape mismatch");
    if (grad_input && (grad_input->C != C_in || grad_input->S != S || grad_input->Q != Q))
        throw std::invalid_argument("conv2d_same_backward: input gradient shape mismatch");

    for (int co = 0; co < C_out; ++co)
    {
        auto go_plane = grad_output.plane(co);
        grad_bias[co] += std::accumulate(go_plane.begin(), go_plane.end(), 0.0);
        for (int ci = 0; ci < C_in; ++ci)
        {
            const std::size_t base = (static_cast<std::size_t>(co) * C_in + ci) * kKernel * kKernel;
            const double *w = &kernel.data[base];
            double *gw = &grad_kernel.data[base];
            for_each_tap(S, Q, [&](int ky, int kx, int s, int sy, int dx, int q0, int q1) {
                const double *go = &grad_output.at(co, s, 0);
                const double *in = &input.at(ci, sy, 0);
                double acc = 0.0;
                for (int q = q0; q < q1; ++q)
                    acc += go[q] * in[q + dx];
                gw[ky * kKernel + kx] += acc;
                if (grad_input)
                {
                    const double wk = w[ky * kKernel + kx];
                    double *gi = &grad_input->at(ci, sy, 0);
                    for (int q = q0; q < q1; ++q)
                        gi[q + dx] += wk * go[q];
                }
            });
        }
    }
}

// ---------------------------------------------------------------- attention

std::array<double, 2> attention_input(int M, double snr_db) { return {M / 64.0, snr_db / 20.0}; }

namespace {

std::vector<double> attention_forward(int M, double snr_db, const LayerWeights &layer, std::vector<double> *fc1_pre)
{
    const int h = layer.hidden();
    const auto x = attention_input(M, snr_db);
    std::vector<double> pre(h), hid(h);
    for (int j = 0; j < h; ++j)
    {
        pre[j] = layer.fc1_w[2 * j] * x[0] + layer.fc1_w[2 * j + 1] * x[1] + layer.fc1_b[j];
        hid[j] = relu(pre[j]);
    }
    std::vector<double> att(kConvChannels);
    for (int c = 0; c < kConvChannels; ++c)
    {
        double z = layer.fc2_b[c];
        for (int j = 0; j < h; ++j)
            z += layer.fc2_w[static_cast<std::size_t>(c) * h + j] * hid[j];
        att[c] = sigmoid(z);
    }
    if (fc1_pre)
        *fc1_pre = std::move(pre);
    return att;
}

} // namespace

std::vector<double> attention_weights(int M, double snr_db, const LayerWeights &layer)
{
    return attention_forward(M, snr_db, layer, nullptr);
}

// ---------------------------------------------------------------- M-step network

RVec dnn_m_step(std::span<const CVec> mu, std::span<const RVec> tau, int M, double snr_db, int S, int Q,
                const LayerWeights &layer, MStepCache *cache)
{
    const int G = S * Q;
    const auto K = mu.size();
    if (K == 0 || tau.size() != K)
        throw std::invalid_argument("dnn_m_step: need matching mu/tau vectors for at least one subcarrier");
    for (std::size_t k = 0; k < K; ++k)
        if (mu[k].size() != G || tau[k].size() != G)
            throw std::invalid_argument("dnn_m_step: vectors must have length S * Q");

    MStepCache local;
    MStepCache &c = cache ? *cache : local;
    c.input.assign(K, FeatureMap(2, S, Q));
    c.conv1_pre.resize(K);
    c.mean = FeatureMap(kConvChannels, S, Q);

    const double inv_k = 1.0 / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k)
    {
        FeatureMap &in = c.input[k];
        for (int g = 0; g < G; ++g)
        {
            in.data[g] = std::norm(mu[k](g));
            in.data[G + g] = tau[k](g);
        }
        c.conv1_pre[k] = conv2d_same(in, layer.conv1_w, layer.conv1_b);
        const auto &pre = c.conv1_pre[k].data;
        for (std::size_t i = 0; i < pre.size(); ++i)
            c.mean.data[i] += inv_k * relu(pre[i]);
    }

    c.attention = attention_forward(M, snr_db, layer, &c.fc1_pre);
    c.scaled = c.mean;
    for (int ch = 0; ch < kConvChannels; ++ch)
        for (double &x : c.scaled.plane(ch))
            x *= c.attention[ch];

    c.conv2_pre = conv2d_same(c.scaled, layer.conv2_w, layer.conv2_b);
    RVec gamma(G);
    for (int g = 0; g < G; ++g)
        gamma(g) = relu(c.conv2_pre.data[g]);
    return gamma;
}

// ---------------------------------------------------------------- forward pass

UnfoldedOutput unfolded_forward(const WhitenedProblem &problem, const CMat &R, double sigma2, int M,
                                double snr_db, const UnfoldedModel &model, UnfoldedTrace *trace)
{
    model.validate();
    const int K = problem.K();
    const int G = problem.G();
    if (G != model.G())
        throw std::invalid_argument("unfolded_forward: model grid does not match the measurement matrices");
    if (R.cols() != K || R.rows() != problem.M())
        throw std::invalid_argument("unfolded_forward: observation shape does not match the problem");
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("unfolded_forward: noise variance must be positive");

    const int L = model.depth();
    std::vector<AmpState> state(K, amp_initial_state(problem.M(), G));
    RVec gamma = RVec::Ones(G);

    UnfoldedOutput out;
    if (trace)
    {
        trace->states.assign(1, state);
        trace->estep.clear();
        trace->gammas.clear();
        trace->mstep.assign(L, MStepCache{});
    }

    auto e_step = [&](int index) {
        std::vector<EStepCache> caches(trace ? K : 0);
        for (int k = 0; k < K; ++k)
        {
            state[k] = amp_e_step(problem.B[k], problem.B2[k], R.col(k), sigma2, state[k], gamma,
                                  trace ? &caches[k] : nullptr);
            if (!state[k].mu.allFinite() || !state[k].tau_x.allFinite())
                throw DivergenceError("unfolded_forward: non-finite E-step output at stage " + std::to_string(index));
        }
        out.gammas.push_back(gamma);
        if (trace)
        {
            trace->gammas.push_back(gamma);
            trace->estep.push_back(std::move(caches));
            trace->states.push_back(state);
        }
    };

    e_step(0);
    std::vector<CVec> mus(K);
    std::vector<RVec> taus(K);
    for (int l = 0; l < L; ++l)
    {
        for (int k = 0; k < K; ++k)
        {
            mus[k] = state[k].mu;
            taus[k] = state[k].tau_x;
        }
        gamma = dnn_m_step(mus, taus, M, snr_db, model.S, model.Q, model.layers[l],
                           trace ? &trace->mstep[l] : nullptr);
        if (!gamma.allFinite())
            throw DivergenceError("unfolded_forward: non-finite gamma in layer " + std::to_string(l));
        e_step(l + 1);
    }

    out.X.resize(G, K);
    for (int k = 0; k < K; ++k)
        out.X.col(k) = state[k].mu;
    return out;
}

UnfoldedOutput unfolded_forward(const CMat &Y, std::span<const CMat> Phi, double sigma2, int M, double snr_db,
                                const UnfoldedModel &model)
{
    WhitenedProblem problem = whiten(Phi);
    return unfolded_forward(problem, problem.whiten(Y), sigma2, M, snr_db, model);
}

// ---------------------------------------------------------------- persistence

namespace {

std::string shape_string(const Tensor &t)
{
    std::string s;
    for (std::size_t i = 0; i < t.shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(t.shape[i]);
    return s;
}

std::vector<std::size_t> parse_shape(const std::string &s)
{
    std::vector<std::size_t> dims;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        dims.push_back(std::stoul(item));
    return dims;
}

} // namespace

void save_model(const UnfoldedModel &model, const std::filesystem::path &dir)
{
    model.validate();
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
    if (!manifest)
        throw std::runtime_error("cannot write model manifest in " + dir.string());
    manifest << "format thzce-unfolded-model\n"
             << "version 1\n"
             << "L " << model.depth() << "\n"
             << "S " << model.S << "\n"
             << "Q " << model.Q << "\n"
             << "h " << model.hidden << "\n";
    for (const auto &[key, value] : model.metadata)
        manifest << "meta " << key << ' ' << value << "\n";
    for (int l = 0; l < model.depth(); ++l)
    {
        auto tensors = model.layers[l].tensors();
        for (std::size_t i = 0; i < tensors.size(); ++i)
        {
            std::string name = "layer" + std::to_string(l) + "." + std::string(LayerWeights::kNames[i]);
            std::string file = name + ".bin";
            write_f64_blob(dir / file, tensors[i]->data);
            manifest << "tensor " << name << ' ' << shape_string(*tensors[i]) << ' ' << file << "\n";
        }
    }
}

UnfoldedModel load_model(const std::filesystem::path &dir)
{
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw std::runtime_error("missing model manifest in " + dir.string());

    UnfoldedModel model;
    int L = -1;
    std::string line;
    bool format_ok = false;
    std::set<std::string> loaded;
    while (std::getline(manifest, line))
    {
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format")
        {
            std::string value;
            ls >> value;
            format_ok = value == "thzce-unfolded-model";
        }
        else if (key == "version")
            continue;
        else if (key == "L")
        {
            ls >> L;
            model.layers.clear();
        }
        else if (key == "S")
            ls >> model.S;
        else if (key == "Q")
            ls >> model.Q;
        else if (key == "h")
            ls >> model.hidden;
        else if (key == "meta")
        {
            std::string k, v;
            ls >> k;
            std::getline(ls >> std::ws, v);
            model.metadata[k] = v;
        }
        else if (key == "tensor")
        {
            std::string name, shape, file;
            ls >> name >> shape >> file;
            if (L < 0)
                throw std::runtime_error("model manifest lists tensors before L");
            if (static_cast<int>(model.layers.size()) != L)
                model.layers.assign(L, LayerWeights::zeros(model.hidden));
            auto dot = name.find('.');
            if (name.rfind("layer", 0) != 0 || dot == std::string::npos)
                throw std::runtime_error("malformed tensor name " + name);
            int l = std::stoi(name.substr(5, dot - 5));
            std::string field = name.substr(dot + 1);
            auto it = std::find(LayerWeights::kNames.begin(), LayerWeights::kNames.end(), field);
            if (l < 0 || l >= L || it == LayerWeights::kNames.end())
                throw std::runtime_error("unknown tensor " + name);
            Tensor &t = *model.layers[l].tensors()[it - LayerWeights::kNames.begin()];
            if (parse_shape(shape) != t.shape)
                throw std::runtime_error("tensor " + name + " has shape " + shape + ", expected " + shape_string(t));
            auto values = read_f64_blob(dir / file);
            if (values.size() != t.size())
                throw std::runtime_error("blob " + file + " does not match its manifest shape");
            t.data = std::move(values);
            if (!loaded.insert(name).second)
                throw std::runtime_error("tensor " + name + " listed twice");
        }
        else
            throw std::runtime_error("unknown manifest key '" + key + "'");
    }
    if (!format_ok)
        throw std::runtime_error(dir.string() + " is not an unfolded model directory");
    if (L < 0 || loaded.size() != static_cast<std::size_t>(L) * LayerWeights::kNames.size())
        throw std::runtime_error("model manifest does not list every weight tensor");
    model.validate();
    return model;
}

} // namespace thzce
