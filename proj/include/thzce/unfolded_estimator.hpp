#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "thzce/classic_estimators.hpp"
#include "thzce/types.hpp"

namespace thzce {

inline constexpr int kConvChannels = 16;
inline constexpr int kKernel = 5;
inline constexpr int kDefaultHidden = 16;

// Dense row-major array of doubles.
struct Tensor
{
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims);

    std::size_t size() const { return data.size(); }
    double &operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor &other) const { return shape == other.shape; }
};

// Trainable parameters of one unfolded layer's M-step network.
struct LayerWeights
{
    Tensor conv1_w; // [16][2][5][5]
    Tensor conv1_b; // [16]
    Tensor conv2_w; // [1][16][5][5]
    Tensor conv2_b; // [1]
    Tensor fc1_w;   // [h][2]
    Tensor fc1_b;   // [h]
    Tensor fc2_w;   // [16][h]
    Tensor fc2_b;   // [16]

    static constexpr std::array<std::string_view, 8> kNames = {"conv1_w", "conv1_b", "conv2_w", "conv2_b",
                                                               "fc1_w",   "fc1_b",   "fc2_w",   "fc2_b"};

    static LayerWeights zeros(int hidden = kDefaultHidden);
    // Glorot-uniform weights, zero biases.
    static LayerWeights glorot(Rng &rng, int hidden = kDefaultHidden);

    int hidden() const { return static_cast<int>(fc1_b.size()); }

    std::array<Tensor *, 8> tensors();
    std::array<const Tensor *, 8> tensors() const;

    // Shapes as listed above and every entry finite.
    bool valid() const;
};

struct UnfoldedModel
{
    int S = 0;
    int Q = 0;
    int hidden = kDefaultHidden;
    std::vector<LayerWeights> layers;
    std::map<std::string, std::string> metadata;

    int depth() const { return static_cast<int>(layers.size()); }
    int G() const { return S * Q; }
    void validate() const;
};

// Channel-major feature maps: element (c, s, q) at c * S * Q + s * Q + q.
struct FeatureMap
{
    int C = 0, S = 0, Q = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int channels, int rows, int cols);

    double &at(int c, int s, int q) { return data[(static_cast<std::size_t>(c) * S + s) * Q + q]; }
    const double &at(int c, int s, int q) const { return data[(static_cast<std::size_t>(c) * S + s) * Q + q]; }
    std::span<double> plane(int c) { return {data.data() + static_cast<std::size_t>(c) * S * Q, static_cast<std::size_t>(S * Q)}; }
    std::span<const double> plane(int c) const { return {data.data() + static_cast<std::size_t>(c) * S * Q, static_cast<std::size_t>(S * Q)}; }
};

// 5x5 cross-correlation with zero padding 2 on both spatial axes.
FeatureMap conv2d_same(const FeatureMap &input, const Tensor &kernel, const Tensor &bias);

// Gradients of conv2d_same. grad_input may be null when the input is a constant.
void conv2d_same_backward(const FeatureMap &input, const Tensor &kernel, const FeatureMap &grad_output,
                          FeatureMap *grad_input, Tensor &grad_kernel, Tensor &grad_bias);

// Normalised configuration features fed to the attention branch.
std::array<double, 2> attention_input(int M, double snr_db);

// sigmoid(fc2(relu(fc1([M / 64, snr_db / 20])))), 16 values in (0, 1).
std::vector<double> attention_weights(int M, double snr_db, const LayerWeights &layer);

// Intermediates of one M-step network evaluation.
struct MStepCache
{
    std::vector<FeatureMap> input;     // per subcarrier, channels (|mu|^2, tau)
    std::vector<FeatureMap> conv1_pre; // per subcarrier, before ReLU
    FeatureMap mean;                   // average of the ReLU'd conv1 maps
    std::vector<double> fc1_pre;
    std::vector<double> attention;
    FeatureMap scaled;                 // attention-weighted mean
    FeatureMap conv2_pre;
};

// Learned replacement of the SBL M-step. mu/tau hold one length-G vector per subcarrier.
RVec dnn_m_step(std::span<const CVec> mu, std::span<const RVec> tau, int M, double snr_db, int S, int Q,
                const LayerWeights &layer, MStepCache *cache = nullptr);

// Raised when an unfolded forward pass produces non-finite values.
class DivergenceError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Everything the reverse pass needs. E-step i (i = 0..L) consumes states[i] and
// gammas[i] and produces states[i + 1]; M-step l (l = 0..L-1) maps states[l + 1]
// to gammas[l + 1].
struct UnfoldedTrace
{
    std::vector<std::vector<AmpState>> states;
    std::vector<std::vector<EStepCache>> estep;
    std::vector<RVec> gammas;
    std::vector<MStepCache> mstep;
};

struct UnfoldedOutput
{
    CMat X;                    // G x K posterior means after the last layer
    std::vector<RVec> gammas;  // gamma used by each E-step
};

// Unitary preprocessing must already be applied (R = U^H Y). An initial E-step with
// gamma = 1 is followed by L layers of {network M-step, E-step}.
UnfoldedOutput unfolded_forward(const WhitenedProblem &problem, const CMat &R, double sigma2, int M,
                                double snr_db, const UnfoldedModel &model, UnfoldedTrace *trace = nullptr);

// Convenience overload performing the SVD preprocessing.
UnfoldedOutput unfolded_forward(const CMat &Y, std::span<const CMat> Phi, double sigma2, int M, double snr_db,
                                const UnfoldedModel &model);

// Directory holding manifest.txt plus one little-endian float64 blob per tensor.
void save_model(const UnfoldedModel &model, const std::filesystem::path &dir);
UnfoldedModel load_model(const std::filesystem::path &dir);

} // namespace thzce
