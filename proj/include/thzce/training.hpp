#pragma once

#include <compare>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "thzce/classic_estimators.hpp"
#include "thzce/unfolded_estimator.hpp"

namespace thzce {

// ---------------------------------------------------------------- data

struct ConfigKey
{
    int M = 0;
    double snr_db = 0.0;
    auto operator<=>(const ConfigKey &) const = default;
};

// Loss weight per configuration; the middle point has weight 1.
struct ConfigWeightTable
{
    std::map<ConfigKey, double> weights;
    ConfigKey middle;

    double at(const ConfigKey &key) const;
    // a == 1 for every key
    static ConfigWeightTable uniform(std::span<const ConfigKey> keys, ConfigKey middle);
};

// Everything shared by the samples of one pilot length.
struct PilotSetup
{
    RMat W;
    std::vector<CMat> Phi;
    WhitenedProblem whitened;
};

PilotSetup make_pilot_setup(const RMat &W, std::span<const CMat> dictionary);

struct TrainingSample
{
    CMat H;          // true channel, N x K
    CMat R;          // whitened observation U^H Y, M x K
    int M = 0;
    double snr_db = 0.0;

    ConfigKey key() const { return {M, snr_db}; }
    double sigma2() const;
};

// Dictionary plus the pilot setups the samples refer to.
struct Corpus
{
    std::vector<CMat> dictionary;
    int S = 0, Q = 0; // polar grid shape of the dictionary columns
    std::map<int, PilotSetup> setups;

    const PilotSetup &setup(int M) const;
};

// ---------------------------------------------------------------- loss

// a(M, SNR) * ||H - H_hat||_F^2 / ||H||_F^2
double weighted_nmse_loss(const CMat &H, const CMat &H_hat, int M, double snr_db, const ConfigWeightTable &table);

// a = NMSE(middle) / NMSE(config), from baseline NMSEs on every grid point.
ConfigWeightTable compute_config_weights(const std::map<ConfigKey, double> &baseline_nmse, ConfigKey middle);

// ---------------------------------------------------------------- gradients

// One LayerWeights-shaped gradient per layer.
using ModelGradient = std::vector<LayerWeights>;

ModelGradient zero_gradient(const UnfoldedModel &model);

// Loss of one sample; when grad is given, adds scale * dLoss/dWeights to it.
// Throws DivergenceError when the forward pass is not finite.
double sample_loss_and_gradient(const UnfoldedModel &model, const Corpus &corpus, const TrainingSample &sample,
                                double weight, ModelGradient *grad, double scale = 1.0);

// Mean weighted loss over the batch and its gradient, accumulated in sample order.
double backward(const UnfoldedModel &model, const Corpus &corpus, std::span<const TrainingSample *const> batch,
                const ConfigWeightTable &table, ModelGradient &grad);

// ---------------------------------------------------------------- optimisers

enum class OptimizerKind
{
    adam,
    sgd,
    momentum,
};

struct OptimizerState
{
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
    long step = 0;
    ModelGradient m; // first moment / velocity
    ModelGradient v; // second moment

    static OptimizerState fresh(const UnfoldedModel &model, OptimizerKind kind = OptimizerKind::adam);
};

void adam_step(UnfoldedModel &model, const ModelGradient &grad, OptimizerState &state, double lr);
void optimizer_step(UnfoldedModel &model, const ModelGradient &grad, OptimizerState &state, double lr);

// ---------------------------------------------------------------- training

struct TrainConfig
{
    double lr0 = 1e-3;
    int batch = 16;
    int max_epochs = 40;
    double lr_decay = 0.5;
    int lr_patience = 5;
    int early_stop_patience = 10;
    int L_max = 10;
    std::vector<ConfigKey> grid = {{48, 10.0}};
    int n_train = 8000;
    int n_val = 1000;
    int n_test = 1000;
    std::uint64_t seed = 1;
    OptimizerKind optimizer = OptimizerKind::adam;
    bool verbose = false;
};

struct EpochRecord
{
    int stage = 0;  // network depth
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::map<ConfigKey, double> val_nmse;
    int skipped = 0; // training samples whose forward pass diverged
};

struct StageRecord
{
    int depth = 0;
    double initial_val_loss = 0.0;
    double best_val_loss = 0.0;
    int epochs = 0;
};

struct TrainingLog
{
    std::vector<EpochRecord> epochs;
    std::vector<StageRecord> stages;

    // One JSON object per line; stage summaries carry "event":"stage".
    void write_jsonl(std::ostream &os) const;
};

struct TrainResult
{
    UnfoldedModel model;
    TrainingLog log;
};

struct Evaluation
{
    double loss = 0.0;                     // mean weighted NMSE
    std::map<ConfigKey, double> nmse;      // mean linear NMSE per configuration
    std::map<ConfigKey, int> count;
    int diverged = 0;
};

Evaluation evaluate(const UnfoldedModel &model, const Corpus &corpus, std::span<const TrainingSample> samples,
                    const ConfigWeightTable &table);

UnfoldedModel initial_model(int S, int Q, int depth, std::uint64_t seed, int hidden = kDefaultHidden);

// Trains a fixed-depth model with learning-rate decay and early stopping; returns the
// weights with the lowest validation loss.
TrainResult train_fixed_depth(UnfoldedModel model, const Corpus &corpus, std::span<const TrainingSample> train,
                              std::span<const TrainingSample> val, const ConfigWeightTable &table,
                              const TrainConfig &cfg);

// Grows the network one layer at a time (new layer copied from the last one) until the
// validation loss stops improving or L_max is reached.
TrainResult layerwise_train(const Corpus &corpus, std::span<const TrainingSample> train,
                            std::span<const TrainingSample> val, const ConfigWeightTable &table,
                            const TrainConfig &cfg, std::optional<UnfoldedModel> start = std::nullopt);

// Layer-wise training on samples spanning several configurations with the weighted loss.
TrainResult mixed_train(const Corpus &corpus, std::span<const TrainingSample> train,
                        std::span<const TrainingSample> val, const ConfigWeightTable &table, const TrainConfig &cfg);

} // namespace thzce
