#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thzce/dataset.hpp"
#include "thzce/system_config.hpp"
#include "thzce/training.hpp"
#include "thzce/unfolded_estimator.hpp"

namespace thzce {

// "PD": frequency-dependent polar dictionaries. "AD": far-field dictionaries on the
// same angle grid, evaluated at each subcarrier frequency.
enum class DictionaryKind
{
    polar,
    angular,
};

DictionaryKind parse_dictionary(const std::string &name);
const char *dictionary_label(DictionaryKind kind);

struct SolverSettings
{
    int somp_iters = 6;
    int msbl_iters = 100;
    int amp_iters = 100;
};

// Dictionaries and pilot setups for one SystemConfig, built lazily per (dictionary, M).
class EstimatorBank
{
public:
    explicit EstimatorBank(SystemConfig cfg, SolverSettings solvers = {});

    const SystemConfig &config() const { return cfg_; }
    const std::vector<CMat> &dictionary(DictionaryKind kind);
    const PilotSetup &setup(DictionaryKind kind, int M);
    // Replaces the default pilot matrix for M (e.g. the one stored with a dataset).
    void use_pilot(int M, const RMat &W);

    // algorithm: somp | msbl | amp_sbl | unfolded. Returns the channel estimate (N x K);
    // throws DivergenceError from the unfolded network, other solvers return what they produce.
    CMat estimate(const std::string &algorithm, DictionaryKind kind, const CMat &Y, int M, double snr_db,
                  const UnfoldedModel *model = nullptr);

private:
    SystemConfig cfg_;
    SolverSettings solvers_;
    std::map<DictionaryKind, std::vector<CMat>> dictionaries_;
    std::map<std::pair<DictionaryKind, int>, PilotSetup> setups_;
    std::map<int, RMat> pilots_;
};

// Linear NMSE per sample; non-finite estimates and divergence count as +inf.
std::vector<double> nmse_per_sample(EstimatorBank &bank, const std::string &algorithm, DictionaryKind kind,
                                    const DatasetGroup &group, const UnfoldedModel *model = nullptr);

double mean_nmse_db(const std::vector<double> &linear);
double median(std::vector<double> values);

struct ResultRow
{
    std::string axis;
    std::string algorithm;
    std::string dictionary;
    double value = 0.0;
    int samples = 0;
};

struct ExperimentResult
{
    std::string metric = "nmse_db";
    std::vector<ResultRow> rows;

    // Header "axis,algorithm,dictionary,<metric>,samples".
    void write_csv(std::ostream &os) const;
    void write_summary(std::ostream &os) const;
    const ResultRow *find(const std::string &axis, const std::string &algorithm, const std::string &dictionary) const;
};

struct Combination
{
    std::string algorithm;
    DictionaryKind dictionary;
};

struct ExperimentSpec
{
    SystemConfig cfg = SystemConfig::desk();
    SolverSettings solvers;
    int samples = 200;
    std::vector<int> M_values = {16, 32, 48, 64};
    std::vector<double> rc_values = {5.0, 10.0, 20.0, 40.0, 80.0, 160.0};
    std::vector<Combination> combinations = {{"somp", DictionaryKind::angular},
                                             {"somp", DictionaryKind::polar},
                                             {"msbl", DictionaryKind::angular},
                                             {"msbl", DictionaryKind::polar},
                                             {"amp_sbl", DictionaryKind::polar}};
    std::optional<UnfoldedModel> model; // required by "unfolded"
    TrainConfig train;                  // grid, dataset sizes and schedule for the training studies
    int support_size = 20;              // largest least-squares coefficients kept per subcarrier
    int dictionary_subcarriers = 2;     // evenly spaced from the first to the last subcarrier
    std::filesystem::path artifacts;    // when set, trained models and logs are written here
    bool verbose = false;
};

ExperimentResult run_vs_M(const ExperimentSpec &spec);
ExperimentResult run_vs_rc(const ExperimentSpec &spec);
// Trains separate models per grid point, a weighted mixed model and an unweighted one,
// then scores them with MSBL-AD on the test split of every configuration.
ExperimentResult run_vs_snr_configs(const ExperimentSpec &spec);
// Validation NMSE per epoch at the middle configuration for adam, sgd and momentum.
ExperimentResult run_optimizer_study(const ExperimentSpec &spec);
// Mean cross-subcarrier Jaccard overlap of the top least-squares supports; rows per r_c.
// PD uses per-subcarrier polar dictionaries, AD one angular dictionary at f_c.
ExperimentResult run_sparsity_structure(const ExperimentSpec &spec);

ExperimentResult run_experiment(const std::string &kind, const ExperimentSpec &spec);

struct TimingRow
{
    std::string algorithm;
    std::string dictionary;
    double median_ms = 0.0;
    double iqr_ms = 0.0;
    int repetitions = 0;
};

// One warm-up solve, then `repetitions` timed solves of the same observation.
std::vector<TimingRow> benchmark_runtime(const std::vector<Combination> &algs, const SystemConfig &cfg,
                                         int repetitions, const SolverSettings &solvers = {},
                                         const UnfoldedModel *model = nullptr);
void write_timing_csv(const std::vector<TimingRow> &rows, std::ostream &os);

} // namespace thzce
