#include "thzce/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "thzce/channel_model.hpp"
#include "thzce/classic_estimators.hpp"
#include "thzce/polar_dictionary.hpp"

namespace thzce {

namespace fs = std::filesystem;

DictionaryKind parse_dictionary(const std::string &name)
{
    if (name == "PD" || name == "pd" || name == "polar")
        return DictionaryKind::polar;
    if (name == "AD" || name == "ad" || name == "angular")
        return DictionaryKind::angular;
    throw std::invalid_argument("unknown dictionary: " + name);
}

const char *dictionary_label(DictionaryKind kind) { return kind == DictionaryKind::polar ? "PD" : "AD"; }

// ---------------------------------------------------------------- estimators

EstimatorBank::EstimatorBank(SystemConfig cfg, SolverSettings solvers) : cfg_(std::move(cfg)), solvers_(solvers)
{
    cfg_.validate();
}

const std::vector<CMat> &EstimatorBank::dictionary(DictionaryKind kind)
{
    auto it = dictionaries_.find(kind);
    if (it != dictionaries_.end())
        return it->second;
    std::vector<CMat> atoms = kind == DictionaryKind::polar ? build_polar_dictionary(cfg_).atoms
                                                            : build_angular_dictionaries(cfg_, true);
    return dictionaries_.emplace(kind, std::move(atoms)).first->second;
}

const PilotSetup &EstimatorBank::setup(DictionaryKind kind, int M)
{
    auto key = std::make_pair(kind, M);
    auto it = setups_.find(key);
    if (it != setups_.end())
        return it->second;
    auto pilot = pilots_.find(M);
    const RMat W = pilot != pilots_.end() ? pilot->second : pilot_matrix_for(cfg_, M);
    return setups_.emplace(key, make_pilot_setup(W, dictionary(kind))).first->second;
}

void EstimatorBank::use_pilot(int M, const RMat &W)
{
    if (W.rows() != M || W.cols() != cfg_.N)
        throw std::invalid_argument("pilot matrix must be M x N");
    auto it = pilots_.find(M);
    if (it != pilots_.end() && it->second == W)
        return;
    pilots_[M] = W;
    std::erase_if(setups_, [M](const auto &entry) { return entry.first.second == M; });
}

CMat EstimatorBank::estimate(const std::string &algorithm, DictionaryKind kind, const CMat &Y, int M,
                             double snr_db, const UnfoldedModel *model)
{
    const PilotSetup &s = setup(kind, M);
    const auto &dict = dictionary(kind);
    const double sigma2 = std::pow(10.0, -snr_db / 10.0);
    CMat X;
    if (algorithm == "somp")
        X = somp(Y, s.Phi, solvers_.somp_iters);
    else if (algorithm == "msbl")
        X = msbl(Y, s.Phi, sigma2, solvers_.msbl_iters).X;
    else if (algorithm == "amp_sbl")
        X = amp_sbl(s.whitened, s.whitened.whiten(Y), sigma2, solvers_.amp_iters).X;
    else if (algorithm == "unfolded")
    {
        if (!model)
            throw std::invalid_argument("the unfolded estimator needs a trained model");
        if (kind != DictionaryKind::polar)
            throw std::invalid_argument("the unfolded estimator runs on the polar dictionary only");
        X = unfolded_forward(s.whitened, s.whitened.whiten(Y), sigma2, M, snr_db, *model).X;
    }
    else
        throw std::invalid_argument("unknown algorithm: " + algorithm);
    return reconstruct(dict, X);
}

std::vector<double> nmse_per_sample(EstimatorBank &bank, const std::string &algorithm, DictionaryKind kind,
                                    const DatasetGroup &group, const UnfoldedModel *model)
{
    bank.use_pilot(group.M, group.W);
    std::vector<double> out;
    out.reserve(group.count());
    for (int i = 0; i < group.count(); ++i)
    {
        double v;
        try
        {
            CMat H_hat = bank.estimate(algorithm, kind, group.Y[i], group.M, group.snr_db, model);
            v = H_hat.allFinite() ? nmse(group.H[i], H_hat).linear : std::numeric_limits<double>::infinity();
        }
        catch (const DivergenceError &)
        {
            v = std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(v))
            v = std::numeric_limits<double>::infinity();
        out.push_back(v);
    }
    return out;
}

double mean_nmse_db(const std::vector<double> &linear)
{
    if (linear.empty())
        return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (double v : linear)
        sum += v;
    return 10.0 * std::log10(sum / static_cast<double>(linear.size()));
}

double median(std::vector<double> values)
{
    if (values.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    double hi = values[mid];
    if (values.size() % 2 == 1)
        return hi;
    double lo = *std::max_element(values.begin(), values.begin() + mid);
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------- results

void ExperimentResult::write_csv(std::ostream &os) const
{
    os << "axis,algorithm,dictionary," << metric << ",samples\n";
    os << std::setprecision(10);
    for (const auto &r : rows)
        os << r.axis << ',' << r.algorithm << ',' << r.dictionary << ',' << r.value << ',' << r.samples << '\n';
}

void ExperimentResult::write_summary(std::ostream &os) const
{
    std::set<std::string> seen;
    std::vector<std::string> axes;
    for (const auto &r : rows)
        if (seen.insert(r.axis).second)
            axes.push_back(r.axis);
    for (const auto &axis : axes)
    {
        os << axis << '\n';
        for (const auto &r : rows)
            if (r.axis == axis)
                os << "  " << std::left << std::setw(24) << (r.algorithm + "-" + r.dictionary) << std::right
                   << std::fixed << std::setprecision(3) << std::setw(10) << r.value << "  " << metric << "  (n="
                   << r.samples << ")\n";
    }
    os.unsetf(std::ios::floatfield);
}

const ResultRow *ExperimentResult::find(const std::string &axis, const std::string &algorithm,
                                        const std::string &dictionary) const
{
    for (const auto &r : rows)
        if (r.axis == axis && r.algorithm == algorithm && r.dictionary == dictionary)
            return &r;
    return nullptr;
}

namespace {

std::string number_label(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}

std::string config_label(const ConfigKey &key) { return "M=" + std::to_string(key.M) + ";snr=" + number_label(key.snr_db); }

void check_combinations(const ExperimentSpec &spec)
{
    for (const auto &c : spec.combinations)
    {
        if (c.algorithm != "somp" && c.algorithm != "msbl" && c.algorithm != "amp_sbl" && c.algorithm != "unfolded")
            throw std::invalid_argument("unknown algorithm: " + c.algorithm);
        if (c.algorithm == "unfolded" && !spec.model)
            throw std::invalid_argument("experiment requests the unfolded estimator but no model was given");
        if (c.algorithm == "unfolded" && c.dictionary != DictionaryKind::polar)
            throw std::invalid_argument("the unfolded estimator runs on the polar dictionary only");
    }
}

void score_group(EstimatorBank &bank, const ExperimentSpec &spec, const DatasetGroup &group, const std::string &axis,
                 ExperimentResult &out)
{
    for (const auto &c : spec.combinations)
    {
        auto values = nmse_per_sample(bank, c.algorithm, c.dictionary, group, spec.model ? &*spec.model : nullptr);
        out.rows.push_back({axis, c.algorithm, dictionary_label(c.dictionary), mean_nmse_db(values), group.count()});
        if (spec.verbose)
            std::cerr << axis << ' ' << c.algorithm << '-' << dictionary_label(c.dictionary) << ' '
                      << out.rows.back().value << " dB\n";
    }
}

} // namespace

// ---------------------------------------------------------------- sweeps

ExperimentResult run_vs_M(const ExperimentSpec &spec)
{
    check_combinations(spec);
    EstimatorBank bank(spec.cfg, spec.solvers);
    ExperimentResult out;
    for (int M : spec.M_values)
    {
        const ConfigKey key{M, spec.cfg.snr_db};
        Dataset data = generate_split(spec.cfg, Split::test, spec.samples, std::span(&key, 1));
        score_group(bank, spec, data.groups.front(), std::to_string(M), out);
    }
    return out;
}

ExperimentResult run_vs_rc(const ExperimentSpec &spec)
{
    check_combinations(spec);
    EstimatorBank bank(spec.cfg, spec.solvers);
    ExperimentResult out;
    const ConfigKey key{spec.cfg.M, spec.cfg.snr_db};
    for (double rc : spec.rc_values)
    {
        SystemConfig cfg = spec.cfg;
        cfg.fixed_distance = rc;
        Dataset data = generate_split(cfg, Split::test, spec.samples, std::span(&key, 1));
        score_group(bank, spec, data.groups.front(), number_label(rc), out);
    }
    return out;
}

ExperimentResult run_vs_snr_configs(const ExperimentSpec &spec)
{
    const auto &grid = spec.train.grid;
    if (grid.empty())
        throw std::invalid_argument("vs_snr_configs needs a configuration grid");
    const ConfigKey middle = std::find(grid.begin(), grid.end(), ConfigKey{48, 10.0}) != grid.end()
                                 ? ConfigKey{48, 10.0}
                                 : grid[grid.size() / 2];

    std::vector<Dataset> train, val, test;
    for (const ConfigKey &key : grid)
    {
        auto one = std::span(&key, 1);
        train.push_back(generate_split(spec.cfg, Split::train, spec.train.n_train, one));
        val.push_back(generate_split(spec.cfg, Split::val, spec.train.n_val, one));
        test.push_back(generate_split(spec.cfg, Split::test, spec.train.n_test, one));
    }
    std::vector<const Dataset *> all;
    for (auto *v : {&train, &val, &test})
        for (const auto &d : *v)
            all.push_back(&d);
    const Corpus corpus = make_corpus(spec.cfg, all);

    EstimatorBank bank(spec.cfg, spec.solvers);
    ExperimentResult out;

    // MSBL-AD baselines: validation split for the loss weights, test split for reporting
    std::map<ConfigKey, double> baseline;
    for (std::size_t i = 0; i < grid.size(); ++i)
    {
        auto v = nmse_per_sample(bank, "msbl", DictionaryKind::angular, val[i].groups.front());
        baseline[grid[i]] = std::pow(10.0, mean_nmse_db(v) / 10.0);
        auto t = nmse_per_sample(bank, "msbl", DictionaryKind::angular, test[i].groups.front());
        out.rows.push_back({config_label(grid[i]), "msbl", "AD", mean_nmse_db(t), test[i].size()});
        if (spec.verbose)
            std::cerr << config_label(grid[i]) << " msbl-AD val " << 10 * std::log10(baseline[grid[i]]) << " test "
                      << out.rows.back().value << " dB\n";
    }
    const ConfigWeightTable weighted = compute_config_weights(baseline, middle);
    const ConfigWeightTable uniform = ConfigWeightTable::uniform(grid, middle);

    auto samples_of = [&](std::span<const Dataset> sets) {
        std::vector<TrainingSample> s;
        for (const auto &d : sets)
        {
            auto part = training_samples(d, corpus);
            s.insert(s.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
        return s;
    };
    auto save = [&](const TrainResult &r, const std::string &name) {
        if (spec.artifacts.empty())
            return;
        save_model(r.model, spec.artifacts / name);
        std::ofstream log(spec.artifacts / (name + ".jsonl"));
        r.log.write_jsonl(log);
    };
    auto score = [&](const UnfoldedModel &model, const std::string &label) {
        for (std::size_t i = 0; i < grid.size(); ++i)
        {
            auto v = nmse_per_sample(bank, "unfolded", DictionaryKind::polar, test[i].groups.front(), &model);
            out.rows.push_back({config_label(grid[i]), label, "PD", mean_nmse_db(v), test[i].size()});
            if (spec.verbose)
                std::cerr << config_label(grid[i]) << ' ' << label << ' ' << out.rows.back().value << " dB\n";
        }
    };

    TrainConfig cfg = spec.train;
    cfg.verbose = spec.verbose;

    // separate training: one model per configuration, scored on its own configuration only
    for (std::size_t i = 0; i < grid.size(); ++i)
    {
        auto tr = training_samples(train[i], corpus);
        auto va = training_samples(val[i], corpus);
        const ConfigKey one[] = {grid[i]};
        TrainResult r = layerwise_train(corpus, tr, va, ConfigWeightTable::uniform(one, grid[i]), cfg);
        save(r, "st_M" + std::to_string(grid[i].M) + "_snr" + number_label(grid[i].snr_db));
        auto v = nmse_per_sample(bank, "unfolded", DictionaryKind::polar, test[i].groups.front(), &r.model);
        out.rows.push_back({config_label(grid[i]), "unfolded-ST", "PD", mean_nmse_db(v), test[i].size()});
        if (spec.verbose)
            std::cerr << config_label(grid[i]) << " unfolded-ST " << out.rows.back().value << " dB\n";
    }

    const auto tr = samples_of(train), va = samples_of(val);
    TrainResult mt = mixed_train(corpus, tr, va, weighted, cfg);
    save(mt, "mt");
    score(mt.model, "unfolded-MT");
    TrainResult mt_flat = mixed_train(corpus, tr, va, uniform, cfg);
    save(mt_flat, "mt_unweighted");
    score(mt_flat.model, "unfolded-MT-unweighted");
    return out;
}

ExperimentResult run_optimizer_study(const ExperimentSpec &spec)
{
    const ConfigKey key{spec.cfg.M, spec.cfg.snr_db};
    auto one = std::span(&key, 1);
    Dataset train = generate_split(spec.cfg, Split::train, spec.train.n_train, one);
    Dataset val = generate_split(spec.cfg, Split::val, spec.train.n_val, one);
    const Dataset *sets[] = {&train, &val};
    const Corpus corpus = make_corpus(spec.cfg, sets);
    const auto tr = training_samples(train, corpus), va = training_samples(val, corpus);
    const ConfigKey keys[] = {key};
    const ConfigWeightTable table = ConfigWeightTable::uniform(keys, key);

    ExperimentResult out;
    const std::pair<OptimizerKind, const char *> kinds[] = {
        {OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}, {OptimizerKind::momentum, "momentum"}};
    const int depth = std::max(1, std::min(spec.train.L_max, 3));
    for (const auto &[kind, name] : kinds)
    {
        TrainConfig cfg = spec.train;
        cfg.optimizer = kind;
        cfg.verbose = spec.verbose;
        // learning-rate decay and early stopping off so every curve spans the same epochs
        cfg.lr_patience = cfg.max_epochs + 1;
        cfg.early_stop_patience = cfg.max_epochs + 1;
        UnfoldedModel init = initial_model(corpus.S, corpus.Q, depth, cfg.seed);
        Evaluation before = evaluate(init, corpus, va, table);
        out.rows.push_back({"0", name, "PD", 10.0 * std::log10(before.nmse.at(key)), val.size()});
        TrainResult r = train_fixed_depth(init, corpus, tr, va, table, cfg);
        for (const auto &e : r.log.epochs)
            out.rows.push_back({std::to_string(e.epoch), name, "PD", 10.0 * std::log10(e.val_nmse.at(key)), val.size()});
    }
    return out;
}

ExperimentResult run_sparsity_structure(const ExperimentSpec &spec)
{
    const SystemConfig &base = spec.cfg;
    base.validate();
    const int K = base.K;
    const int picks = std::clamp(spec.dictionary_subcarriers, 2, K);
    std::vector<int> ks;
    for (int i = 0; i < picks; ++i)
        ks.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (K - 1) / (picks - 1))));

    const double d = base.antenna_spacing();
    const PolarGrid grid = build_grid(base);
    std::vector<CMat> polar, angular;
    for (int k : ks)
        polar.push_back(polar_matrix(grid, subcarrier_frequency(base, k), base.N, d));
    angular.assign(ks.size(), build_angular_dictionary(base.N, base.Q, base.f_c, d));

    // minimum-norm least-squares coefficients A^H (A A^H)^-1 h, one factorisation per matrix
    std::vector<Eigen::LLT<CMat>> polar_gram, angular_gram;
    for (const CMat &A : polar)
        polar_gram.emplace_back(A * A.adjoint());
    for (const CMat &A : angular)
        angular_gram.emplace_back(A * A.adjoint());

    auto support_overlap = [&](const CMat &H, const std::vector<CMat> &dicts, const std::vector<Eigen::LLT<CMat>> &grams) {
        std::vector<std::set<Eigen::Index>> supports;
        for (std::size_t i = 0; i < ks.size(); ++i)
        {
            const CVec x = dicts[i].adjoint() * grams[i].solve(CVec(H.col(ks[i])));
            std::vector<Eigen::Index> order(x.size());
            std::iota(order.begin(), order.end(), Eigen::Index{0});
            const auto P = std::min<std::size_t>(spec.support_size, order.size());
            std::partial_sort(order.begin(), order.begin() + P, order.end(),
                              [&](Eigen::Index a, Eigen::Index b) { return std::abs(x(a)) > std::abs(x(b)); });
            supports.emplace_back(order.begin(), order.begin() + P);
        }
        double total = 0.0;
        int pairs = 0;
        for (std::size_t a = 0; a < supports.size(); ++a)
            for (std::size_t b = a + 1; b < supports.size(); ++b)
            {
                std::size_t inter = 0;
                for (auto g : supports[a])
                    inter += supports[b].count(g);
                const std::size_t uni = supports[a].size() + supports[b].size() - inter;
                total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
                ++pairs;
            }
        return total / pairs;
    };

    ExperimentResult out;
    out.metric = "jaccard";
    for (double rc : spec.rc_values)
    {
        SystemConfig cfg = base;
        cfg.fixed_distance = rc;
        double pd = 0.0, ad = 0.0;
        for (int i = 0; i < spec.samples; ++i)
        {
            Rng rng = make_stream(cfg.seed, {0x6a6163, static_cast<std::uint64_t>(std::llround(rc * 1000)),
                                             static_cast<std::uint64_t>(i)});
            const CMat H = sample_channel(cfg, rng).H;
            pd += support_overlap(H, polar, polar_gram);
            ad += support_overlap(H, angular, angular_gram);
        }
        out.rows.push_back({number_label(rc), "ls_support", "PD", pd / spec.samples, spec.samples});
        out.rows.push_back({number_label(rc), "ls_support", "AD", ad / spec.samples, spec.samples});
    }
    return out;
}

ExperimentResult run_experiment(const std::string &kind, const ExperimentSpec &spec)
{
    if (kind == "vs_M")
        return run_vs_M(spec);
    if (kind == "vs_rc")
        return run_vs_rc(spec);
    if (kind == "vs_snr_configs")
        return run_vs_snr_configs(spec);
    if (kind == "optimizer_study")
        return run_optimizer_study(spec);
    if (kind == "sparsity_structure")
        return run_sparsity_structure(spec);
    throw std::invalid_argument("unknown experiment: " + kind);
}

// ---------------------------------------------------------------- timing

std::vector<TimingRow> benchmark_runtime(const std::vector<Combination> &algs, const SystemConfig &cfg,
                                         int repetitions, const SolverSettings &solvers, const UnfoldedModel *model)
{
    if (repetitions < 1)
        throw std::invalid_argument("benchmark_runtime: at least one repetition is required");
    EstimatorBank bank(cfg, solvers);
    const ConfigKey key{cfg.M, cfg.snr_db};
    Dataset data = generate_split(cfg, Split::test, 1, std::span(&key, 1));
    const DatasetGroup &g = data.groups.front();

    std::vector<TimingRow> rows;
    for (const auto &c : algs)
    {
        auto run = [&] {
            try
            {
                return bank.estimate(c.algorithm, c.dictionary, g.Y[0], g.M, g.snr_db, model);
            }
            catch (const DivergenceError &)
            {
                return CMat();
            }
        };
        run(); // warm-up, also builds the dictionaries and pilot setups
        std::vector<double> ms;
        for (int r = 0; r < repetitions; ++r)
        {
            auto t0 = std::chrono::steady_clock::now();
            run();
            auto t1 = std::chrono::steady_clock::now();
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(ms.begin(), ms.end());
        auto quantile = [&](double p) {
            const double pos = p * static_cast<double>(ms.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, ms.size() - 1);
            return ms[lo] + (pos - static_cast<double>(lo)) * (ms[hi] - ms[lo]);
        };
        rows.push_back({c.algorithm, dictionary_label(c.dictionary), quantile(0.5), quantile(0.75) - quantile(0.25),
                        repetitions});
    }
    return rows;
}

void write_timing_csv(const std::vector<TimingRow> &rows, std::ostream &os)
{
    os << "algorithm,dictionary,median_ms,iqr_ms,repetitions\n" << std::setprecision(8);
    for (const auto &r : rows)
        os << r.algorithm << ',' << r.dictionary << ',' << r.median_ms << ',' << r.iqr_ms << ',' << r.repetitions
           << '\n';
}

} // namespace thzce
