// Command-line front end: dataset generation, training, estimation, timing, FLOP
// accounting and the experiment sweeps.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "thzce/channel_model.hpp"
#include "thzce/dataset.hpp"
#include "thzce/experiments.hpp"
#include "thzce/flops.hpp"
#include "thzce/polar_dictionary.hpp"
#include "thzce/training.hpp"
#include "thzce/unfolded_estimator.hpp"

using namespace thzce;

namespace {

// SystemConfig flags, applied on top of the chosen preset.
struct ConfigFlags
{
    std::string preset = "desk";
    std::map<std::string, std::string> values;
    std::vector<CLI::Option *> options;

    void attach(CLI::App *app)
    {
        app->add_option("--preset", preset, "Parameter preset (desk or full)")->capture_default_str();
        for (const auto &[name, v] : config_fields(SystemConfig{}))
            options.push_back(app->add_option("--" + name, values[name], "SystemConfig." + name));
        options.push_back(app->add_option("--fixed_distance", values["fixed_distance"],
                                          "Place every path at this distance (m)"));
    }

    SystemConfig resolve() const
    {
        SystemConfig cfg = SystemConfig::preset(preset);
        for (auto *opt : options)
            if (opt->count() > 0)
                set_config_field(cfg, opt->get_name().substr(2), values.at(opt->get_name().substr(2)));
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags
{
    TrainConfig cfg;
    std::string grid;
    std::string optimizer = "adam";

    void attach(CLI::App *app)
    {
        app->add_option("--lr0", cfg.lr0)->capture_default_str();
        app->add_option("--batch", cfg.batch)->capture_default_str();
        app->add_option("--max_epochs", cfg.max_epochs)->capture_default_str();
        app->add_option("--lr_decay", cfg.lr_decay)->capture_default_str();
        app->add_option("--lr_patience", cfg.lr_patience)->capture_default_str();
        app->add_option("--early_stop_patience", cfg.early_stop_patience)->capture_default_str();
        app->add_option("--L_max", cfg.L_max)->capture_default_str();
        app->add_option("--n_train", cfg.n_train)->capture_default_str();
        app->add_option("--n_val", cfg.n_val)->capture_default_str();
        app->add_option("--n_test", cfg.n_test)->capture_default_str();
        app->add_option("--train_seed", cfg.seed, "Seed for initialisation and batch order")->capture_default_str();
        app->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd", "momentum"}))->capture_default_str();
        app->add_option("--grid", grid, "Configurations as M:snr pairs, e.g. 32:0,48:10");
    }

    TrainConfig resolve(const SystemConfig &sys) const
    {
        TrainConfig out = cfg;
        out.optimizer = optimizer == "sgd" ? OptimizerKind::sgd
                        : optimizer == "momentum" ? OptimizerKind::momentum
                                                  : OptimizerKind::adam;
        out.grid = grid.empty() ? std::vector<ConfigKey>{{sys.M, sys.snr_db}} : parse_grid(grid);
        return out;
    }

    static std::vector<ConfigKey> parse_grid(const std::string &text)
    {
        std::vector<ConfigKey> keys;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ','))
        {
            auto colon = item.find(':');
            if (colon == std::string::npos)
                throw std::invalid_argument("grid entries look like M:snr, got " + item);
            keys.push_back({std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
        }
        return keys;
    }
};

std::vector<Combination> parse_combinations(const std::vector<std::string> &items)
{
    std::vector<Combination> out;
    for (const auto &item : items)
    {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            out.push_back({item, DictionaryKind::polar});
        else
            out.push_back({item.substr(0, colon), parse_dictionary(item.substr(colon + 1))});
    }
    return out;
}

void add_solver_flags(CLI::App *app, SolverSettings &s)
{
    app->add_option("--somp_iters", s.somp_iters)->capture_default_str();
    app->add_option("--msbl_iters", s.msbl_iters)->capture_default_str();
    app->add_option("--amp_iters", s.amp_iters)->capture_default_str();
}

template <typename F>
void write_output(const std::string &path, F &&write)
{
    if (path.empty() || path == "-")
    {
        write(std::cout);
        return;
    }
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    write(os);
}

ConfigKey middle_of(const std::vector<ConfigKey> &grid)
{
    for (const auto &k : grid)
        if (k.M == 48 && k.snr_db == 10.0)
            return k;
    return grid[grid.size() / 2];
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Wideband near-field channel estimation toolkit"};
    app.set_config("--config", "", "Read options from a TOML/INI file (sections named after subcommands)");
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    // generate
    auto *gen = app.add_subcommand("generate", "Generate train/val/test datasets");
    ConfigFlags gen_cfg;
    TrainFlags gen_train;
    std::string gen_out = "data";
    gen_cfg.attach(gen);
    gen_train.attach(gen);
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    // train
    auto *train = app.add_subcommand("train", "Layer-wise training of the unfolded estimator");
    TrainFlags train_flags;
    std::string train_data, train_out = "model", train_log;
    bool weighted = false, verbose = false;
    train_flags.attach(train);
    train->add_option("--data", train_data, "Dataset directory holding train/ and val/")->required();
    train->add_option("--out", train_out, "Model directory")->capture_default_str();
    train->add_option("--log", train_log, "JSONL training log");
    train->add_flag("--weighted", weighted, "Weight configurations by MSBL-AD validation NMSE");
    train->add_flag("--verbose", verbose);

    // estimate
    auto *est = app.add_subcommand("estimate", "Run an estimator over a dataset split");
    std::string est_data, est_alg = "msbl", est_dict = "AD", est_model, est_out;
    SolverSettings est_solvers;
    est->add_option("--data", est_data, "Dataset split directory (e.g. data/test)")->required();
    est->add_option("--alg", est_alg)->check(CLI::IsMember({"somp", "msbl", "amp_sbl", "unfolded"}))->capture_default_str();
    est->add_option("--dict", est_dict)->check(CLI::IsMember({"AD", "PD"}))->capture_default_str();
    est->add_option("--model", est_model, "Model directory for --alg unfolded");
    est->add_option("--out", est_out, "CSV output (default stdout)");
    add_solver_flags(est, est_solvers);

    // bench
    auto *bench = app.add_subcommand("bench", "Wall-clock timing per solve");
    ConfigFlags bench_cfg;
    std::vector<std::string> bench_algs = {"somp:PD", "msbl:PD", "amp_sbl:PD"};
    int reps = 5;
    std::string bench_model, bench_out;
    SolverSettings bench_solvers;
    bench_cfg.attach(bench);
    bench->add_option("--alg", bench_algs, "algorithm:dictionary pairs")->delimiter(',')->capture_default_str();
    bench->add_option("--reps", reps)->check(CLI::PositiveNumber)->capture_default_str();
    bench->add_option("--model", bench_model, "Model directory (needed for unfolded)");
    bench->add_option("--out", bench_out, "CSV output (default stdout)");
    add_solver_flags(bench, bench_solvers);

    // flops
    auto *fl = app.add_subcommand("flops", "Closed-form FLOP counts");
    std::string fl_alg = "msbl";
    long fl_K = 32, fl_M = 48, fl_G = 3072, fl_iters = 100;
    fl->add_option("--alg", fl_alg)->check(CLI::IsMember({"sbl", "msbl", "amp_sbl", "unfolded", "somp"}))->capture_default_str();
    fl->add_option("--K", fl_K)->capture_default_str();
    fl->add_option("--M", fl_M)->capture_default_str();
    fl->add_option("--G", fl_G)->capture_default_str();
    fl->add_option("--iters", fl_iters)->capture_default_str();

    // experiment
    auto *exp = app.add_subcommand("experiment", "Experiment sweeps emitting CSV");
    std::string exp_kind, exp_model, exp_out, exp_artifacts;
    std::vector<std::string> exp_algs;
    ExperimentSpec spec;
    ConfigFlags exp_cfg;
    TrainFlags exp_train;
    exp->add_option("kind", exp_kind, "vs_M | vs_rc | vs_snr_configs | optimizer_study | sparsity_structure")
        ->required()
        ->check(CLI::IsMember({"vs_M", "vs_rc", "vs_snr_configs", "optimizer_study", "sparsity_structure"}));
    exp_cfg.attach(exp);
    exp_train.attach(exp);
    exp->add_option("--samples", spec.samples)->check(CLI::PositiveNumber)->capture_default_str();
    exp->add_option("--M_values", spec.M_values)->delimiter(',')->capture_default_str();
    exp->add_option("--rc_values", spec.rc_values)->delimiter(',')->capture_default_str();
    exp->add_option("--alg", exp_algs, "algorithm:dictionary pairs")->delimiter(',');
    exp->add_option("--model", exp_model, "Model directory (adds unfolded:PD)");
    exp->add_option("--support_size", spec.support_size)->capture_default_str();
    exp->add_option("--dictionary_subcarriers", spec.dictionary_subcarriers)->capture_default_str();
    exp->add_option("--artifacts", exp_artifacts, "Directory for models trained by the experiment");
    exp->add_option("--out", exp_out, "CSV output (default stdout)");
    exp->add_flag("--verbose", spec.verbose);
    add_solver_flags(exp, spec.solvers);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try
    {
        if (*gen)
        {
            SystemConfig cfg = gen_cfg.resolve();
            TrainConfig tc = gen_train.resolve(cfg);
            generate_dataset(cfg, {tc.n_train, tc.n_val, tc.n_test}, tc.grid, gen_out);
            std::cout << "wrote " << gen_out << ": " << tc.grid.size() << " configuration(s), " << tc.n_train << '/'
                      << tc.n_val << '/' << tc.n_test << " samples each, r_Ray = " << rayleigh_distance(cfg)
                      << " m, G = " << build_grid(cfg).size() << '\n';
        }
        else if (*train)
        {
            Dataset tr = load_dataset(std::filesystem::path(train_data) / "train");
            Dataset va = load_dataset(std::filesystem::path(train_data) / "val");
            const Dataset *sets[] = {&tr, &va};
            Corpus corpus = make_corpus(tr.cfg, sets);
            auto tr_samples = training_samples(tr, corpus), va_samples = training_samples(va, corpus);

            std::vector<ConfigKey> grid;
            for (const auto &g : tr.groups)
                grid.push_back({g.M, g.snr_db});
            const ConfigKey middle = middle_of(grid);
            ConfigWeightTable table = ConfigWeightTable::uniform(grid, middle);
            if (weighted)
            {
                EstimatorBank bank(tr.cfg);
                std::map<ConfigKey, double> baseline;
                for (const auto &g : va.groups)
                    baseline[{g.M, g.snr_db}] =
                        std::pow(10.0, mean_nmse_db(nmse_per_sample(bank, "msbl", DictionaryKind::angular, g)) / 10.0);
                table = compute_config_weights(baseline, middle);
            }
            TrainConfig tc = train_flags.resolve(tr.cfg);
            tc.grid = grid;
            tc.verbose = verbose;
            TrainResult result = mixed_train(corpus, tr_samples, va_samples, table, tc);
            for (const auto &[k, v] : config_fields(tr.cfg))
                result.model.metadata["config." + k] = v;
            save_model(result.model, train_out);
            if (!train_log.empty())
            {
                std::ofstream log(train_log);
                result.log.write_jsonl(log);
            }
            std::cout << "trained depth " << result.model.depth() << ", best validation loss "
                      << result.log.stages.back().best_val_loss << ", saved to " << train_out << '\n';
        }
        else if (*est)
        {
            Dataset data = load_dataset(est_data);
            std::optional<UnfoldedModel> model;
            if (!est_model.empty())
                model = load_model(est_model);
            EstimatorBank bank(data.cfg, est_solvers);
            ExperimentResult result;
            for (const auto &g : data.groups)
            {
                auto values = nmse_per_sample(bank, est_alg, parse_dictionary(est_dict), g, model ? &*model : nullptr);
                std::ostringstream axis;
                axis << "M=" << g.M << ";snr=" << g.snr_db;
                result.rows.push_back({axis.str(), est_alg, est_dict, mean_nmse_db(values), g.count()});
            }
            write_output(est_out, [&](std::ostream &os) { result.write_csv(os); });
            if (!est_out.empty())
                result.write_summary(std::cout);
        }
        else if (*bench)
        {
            SystemConfig cfg = bench_cfg.resolve();
            std::optional<UnfoldedModel> model;
            if (!bench_model.empty())
                model = load_model(bench_model);
            auto rows = benchmark_runtime(parse_combinations(bench_algs), cfg, reps, bench_solvers,
                                          model ? &*model : nullptr);
            write_output(bench_out, [&](std::ostream &os) { write_timing_csv(rows, os); });
        }
        else if (*fl)
        {
            FlopAlgorithm alg = parse_flop_algorithm(fl_alg);
            const double per = flops_per_iteration(alg, fl_K, fl_M, fl_G);
            const double total = flops(alg, fl_K, fl_M, fl_G, fl_iters);
            std::cout << std::fixed << std::setprecision(3) << "algorithm " << fl_alg << "\nper_iteration "
                      << per / 1e9 << "e9\ntotal " << total / 1e9 << "e9\n"
                      << std::setprecision(0) << "per_iteration_flops " << per << "\ntotal_flops " << total << '\n';
        }
        else if (*exp)
        {
            spec.cfg = exp_cfg.resolve();
            spec.train = exp_train.resolve(spec.cfg);
            if (!exp_algs.empty())
                spec.combinations = parse_combinations(exp_algs);
            if (!exp_model.empty())
            {
                spec.model = load_model(exp_model);
                if (exp_algs.empty())
                    spec.combinations.push_back({"unfolded", DictionaryKind::polar});
            }
            if (!exp_artifacts.empty())
            {
                spec.artifacts = exp_artifacts;
                std::filesystem::create_directories(spec.artifacts);
            }
            ExperimentResult result = run_experiment(exp_kind, spec);
            write_output(exp_out, [&](std::ostream &os) { result.write_csv(os); });
            if (!exp_out.empty())
                result.write_summary(std::cout);
        }
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
