#include "thzce/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "thzce/binary_io.hpp"
#include "thzce/channel_model.hpp"
#include "thzce/measurement.hpp"
#include "thzce/polar_dictionary.hpp"

namespace thzce {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPilotStream = 0x70696c6f74;
constexpr std::uint64_t kSampleStream = 0x73616d706c65;

std::uint64_t snr_id(double snr_db) { return static_cast<std::uint64_t>(std::llround(snr_db * 1000.0) + (1LL << 40)); }

std::string exact(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double parse_double(const std::string &s)
{
    if (s == "inf")
        return std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size())
        throw std::invalid_argument("not a number: " + s);
    return v;
}

std::vector<double> flatten(std::span<const CMat> mats)
{
    std::vector<double> out;
    if (mats.empty())
        return out;
    const auto rows = mats.front().rows(), cols = mats.front().cols();
    out.reserve(mats.size() * rows * cols * 2);
    for (const CMat &m : mats)
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
            {
                out.push_back(m(i, j).real());
                out.push_back(m(i, j).imag());
            }
    return out;
}

std::vector<CMat> unflatten(const std::vector<double> &v, std::size_t count, Eigen::Index rows, Eigen::Index cols)
{
    std::vector<CMat> out(count, CMat(rows, cols));
    std::size_t p = 0;
    for (CMat &m : out)
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j, p += 2)
                m(i, j) = {v[p], v[p + 1]};
    return out;
}

std::vector<double> flatten(const RMat &W)
{
    std::vector<double> out;
    out.reserve(W.size());
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            out.push_back(W(i, j));
    return out;
}

std::string dims_string(std::initializer_list<std::size_t> dims)
{
    std::string s;
    for (auto d : dims)
        s += (s.empty() ? "" : ",") + std::to_string(d);
    return s;
}

std::vector<std::size_t> parse_dims(const std::string &s)
{
    std::vector<std::size_t> dims;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        dims.push_back(std::stoul(part));
    return dims;
}

} // namespace

int Dataset::size() const
{
    int n = 0;
    for (const auto &g : groups)
        n += g.count();
    return n;
}

const char *split_name(Split split)
{
    switch (split)
    {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "?";
}

RMat pilot_matrix_for(const SystemConfig &cfg, int M)
{
    Rng rng = make_stream(cfg.seed, {kPilotStream, static_cast<std::uint64_t>(M)});
    return generate_pilot_matrix(M, cfg.N, rng);
}

Dataset generate_split(const SystemConfig &cfg, Split split, int count, std::span<const ConfigKey> grid)
{
    cfg.validate();
    if (count < 0)
        throw std::invalid_argument("sample count must be non-negative");
    Dataset data;
    data.cfg = cfg;
    data.split = split_name(split);
    std::map<int, RMat> pilots;
    for (const ConfigKey &key : grid)
    {
        if (key.M < 1 || key.M > cfg.N)
            throw std::invalid_argument("pilot length M must lie in [1, N]");
        if (!pilots.contains(key.M))
            pilots[key.M] = pilot_matrix_for(cfg, key.M);
        DatasetGroup g;
        g.M = key.M;
        g.snr_db = key.snr_db;
        g.W = pilots[key.M];
        const double sigma2 = std::pow(10.0, -key.snr_db / 10.0);
        for (int i = 0; i < count; ++i)
        {
            Rng rng = make_stream(cfg.seed, {kSampleStream, static_cast<std::uint64_t>(split),
                                             static_cast<std::uint64_t>(key.M), snr_id(key.snr_db),
                                             static_cast<std::uint64_t>(i)});
            ChannelRealization ch = sample_channel(cfg, rng);
            g.Y.push_back(observe(ch.H, g.W, sigma2, rng));
            g.H.push_back(std::move(ch.H));
        }
        data.groups.push_back(std::move(g));
    }
    return data;
}

std::vector<std::pair<std::string, std::string>> config_fields(const SystemConfig &cfg)
{
    std::vector<std::pair<std::string, std::string>> f = {
        {"N", std::to_string(cfg.N)},
        {"K", std::to_string(cfg.K)},
        {"f_c", exact(cfg.f_c)},
        {"f_s", exact(cfg.f_s)},
        {"M", std::to_string(cfg.M)},
        {"snr_db", exact(cfg.snr_db)},
        {"N_c", std::to_string(cfg.N_c)},
        {"N_p", std::to_string(cfg.N_p)},
        {"Q", std::to_string(cfg.Q)},
        {"beta", exact(cfg.beta)},
        {"rho_min", exact(cfg.rho_min)},
        {"seed", std::to_string(cfg.seed)},
        {"N_RF", std::to_string(cfg.N_RF)},
        {"cluster_r_min", exact(cfg.cluster_r_min)},
        {"cluster_r_max", exact(cfg.cluster_r_max)},
        {"angle_spread_deg", exact(cfg.angle_spread_deg)},
        {"distance_spread_m", exact(cfg.distance_spread_m)},
    };
    if (cfg.fixed_distance)
        f.emplace_back("fixed_distance", exact(*cfg.fixed_distance));
    return f;
}

void set_config_field(SystemConfig &cfg, const std::string &name, const std::string &value)
{
    auto as_int = [&] { return std::stoi(value); };
    if (name == "N") cfg.N = as_int();
    else if (name == "K") cfg.K = as_int();
    else if (name == "f_c") cfg.f_c = parse_double(value);
    else if (name == "f_s") cfg.f_s = parse_double(value);
    else if (name == "M") cfg.M = as_int();
    else if (name == "snr_db") cfg.snr_db = parse_double(value);
    else if (name == "N_c") cfg.N_c = as_int();
    else if (name == "N_p") cfg.N_p = as_int();
    else if (name == "Q") cfg.Q = as_int();
    else if (name == "beta") cfg.beta = parse_double(value);
    else if (name == "rho_min") cfg.rho_min = parse_double(value);
    else if (name == "seed") cfg.seed = std::stoull(value);
    else if (name == "N_RF") cfg.N_RF = as_int();
    else if (name == "cluster_r_min") cfg.cluster_r_min = parse_double(value);
    else if (name == "cluster_r_max") cfg.cluster_r_max = parse_double(value);
    else if (name == "angle_spread_deg") cfg.angle_spread_deg = parse_double(value);
    else if (name == "distance_spread_m") cfg.distance_spread_m = parse_double(value);
    else if (name == "fixed_distance") cfg.fixed_distance = parse_double(value);
    else throw std::invalid_argument("unknown SystemConfig field: " + name);
}

void save_dataset(const Dataset &data, const fs::path &dir)
{
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    manifest << "format thzce-dataset\nversion 1\nsplit " << data.split << '\n';
    for (const auto &[k, v] : config_fields(data.cfg))
        manifest << "config " << k << ' ' << v << '\n';
    const auto N = static_cast<std::size_t>(data.cfg.N), K = static_cast<std::size_t>(data.cfg.K);
    for (std::size_t gi = 0; gi < data.groups.size(); ++gi)
    {
        const DatasetGroup &g = data.groups[gi];
        const std::string p = "group" + std::to_string(gi);
        const auto n = static_cast<std::size_t>(g.count()), M = static_cast<std::size_t>(g.M);
        if (g.Y.size() != n || g.W.rows() != g.M || g.W.cols() != data.cfg.N)
            throw std::invalid_argument("dataset group shapes are inconsistent");
        manifest << "group " << gi << " M " << g.M << " snr_db " << exact(g.snr_db) << " count " << n << '\n';
        manifest << "array " << p << ".W float64 " << dims_string({M, N}) << ' ' << p << "_W.bin\n";
        manifest << "array " << p << ".H complex128 " << dims_string({n, N, K}) << ' ' << p << "_H.bin\n";
        manifest << "array " << p << ".Y complex128 " << dims_string({n, M, K}) << ' ' << p << "_Y.bin\n";
        write_f64_blob(dir / (p + "_W.bin"), flatten(g.W));
        write_f64_blob(dir / (p + "_H.bin"), flatten(g.H));
        write_f64_blob(dir / (p + "_Y.bin"), flatten(g.Y));
    }
    if (!manifest)
        throw std::runtime_error("failed writing dataset manifest");
}

Dataset load_dataset(const fs::path &dir)
{
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw std::runtime_error("cannot read " + (dir / "manifest.txt").string());
    Dataset data;
    std::string line;
    bool format_ok = false;
    struct ArrayEntry
    {
        std::string dtype;
        std::vector<std::size_t> dims;
        std::string file;
    };
    std::map<std::string, ArrayEntry> arrays;
    std::vector<std::pair<DatasetGroup, std::size_t>> groups;
    while (std::getline(manifest, line))
    {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag.empty())
            continue;
        if (tag == "format")
        {
            std::string f;
            ls >> f;
            format_ok = f == "thzce-dataset";
        }
        else if (tag == "version")
        {
            int v = 0;
            ls >> v;
            if (v != 1)
                throw std::runtime_error("unsupported dataset version " + std::to_string(v));
        }
        else if (tag == "split")
            ls >> data.split;
        else if (tag == "config")
        {
            std::string k, v;
            ls >> k >> v;
            set_config_field(data.cfg, k, v);
        }
        else if (tag == "group")
        {
            std::size_t index, count;
            std::string m_tag, s_tag, c_tag, snr;
            DatasetGroup g;
            ls >> index >> m_tag >> g.M >> s_tag >> snr >> c_tag >> count;
            if (!ls || m_tag != "M" || s_tag != "snr_db" || c_tag != "count" || index != groups.size())
                throw std::runtime_error("malformed group line: " + line);
            g.snr_db = parse_double(snr);
            groups.emplace_back(std::move(g), count);
        }
        else if (tag == "array")
        {
            std::string name, dtype, dims, file;
            ls >> name >> dtype >> dims >> file;
            if (!ls)
                throw std::runtime_error("malformed array line: " + line);
            arrays[name] = {dtype, parse_dims(dims), file};
        }
        else
            throw std::runtime_error("unknown manifest entry: " + tag);
    }
    if (!format_ok)
        throw std::runtime_error("not a thzce dataset: " + dir.string());
    data.cfg.validate();

    auto load_array = [&](const std::string &name, const std::string &dtype,
                          std::initializer_list<std::size_t> expect) {
        auto it = arrays.find(name);
        if (it == arrays.end())
            throw std::runtime_error("manifest lacks array " + name);
        if (it->second.dtype != dtype || it->second.dims != std::vector<std::size_t>(expect))
            throw std::runtime_error("array " + name + " has unexpected type or shape");
        std::vector<double> v = read_f64_blob(dir / it->second.file);
        std::size_t n = dtype == "complex128" ? 2 : 1;
        for (auto d : expect)
            n *= d;
        if (v.size() != n)
            throw std::runtime_error("blob " + it->second.file + " length does not match its manifest shape");
        return v;
    };

    const auto N = static_cast<std::size_t>(data.cfg.N), K = static_cast<std::size_t>(data.cfg.K);
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
    {
        auto &[g, n] = groups[gi];
        const std::string p = "group" + std::to_string(gi);
        const auto M = static_cast<std::size_t>(g.M);
        auto w = load_array(p + ".W", "float64", {M, N});
        g.W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            w.data(), g.M, data.cfg.N);
        g.H = unflatten(load_array(p + ".H", "complex128", {n, N, K}), n, data.cfg.N, data.cfg.K);
        g.Y = unflatten(load_array(p + ".Y", "complex128", {n, M, K}), n, g.M, data.cfg.K);
        data.groups.push_back(std::move(g));
    }
    if (arrays.size() != 3 * data.groups.size())
        throw std::runtime_error("manifest lists arrays that belong to no group");
    return data;
}

void generate_dataset(const SystemConfig &cfg, const SplitCounts &counts, std::span<const ConfigKey> grid,
                      const fs::path &dir)
{
    save_dataset(generate_split(cfg, Split::train, counts.train, grid), dir / "train");
    save_dataset(generate_split(cfg, Split::val, counts.val, grid), dir / "val");
    save_dataset(generate_split(cfg, Split::test, counts.test, grid), dir / "test");
}

Corpus make_corpus(const SystemConfig &cfg, std::span<const Dataset *const> splits)
{
    Corpus corpus;
    PolarDictionary dict = build_polar_dictionary(cfg);
    corpus.S = dict.grid.S;
    corpus.Q = dict.grid.Q;
    corpus.dictionary = std::move(dict.atoms);
    for (const Dataset *d : splits)
        for (const DatasetGroup &g : d->groups)
        {
            auto it = corpus.setups.find(g.M);
            if (it == corpus.setups.end())
                corpus.setups.emplace(g.M, make_pilot_setup(g.W, corpus.dictionary));
            else if (it->second.W != g.W)
                throw std::invalid_argument("groups with equal M use different pilot matrices");
        }
    return corpus;
}

std::vector<TrainingSample> training_samples(const Dataset &data, const Corpus &corpus)
{
    std::vector<TrainingSample> out;
    out.reserve(data.size());
    for (const DatasetGroup &g : data.groups)
    {
        const WhitenedProblem &problem = corpus.setup(g.M).whitened;
        for (int i = 0; i < g.count(); ++i)
            out.push_back({g.H[i], problem.whiten(g.Y[i]), g.M, g.snr_db});
    }
    return out;
}

} // namespace thzce
