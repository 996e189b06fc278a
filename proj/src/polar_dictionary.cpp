#include "thzce/polar_dictionary.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "thzce/channel_model.hpp"

namespace thzce {

PolarGrid build_grid(const SystemConfig &cfg)
{
    cfg.validate();
    PolarGrid grid;
    grid.Q = cfg.Q;

    const double d = cfg.antenna_spacing();
    const double N = cfg.N;
    grid.z_delta = N * N * d * d / (2.0 * cfg.beta * cfg.beta * cfg.wavelength());
    // smallest S with z_delta / S < rho_min
    grid.S = static_cast<int>(std::floor(grid.z_delta / cfg.rho_min)) + 1;

    grid.theta.resize(grid.Q);
    for (int q = 0; q < grid.Q; ++q)
        grid.theta[q] = (2.0 * q - grid.Q + 1) / grid.Q;

    grid.r.resize(grid.S, grid.Q);
    for (int q = 0; q < grid.Q; ++q)
    {
        grid.r(0, q) = std::numeric_limits<double>::infinity();
        for (int s = 1; s < grid.S; ++s)
            grid.r(s, q) = grid.z_delta * (1.0 - grid.theta[q] * grid.theta[q]) / s;
    }
    return grid;
}

CMat polar_matrix(const PolarGrid &grid, double f, int N, double d)
{
    CMat A(N, grid.size());
    for (int s = 0; s < grid.S; ++s)
        for (int q = 0; q < grid.Q; ++q)
            A.col(grid.index(s, q)) = near_field_steering(grid.theta[q], grid.r(s, q), f, N, d);
    return A;
}

PolarDictionary build_polar_dictionary(const SystemConfig &cfg)
{
    PolarDictionary dict;
    dict.grid = build_grid(cfg);
    dict.frequencies = subcarrier_frequencies(cfg);
    dict.atoms.reserve(cfg.K);
    for (double f : dict.frequencies)
        dict.atoms.push_back(polar_matrix(dict.grid, f, cfg.N, cfg.antenna_spacing()));
    return dict;
}

CMat build_angular_dictionary(int N, int Q, double f, double d)
{
    if (N < 1 || Q < 1)
        throw std::invalid_argument("angular dictionary needs N, Q >= 1");
    CMat A(N, Q);
    for (int q = 0; q < Q; ++q)
        A.col(q) = far_field_steering((2.0 * q - Q + 1) / Q, f, N, d);
    return A;
}

std::vector<CMat> build_angular_dictionaries(const SystemConfig &cfg, bool frequency_dependent)
{
    std::vector<CMat> out;
    out.reserve(cfg.K);
    const double d = cfg.antenna_spacing();
    if (!frequency_dependent)
    {
        CMat common = build_angular_dictionary(cfg.N, cfg.Q, cfg.f_c, d);
        out.assign(cfg.K, common);
        return out;
    }
    for (double f : subcarrier_frequencies(cfg))
        out.push_back(build_angular_dictionary(cfg.N, cfg.Q, f, d));
    return out;
}

double mutual_coherence(const CMat &A)
{
    RVec norms = A.colwise().norm().transpose();
    for (Eigen::Index i = 0; i < norms.size(); ++i)
        if (norms(i) == 0.0)
            throw std::invalid_argument("mutual coherence undefined for a zero column");

    CMat gram = A.adjoint() * A;
    double best = 0.0;
    for (Eigen::Index j = 0; j < gram.cols(); ++j)
        for (Eigen::Index i = 0; i < j; ++i)
            best = std::max(best, std::min(1.0, std::abs(gram(i, j)) / (norms(i) * norms(j))));
    return best;
}

CVec polar_transform(const CVec &x, const CMat &A)
{
    if (x.size() != A.cols())
        throw std::invalid_argument("polar_transform: coefficient length does not match dictionary");
    return A * x;
}

void write_grid_csv(const PolarGrid &grid, std::ostream &os)
{
    os << "s,q,theta,r\n";
    for (int s = 0; s < grid.S; ++s)
        for (int q = 0; q < grid.Q; ++q)
            os << s << ',' << q << ',' << grid.theta[q] << ',' << grid.r(s, q) << '\n';
}

} // namespace thzce
