#include "thzce/channel_model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace thzce {

namespace {

// Laplace(0, b) by inverse CDF.
double laplace(Rng &rng, double b)
{
    if (b == 0.0)
        return 0.0;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    double u = ud(rng);
    while (u == 0.0)
        u = ud(rng);
    u -= 0.5;
    double mag = -b * std::log(1.0 - 2.0 * std::abs(u));
    return u < 0.0 ? -mag : mag;
}

} // namespace

double rayleigh_distance(const SystemConfig &cfg)
{
    double aperture = (cfg.N - 1) * cfg.antenna_spacing();
    return 2.0 * aperture * aperture / cfg.wavelength();
}

double subcarrier_frequency(const SystemConfig &cfg, int k)
{
    if (k < 0 || k >= cfg.K)
        throw std::out_of_range("subcarrier index " + std::to_string(k) + " outside [0, K)");
    return cfg.f_c + (k - (cfg.K - 1) / 2.0) * cfg.f_s / cfg.K;
}

std::vector<double> subcarrier_frequencies(const SystemConfig &cfg)
{
    std::vector<double> f(cfg.K);
    for (int k = 0; k < cfg.K; ++k)
        f[k] = subcarrier_frequency(cfg, k);
    return f;
}

CVec near_field_steering(double theta, double r, double f, int N, double d)
{
    if (!(r > 0.0))
        throw std::invalid_argument("steering distance must be positive");
    if (std::abs(theta) > 1.0)
        throw std::invalid_argument("theta must lie in [-1, 1]");

    const double k0 = 2.0 * kPi * f / kSpeedOfLight;
    const double curvature = std::isinf(r) ? 0.0 : d * d * (1.0 - theta * theta) / (2.0 * r);
    const double scale = 1.0 / std::sqrt(static_cast<double>(N));

    CVec a(N);
    for (int n = 0; n < N; ++n)
    {
        double delta = (2.0 * n - N + 1) / 2.0;
        double path = delta * delta * curvature - delta * d * theta;
        double phase = -k0 * path;
        a(n) = scale * cplx(std::cos(phase), std::sin(phase));
    }
    return a;
}

CVec far_field_steering(double theta, double f, int N, double d)
{
    return near_field_steering(theta, std::numeric_limits<double>::infinity(), f, N, d);
}

ChannelRealization sample_channel(const SystemConfig &cfg, Rng &rng)
{
    cfg.validate();
    const double r_ray = rayleigh_distance(cfg);
    if (!(r_ray > cfg.rho_min))
        throw std::invalid_argument("Rayleigh distance must exceed rho_min");
    if (!cfg.fixed_distance && cfg.cluster_r_max >= r_ray)
        throw std::invalid_argument("cluster distances must stay below the Rayleigh distance");

    // Laplace scale b gives standard deviation b * sqrt(2).
    const double b_angle = cfg.angle_spread_deg * kPi / 180.0 / std::sqrt(2.0);
    const double b_dist = cfg.distance_spread_m / std::sqrt(2.0);

    std::uniform_real_distribution<double> angle_centre(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> dist_centre(cfg.cluster_r_min, cfg.cluster_r_max);

    ChannelRealization out;
    out.paths.reserve(static_cast<std::size_t>(cfg.N_c) * cfg.N_p);
    for (int i = 0; i < cfg.N_c; ++i)
    {
        double phi_c = angle_centre(rng);
        double r_c = dist_centre(rng);
        for (int j = 0; j < cfg.N_p; ++j)
        {
            double phi = phi_c + laplace(rng, b_angle);
            double r;
            if (cfg.fixed_distance)
            {
                r = *cfg.fixed_distance;
            }
            else
            {
                // truncated to [1 m, r_Ray]
                do
                    r = r_c + laplace(rng, b_dist);
                while (r < 1.0 || r > r_ray);
            }
            PathParams p;
            p.alpha = complex_normal(rng);
            p.theta = std::sin(phi);
            p.r = r;
            p.tau = r / kSpeedOfLight;
            out.paths.push_back(p);
        }
    }
    out.H = assemble_subchannels(out.paths, cfg);
    return out;
}

CMat assemble_subchannels(std::span<const PathParams> paths, const SystemConfig &cfg)
{
    const double d = cfg.antenna_spacing();
    const double norm = std::sqrt(static_cast<double>(cfg.N) / (cfg.N_c * cfg.N_p));
    CMat H = CMat::Zero(cfg.N, cfg.K);
    for (int k = 0; k < cfg.K; ++k)
    {
        const double f = subcarrier_frequency(cfg, k);
        for (const auto &p : paths)
        {
            double phase = -2.0 * kPi * f * p.tau;
            cplx g = p.alpha * cplx(std::cos(phase), std::sin(phase));
            H.col(k) += (norm * g) * near_field_steering(p.theta, p.r, f, cfg.N, d);
        }
    }
    return H;
}

} // namespace thzce
