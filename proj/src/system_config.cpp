#include "thzce/system_config.hpp"

#include <cmath>
#include <stdexcept>

#include "thzce/types.hpp"

namespace thzce {

double SystemConfig::wavelength() const { return kSpeedOfLight / f_c; }

double SystemConfig::antenna_spacing() const { return wavelength() / 2.0; }

double SystemConfig::noise_variance() const { return std::pow(10.0, -snr_db / 10.0); }

void SystemConfig::validate() const
{
    if (N < 1)
        throw std::invalid_argument("N must be at least 1");
    if (K < 1)
        throw std::invalid_argument("K must be at least 1");
    if (M < 1)
        throw std::invalid_argument("M must be at least 1");
    if (Q < 2)
        throw std::invalid_argument("Q must be at least 2");
    if (N_c < 1 || N_p < 1)
        throw std::invalid_argument("N_c and N_p must be at least 1");
    if (!(f_c > 0.0))
        throw std::invalid_argument("f_c must be positive");
    if (!(f_s >= 0.0) || !(f_s < f_c))
        throw std::invalid_argument("f_s must lie in [0, f_c)");
    if (!(rho_min > 0.0))
        throw std::invalid_argument("rho_min must be positive");
    if (!(beta > 0.0))
        throw std::invalid_argument("beta must be positive");
    if (!(cluster_r_min > 0.0) || cluster_r_max < cluster_r_min)
        throw std::invalid_argument("cluster distance range must satisfy 0 < min <= max");
    if (angle_spread_deg < 0.0 || distance_spread_m < 0.0)
        throw std::invalid_argument("spreads must be non-negative");
    if (fixed_distance && !(*fixed_distance > 0.0))
        throw std::invalid_argument("fixed_distance must be positive");
}

SystemConfig SystemConfig::full() { return SystemConfig{}; }

SystemConfig SystemConfig::desk()
{
    SystemConfig cfg;
    cfg.N = 128;
    cfg.K = 8;
    cfg.Q = 128;
    cfg.M = 48;
    cfg.snr_db = 10.0;
    cfg.beta = 1.2;
    cfg.rho_min = 3.0;
    // Rayleigh distance is 24.19 m at N = 128; keep every cluster centre inside it.
    cfg.cluster_r_max = 20.0;
    return cfg;
}

SystemConfig SystemConfig::preset(const std::string &name)
{
    if (name == "full")
        return full();
    if (name == "desk")
        return desk();
    throw std::invalid_argument("unknown preset '" + name + "' (expected desk or full)");
}

} // namespace thzce
