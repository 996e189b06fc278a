#pragma once

#include <span>
#include <vector>

#include "thzce/system_config.hpp"
#include "thzce/types.hpp"

namespace thzce {

struct PathParams
{
    cplx alpha;    // complex gain
    double tau;    // delay (s)
    double theta;  // sine of the angle of departure
    double r;      // distance from the array centre (m)
};

struct ChannelRealization
{
    std::vector<PathParams> paths;
    CMat H; // N x K, column k is the subchannel on subcarrier k
};

// 2 D^2 / lambda with aperture D = (N - 1) d.
double rayleigh_distance(const SystemConfig &cfg);

// Subcarrier frequency for the 0-based index k in [0, K).
double subcarrier_frequency(const SystemConfig &cfg, int k);
std::vector<double> subcarrier_frequencies(const SystemConfig &cfg);

// Fresnel-approximated near-field array response, unit norm.
// r = +infinity gives the planar-wave (far-field) response.
CVec near_field_steering(double theta, double r, double f, int N, double d);
CVec far_field_steering(double theta, double f, int N, double d);

ChannelRealization sample_channel(const SystemConfig &cfg, Rng &rng);

// sqrt(N / (N_c N_p)) * sum over paths of alpha e^{-j 2 pi f_k tau} a(theta, r, f_k).
CMat assemble_subchannels(std::span<const PathParams> paths, const SystemConfig &cfg);

} // namespace thzce
