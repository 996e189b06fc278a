#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace thzce {

// Physical and experiment parameters shared by every module.
struct SystemConfig
{
    int N = 256;              // antennas
    int K = 32;               // subcarriers
    double f_c = 100e9;       // carrier (Hz)
    double f_s = 10e9;        // bandwidth (Hz)
    int M = 48;               // pilot time slots
    double snr_db = 10.0;
    int N_c = 3;              // clusters
    int N_p = 10;             // subpaths per cluster
    int Q = 512;              // angle grids
    double beta = 1.2;        // coherence threshold of the distance rings
    double rho_min = 3.0;     // minimum allowable distance (m)
    std::uint64_t seed = 1;
    int N_RF = 4;             // recorded; the pilot model does not depend on it

    // Cluster geometry. Centres are uniform in [cluster_r_min, cluster_r_max];
    // subpaths spread around them with Laplacian angle/distance offsets.
    double cluster_r_min = 5.0;
    double cluster_r_max = 30.0;
    double angle_spread_deg = 4.0;
    double distance_spread_m = 1.0;

    // When set, every subpath is placed at this distance (no truncation).
    std::optional<double> fixed_distance;

    double wavelength() const;
    double antenna_spacing() const;
    double noise_variance() const;

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    static SystemConfig full();
    static SystemConfig desk();
    static SystemConfig preset(const std::string &name);
};

} // namespace thzce
