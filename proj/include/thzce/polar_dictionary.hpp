#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "thzce/system_config.hpp"
#include "thzce/types.hpp"

namespace thzce {

// Angle/distance sampling of the polar domain. Ring 0 is the far-field ring
// (r = +inf); ring s >= 1 sits at z_delta (1 - theta^2) / s.
struct PolarGrid
{
    int Q = 0;
    int S = 0;
    double z_delta = 0.0;
    std::vector<double> theta; // Q sines, (2q - Q + 1) / Q
    RMat r;                    // S x Q distances

    int size() const { return S * Q; }
    // Flat atom index: ring-major, g = s * Q + q.
    int index(int s, int q) const { return s * Q + q; }
};

// Per-subcarrier transform matrices A^k (N x G).
struct PolarDictionary
{
    PolarGrid grid;
    std::vector<double> frequencies;
    std::vector<CMat> atoms;
};

PolarGrid build_grid(const SystemConfig &cfg);

// Dictionary for a single frequency; column g is the steering vector at grid point g.
CMat polar_matrix(const PolarGrid &grid, double f, int N, double d);

PolarDictionary build_polar_dictionary(const SystemConfig &cfg);

// Far-field steering vectors on the uniform theta grid, evaluated at f.
CMat build_angular_dictionary(int N, int Q, double f, double d);

// Angular dictionaries for every subcarrier. With frequency_dependent = false every
// entry is the carrier-frequency dictionary (the common angular dictionary).
std::vector<CMat> build_angular_dictionaries(const SystemConfig &cfg, bool frequency_dependent);

// Largest normalised inner product between two distinct columns.
double mutual_coherence(const CMat &A);

// Channel-domain vector A x.
CVec polar_transform(const CVec &x, const CMat &A);

// CSV with header "s,q,theta,r" (r = inf on the far-field ring).
void write_grid_csv(const PolarGrid &grid, std::ostream &os);

} // namespace thzce
