#pragma once

#include <span>
#include <vector>

#include "thzce/types.hpp"

namespace thzce {

struct MeasurementSet
{
    RMat W;                 // M x N, entries +-1/sqrt(N)
    std::vector<CMat> Phi;  // per subcarrier W A^k
    CMat Y;                 // M x K
    double sigma2 = 0.0;
};

// One-bit phase-shifter pilots: i.i.d. equiprobable +-1/sqrt(N).
RMat generate_pilot_matrix(int M, int N, Rng &rng);

// Y = W H + noise, noise CN(0, sigma2) per entry.
CMat observe(const CMat &H, const RMat &W, double sigma2, Rng &rng);

std::vector<CMat> measurement_matrices(const RMat &W, std::span<const CMat> dictionary);

} // namespace thzce
