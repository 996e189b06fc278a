#pragma once

#include <string>

namespace thzce {

enum class FlopAlgorithm
{
    sbl,
    amp_sbl,
    unfolded,
    somp,
};

FlopAlgorithm parse_flop_algorithm(const std::string &name); // accepts "msbl" for sbl

// Closed-form real-FLOP counts:
//   sbl      16 K M^2 G iters
//   amp_sbl  20 K M G iters
//   unfolded (20 K M + 800) G iters
//   somp     8 K M G iters
double flops(FlopAlgorithm alg, long K, long M, long G, long iters);
inline double flops_per_iteration(FlopAlgorithm alg, long K, long M, long G) { return flops(alg, K, M, G, 1); }

} // namespace thzce
