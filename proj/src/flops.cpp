#include "thzce/flops.hpp"

#include <stdexcept>

namespace thzce {

FlopAlgorithm parse_flop_algorithm(const std::string &name)
{
    if (name == "sbl" || name == "msbl")
        return FlopAlgorithm::sbl;
    if (name == "amp_sbl" || name == "amp")
        return FlopAlgorithm::amp_sbl;
    if (name == "unfolded")
        return FlopAlgorithm::unfolded;
    if (name == "somp")
        return FlopAlgorithm::somp;
    throw std::invalid_argument("unknown algorithm: " + name);
}

double flops(FlopAlgorithm alg, long K, long M, long G, long iters)
{
    if (K < 1 || M < 1 || G < 1 || iters < 1)
        throw std::invalid_argument("flops: sizes and iteration count must be positive");
    const double k = K, m = M, g = G, l = iters;
    switch (alg)
    {
    case FlopAlgorithm::sbl:
        return 16.0 * k * m * m * g * l;
    case FlopAlgorithm::amp_sbl:
        return 20.0 * k * m * g * l;
    case FlopAlgorithm::unfolded:
        return (20.0 * k * m + 800.0) * g * l;
    case FlopAlgorithm::somp:
        return 8.0 * k * m * g * l;
    }
    throw std::logic_error("flops: unhandled algorithm");
}

} // namespace thzce
