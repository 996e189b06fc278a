#include "thzce/measurement.hpp"

#include <cmath>
#include <stdexcept>

namespace thzce {

RMat generate_pilot_matrix(int M, int N, Rng &rng)
{
    if (M < 1 || N < 1)
        throw std::invalid_argument("pilot matrix needs M, N >= 1");
    const double v = 1.0 / std::sqrt(static_cast<double>(N));
    std::bernoulli_distribution coin(0.5);
    RMat W(M, N);
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
            W(m, n) = coin(rng) ? v : -v;
    return W;
}

CMat observe(const CMat &H, const RMat &W, double sigma2, Rng &rng)
{
    if (sigma2 < 0.0)
        throw std::invalid_argument("noise variance must be non-negative");
    if (W.cols() != H.rows())
        throw std::invalid_argument("observe: pilot matrix and channel dimensions differ");
    CMat Y = W.cast<cplx>() * H;
    if (sigma2 > 0.0)
    {
        // column by column so the draw order is independent of storage order
        for (Eigen::Index k = 0; k < Y.cols(); ++k)
            for (Eigen::Index m = 0; m < Y.rows(); ++m)
                Y(m, k) += complex_normal(rng, sigma2);
    }
    return Y;
}

std::vector<CMat> measurement_matrices(const RMat &W, std::span<const CMat> dictionary)
{
    std::vector<CMat> out;
    out.reserve(dictionary.size());
    const CMat Wc = W.cast<cplx>();
    for (const auto &A : dictionary)
    {
        if (A.rows() != W.cols())
            throw std::invalid_argument("measurement_matrices: dictionary has wrong row count");
        out.push_back(Wc * A);
    }
    return out;
}

} // namespace thzce
