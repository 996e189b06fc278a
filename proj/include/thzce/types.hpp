#pragma once

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace thzce {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

using Rng = std::mt19937_64;

// Propagation speed used throughout; 3e8 reproduces the published Rayleigh distance.
inline constexpr double kSpeedOfLight = 3.0e8;
inline constexpr double kPi = 3.14159265358979323846;

// Independent stream for (seed, ids...). Used to give every sample its own generator.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids)
{
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * ids.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto id : ids)
        push(id);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

// Circularly-symmetric complex Gaussian with the given total variance.
inline cplx complex_normal(Rng &rng, double variance = 1.0)
{
    std::normal_distribution<double> nd(0.0, std::sqrt(variance / 2.0));
    double re = nd(rng);
    double im = nd(rng);
    return {re, im};
}

} // namespace thzce
