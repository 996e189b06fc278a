#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "thzce/types.hpp"

namespace testutil {

using namespace thzce;

inline CMat random_cmat(Rng &rng, Eigen::Index rows, Eigen::Index cols, double variance = 1.0)
{
    CMat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = complex_normal(rng, variance);
    return m;
}

inline double relative_error(const CMat &a, const CMat &b)
{
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

// Wrapped phase difference in (-pi, pi].
inline double phase_gap(cplx a, cplx b) { return std::abs(std::arg(a * std::conj(b))); }

inline std::string read_bytes(const std::filesystem::path &p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct TempDir
{
    std::filesystem::path path;
    explicit TempDir(const std::string &name)
        : path(std::filesystem::temp_directory_path() / ("thzce_test_" + name + "_" + std::to_string(::getpid())))
    {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace testutil
