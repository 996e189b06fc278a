#include "doctest.h"

#include <sstream>

#include "helpers.hpp"
#include "thzce/channel_model.hpp"
#include "thzce/polar_dictionary.hpp"

using namespace thzce;
using namespace testutil;

TEST_CASE("grid of the full preset")
{
    PolarGrid g = build_grid(SystemConfig::full());
    CHECK(g.S == 6);
    CHECK(g.size() == 3072);
}

TEST_CASE("grid invariants across a parameter matrix")
{
    for (int N : {16, 64, 128, 256})
        for (int Q : {2, 16, 128})
            for (double beta : {0.8, 1.2, 2.0})
                for (double rho : {1.0, 3.0, 6.0})
                {
                    SystemConfig cfg = SystemConfig::full();
                    cfg.N = N;
                    cfg.Q = Q;
                    cfg.beta = beta;
                    cfg.rho_min = rho;
                    PolarGrid g = build_grid(cfg);
                    CAPTURE(N);
                    CAPTURE(Q);
                    CAPTURE(beta);
                    CAPTURE(rho);
                    // S is the smallest integer with Z / S < rho_min
                    CHECK(g.z_delta / g.S < rho);
                    if (g.S > 1)
                        CHECK(g.z_delta / (g.S - 1) >= rho);
                    for (int q = 0; q < Q; ++q)
                    {
                        CHECK(g.theta[q] == (2.0 * q - Q + 1) / Q);
                        CHECK(g.theta[q] == -g.theta[Q - 1 - q]);
                        if (q > 0)
                            CHECK(g.theta[q] > g.theta[q - 1]);
                        CHECK(std::isinf(g.r(0, q)));
                        for (int s = 1; s < g.S; ++s)
                            CHECK(g.r(s, q) == doctest::Approx(g.z_delta * (1 - g.theta[q] * g.theta[q]) / s));
                    }
                }
}

TEST_CASE("grid edge cases")
{
    SystemConfig cfg = SystemConfig::full();
    cfg.Q = 2;
    PolarGrid g = build_grid(cfg);
    REQUIRE(g.theta.size() == 2);
    CHECK(g.theta[0] == -0.5);
    CHECK(g.theta[1] == 0.5);

    // rings shrink towards the array at the grid edges
    cfg.Q = 4096;
    g = build_grid(cfg);
    for (int s = 1; s < g.S; ++s)
        CHECK(g.r(s, 0) < 1e-3 * g.r(s, cfg.Q / 2));

    // coarser rings never add rings
    int previous = 1 << 30;
    for (double beta : {0.5, 0.8, 1.0, 1.2, 1.6, 2.5, 4.0})
    {
        cfg.beta = beta;
        const int S = build_grid(cfg).S;
        CHECK(S <= previous);
        previous = S;
    }
}

TEST_CASE("polar dictionary")
{
    SystemConfig cfg = SystemConfig::desk();
    PolarDictionary dict = build_polar_dictionary(cfg);
    REQUIRE(dict.atoms.size() == static_cast<std::size_t>(cfg.K));
    for (const CMat &A : dict.atoms)
    {
        CHECK(A.rows() == cfg.N);
        CHECK(A.cols() == dict.grid.size());
        CHECK((A.colwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
    CHECK((dict.atoms.front() - dict.atoms.back()).cwiseAbs().maxCoeff() > 1e-3);

    // column s * Q + q is the steering vector at that grid point
    const int s = dict.grid.S - 1, q = 17, k = 3;
    CVec expect = near_field_steering(dict.grid.theta[q], dict.grid.r(s, q), dict.frequencies[k], cfg.N,
                                      cfg.antenna_spacing());
    CHECK(dict.atoms[k].col(dict.grid.index(s, q)) == expect);

    SystemConfig single = cfg;
    single.K = 1;
    PolarDictionary one = build_polar_dictionary(single);
    REQUIRE(one.atoms.size() == 1);
    CMat ring0 = one.atoms[0].leftCols(cfg.Q);
    CHECK(relative_error(ring0, build_angular_dictionary(cfg.N, cfg.Q, cfg.f_c, cfg.antenna_spacing())) < 1e-15);
}

TEST_CASE("angular dictionary")
{
    const double f = 100e9, d = kSpeedOfLight / f / 2;
    CHECK(mutual_coherence(build_angular_dictionary(32, 32, f, d)) <= 1e-10);

    CMat single = build_angular_dictionary(1, 5, f, d);
    for (int q = 0; q < 5; ++q)
        CHECK(std::abs(single(0, q) - cplx(1.0, 0.0)) < 1e-15);

    CMat A = build_angular_dictionary(16, 32, f, d);
    CMat gram = A.adjoint() * A;
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
        {
            cplx acc = 0.0;
            for (int n = 0; n < 16; ++n)
                acc += std::conj(A(n, i)) * A(n, j);
            CHECK(std::abs(gram(i, j) - acc) < 1e-13);
        }

    SystemConfig cfg = SystemConfig::desk();
    auto common = build_angular_dictionaries(cfg, false);
    auto per_k = build_angular_dictionaries(cfg, true);
    CHECK(common.front() == common.back());
    CHECK(per_k.front() != per_k.back());
}

TEST_CASE("mutual coherence")
{
    CHECK(mutual_coherence(CMat::Identity(5, 5)) == 0.0);

    Rng rng(8);
    CMat dup = random_cmat(rng, 6, 4);
    dup.col(3) = dup.col(1) * cplx(0.0, -2.5);
    CHECK(mutual_coherence(dup) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(mutual_coherence(dup) <= 1.0);

    CMat A = random_cmat(rng, 8, 12);
    double brute = 0.0;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            if (i != j)
            {
                cplx acc = 0.0;
                double ni = 0.0, nj = 0.0;
                for (int n = 0; n < 8; ++n)
                {
                    acc += std::conj(A(n, i)) * A(n, j);
                    ni += std::norm(A(n, i));
                    nj += std::norm(A(n, j));
                }
                brute = std::max(brute, std::abs(acc) / std::sqrt(ni * nj));
            }
    CHECK(mutual_coherence(A) == doctest::Approx(brute).epsilon(1e-12));

    A.col(4).setZero();
    CHECK_THROWS_AS(mutual_coherence(A), std::invalid_argument);
}

TEST_CASE("polar transform")
{
    Rng rng(4);
    CMat A = random_cmat(rng, 6, 10);
    CHECK(polar_transform(CVec::Zero(10), A).norm() == 0.0);
    CHECK(polar_transform(CVec::Unit(10, 7), A) == A.col(7));

    CVec x = random_cmat(rng, 10, 1);
    CVec naive = CVec::Zero(6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 10; ++j)
            naive(i) += A(i, j) * x(j);
    CHECK(relative_error(polar_transform(x, A), naive) < 1e-14);
    CHECK_THROWS_AS(polar_transform(CVec::Zero(9), A), std::invalid_argument);
}

TEST_CASE("grid csv export")
{
    SystemConfig cfg = SystemConfig::full();
    cfg.N = 16;
    cfg.Q = 4;
    PolarGrid g = build_grid(cfg);
    std::ostringstream os;
    write_grid_csv(g, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "s,q,theta,r");
    int rows = 0;
    while (std::getline(is, line))
        ++rows;
    CHECK(rows == g.size());
}
