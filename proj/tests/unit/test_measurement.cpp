#include "doctest.h"

#include "helpers.hpp"
#include "thzce/channel_model.hpp"
#include "thzce/measurement.hpp"
#include "thzce/polar_dictionary.hpp"

using namespace thzce;
using namespace testutil;

TEST_CASE("pilot matrix")
{
    Rng rng(1);
    RMat W = generate_pilot_matrix(12, 64, rng);
    CHECK(W.rows() == 12);
    CHECK(W.cols() == 64);
    CHECK((W.array().abs() - 1.0 / 8.0).abs().maxCoeff() == 0.0);
    for (int m = 0; m < 12; ++m)
        CHECK(W.row(m).squaredNorm() == doctest::Approx(1.0).epsilon(1e-14));

    // sign balance: mean of 1e6 entries within 3 sigma of zero
    RMat big = generate_pilot_matrix(1000, 1000, rng);
    const double scale = 1.0 / std::sqrt(1000.0);
    const double sigma = scale / std::sqrt(1e6);
    CHECK(std::abs(big.mean()) <= 3.0 * sigma);

    Rng a(77), b(77);
    CHECK(generate_pilot_matrix(5, 9, a) == generate_pilot_matrix(5, 9, b));
}

TEST_CASE("observation model")
{
    Rng rng(2);
    RMat W = generate_pilot_matrix(8, 16, rng);
    CMat H1 = random_cmat(rng, 16, 4), H2 = random_cmat(rng, 16, 4);

    CHECK(observe(H1, W, 0.0, rng) == W.cast<cplx>() * H1);
    CHECK(relative_error(observe(H1 + H2, W, 0.0, rng), observe(H1, W, 0.0, rng) + observe(H2, W, 0.0, rng)) <
          1e-14);
    CHECK_THROWS_AS(observe(H1, W, -0.1, rng), std::invalid_argument);
    CHECK_THROWS(observe(CMat::Zero(15, 4), W, 0.1, rng));

    // pure noise: empirical per-entry variance, real and imaginary halves
    const double sigma2 = 0.37;
    RMat Wn = generate_pilot_matrix(100, 16, rng);
    CMat Y = observe(CMat::Zero(16, 100), Wn, sigma2, rng);
    CHECK(Y.cwiseAbs2().mean() == doctest::Approx(sigma2).epsilon(0.05));
    CHECK(Y.real().array().square().mean() == doctest::Approx(sigma2 / 2).epsilon(0.05));
    CHECK(Y.imag().array().square().mean() == doctest::Approx(sigma2 / 2).epsilon(0.05));
}

TEST_CASE("measurement matrices")
{
    Rng rng(3);
    std::vector<CMat> dict = {random_cmat(rng, 10, 20), random_cmat(rng, 10, 20)};
    RMat W = generate_pilot_matrix(6, 10, rng);
    auto Phi = measurement_matrices(W, dict);
    REQUIRE(Phi.size() == 2);
    const double opnorm = Eigen::JacobiSVD<RMat>(W).singularValues()(0);
    for (int k = 0; k < 2; ++k)
    {
        CMat naive = CMat::Zero(6, 20);
        for (int m = 0; m < 6; ++m)
            for (int g = 0; g < 20; ++g)
                for (int n = 0; n < 10; ++n)
                    naive(m, g) += W(m, n) * dict[k](n, g);
        CHECK(relative_error(Phi[k], naive) < 1e-14);
        for (int g = 0; g < 20; ++g)
            CHECK(Phi[k].col(g).norm() <= opnorm * dict[k].col(g).norm() * (1 + 1e-12));
    }

    // rows of a scaled identity select rows of A
    RMat I = RMat::Identity(10, 10) * 0.5;
    auto sel = measurement_matrices(I, dict);
    CHECK(relative_error(sel[1], 0.5 * dict[1]) < 1e-15);

    CHECK_THROWS(measurement_matrices(RMat::Zero(4, 9), dict));
}

TEST_CASE("on-grid approximation improves with finer angle grids")
{
    // far-field paths: the nearest ring-0 atom approximates every path better as Q grows
    SystemConfig cfg = SystemConfig::desk();
    cfg.fixed_distance = 1e12;
    Rng rng(6);
    RMat W = generate_pilot_matrix(cfg.M, cfg.N, rng);
    std::vector<ChannelRealization> channels;
    for (int i = 0; i < 10; ++i)
        channels.push_back(sample_channel(cfg, rng));

    std::vector<double> residual;
    for (int Q : {128, 256, 512})
    {
        SystemConfig c = cfg;
        c.Q = Q;
        PolarDictionary dict = build_polar_dictionary(c);
        auto Phi = measurement_matrices(W, dict.atoms);
        const double norm = std::sqrt(double(c.N) / (c.N_c * c.N_p));
        double total = 0.0;
        for (const auto &ch : channels)
        {
            CMat X = CMat::Zero(dict.grid.size(), c.K);
            for (const auto &p : ch.paths)
            {
                const int q = std::clamp(static_cast<int>(std::lround((p.theta * Q + Q - 1) / 2.0)), 0, Q - 1);
                for (int k = 0; k < c.K; ++k)
                    X(q, k) += norm * p.alpha * std::polar(1.0, -2.0 * kPi * dict.frequencies[k] * p.tau);
            }
            CMat Y = observe(ch.H, W, 0.0, rng);
            for (int k = 0; k < c.K; ++k)
                total += (Y.col(k) - Phi[k] * X.col(k)).squaredNorm();
        }
        residual.push_back(total);
    }
    CHECK(residual[1] < residual[0]);
    CHECK(residual[2] < residual[1]);
}
