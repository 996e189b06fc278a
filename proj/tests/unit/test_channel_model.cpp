#include "doctest.h"

#include <limits>

#include "helpers.hpp"
#include "thzce/channel_model.hpp"

using namespace thzce;
using namespace testutil;

TEST_CASE("rayleigh distance")
{
    CHECK(rayleigh_distance(SystemConfig::full()) == doctest::Approx(97.5375).epsilon(1e-9));

    SystemConfig one = SystemConfig::full();
    one.N = 1;
    CHECK(rayleigh_distance(one) == 0.0);

    // 2((N-1) lambda/2)^2 / lambda in extended precision
    SystemConfig cfg = SystemConfig::full();
    cfg.N = 64;
    const long double lambda = 3.0e8L / 100.0e9L;
    const long double D = 63.0L * lambda / 2.0L;
    const long double expect = 2.0L * D * D / lambda;
    CHECK(std::abs(rayleigh_distance(cfg) - static_cast<double>(expect)) < 1e-12);
}

TEST_CASE("subcarrier frequencies")
{
    SystemConfig cfg = SystemConfig::full();
    CHECK(subcarrier_frequency(cfg, 0) == doctest::Approx(cfg.f_c - 15.5 * cfg.f_s / 32).epsilon(1e-15));

    cfg.K = 7;
    CHECK(subcarrier_frequency(cfg, 3) == cfg.f_c);

    for (int K : {1, 2, 8, 31, 32})
    {
        cfg.K = K;
        double sum = 0.0;
        for (double f : subcarrier_frequencies(cfg))
            sum += f - cfg.f_c;
        CHECK(std::abs(sum) < 1e-3);
    }
    CHECK_THROWS_AS(subcarrier_frequency(cfg, -1), std::out_of_range);
    CHECK_THROWS_AS(subcarrier_frequency(cfg, cfg.K), std::out_of_range);
}

TEST_CASE("steering vectors")
{
    const double f = 100e9, d = kSpeedOfLight / f / 2;
    const double inf = std::numeric_limits<double>::infinity();

    CVec flat = near_field_steering(0.0, inf, f, 16, d);
    for (int n = 0; n < 16; ++n)
        CHECK(std::abs(flat(n) - cplx(0.25, 0.0)) < 1e-15);

    Rng rng(3);
    std::uniform_real_distribution<double> th(-1.0, 1.0), rr(0.5, 200.0);
    for (int i = 0; i < 50; ++i)
        CHECK(std::abs(near_field_steering(th(rng), rr(rng), f, 64, d).norm() - 1.0) < 1e-12);

    CHECK_THROWS_AS(near_field_steering(0.1, 0.0, f, 8, d), std::invalid_argument);
    CHECK_THROWS_AS(near_field_steering(0.1, -2.0, f, 8, d), std::invalid_argument);
}

namespace {

// Array response from exact element-to-user distances, phase referenced to the centre.
CVec exact_steering(double theta, double r, double f, int N, double d)
{
    CVec a(N);
    for (int n = 0; n < N; ++n)
    {
        const double delta = (2.0 * n - N + 1) / 2.0;
        const double rn = std::sqrt(r * r - 2.0 * r * delta * d * theta + delta * delta * d * d);
        const double phase = -2.0 * kPi * f / kSpeedOfLight * (rn - r);
        a(n) = cplx(std::cos(phase), std::sin(phase)) / std::sqrt(static_cast<double>(N));
    }
    return a;
}

double max_phase_error(const CVec &a, const CVec &b)
{
    double worst = 0.0;
    for (Eigen::Index n = 0; n < a.size(); ++n)
        worst = std::max(worst, phase_gap(a(n), b(n)));
    return worst;
}

} // namespace

TEST_CASE("Fresnel phases against exact geometry")
{
    const double f = 100e9, d = kSpeedOfLight / f / 2;
    CHECK(max_phase_error(near_field_steering(0.5, 5.0, f, 8, d), exact_steering(0.5, 5.0, f, 8, d)) <= 1e-3);

    SystemConfig cfg = SystemConfig::full();
    const double far = 10.0 * rayleigh_distance(cfg);
    for (double theta : {-0.9, -0.3, 0.0, 0.4, 0.95})
        CHECK(max_phase_error(near_field_steering(theta, far, f, cfg.N, d), exact_steering(theta, far, f, cfg.N, d)) <=
              1e-4);
}

TEST_CASE("channel assembly")
{
    SystemConfig cfg = SystemConfig::desk();
    const double d = cfg.antenna_spacing();

    std::vector<PathParams> zero = {{cplx{}, 1e-8, 0.2, 10.0}, {cplx{}, 2e-8, -0.4, 7.0}};
    CHECK(assemble_subchannels(zero, cfg).norm() == 0.0);

    // single path with zero delay: column k is sqrt(N / (N_c N_p)) alpha a(theta, r, f_k)
    PathParams p{cplx(0.3, -1.1), 0.0, 0.35, 12.0};
    CMat H = assemble_subchannels(std::span(&p, 1), cfg);
    const double norm = std::sqrt(static_cast<double>(cfg.N) / (cfg.N_c * cfg.N_p));
    for (int k = 0; k < cfg.K; ++k)
    {
        CVec expect = norm * p.alpha * near_field_steering(p.theta, p.r, subcarrier_frequency(cfg, k), cfg.N, d);
        CHECK(relative_error(H.col(k), expect) < 1e-14);
    }

    Rng rng(11);
    ChannelRealization ch = sample_channel(cfg, rng);
    std::vector<PathParams> a(ch.paths.begin(), ch.paths.begin() + 7), b(ch.paths.begin() + 7, ch.paths.end());
    CHECK(relative_error(assemble_subchannels(a, cfg) + assemble_subchannels(b, cfg), ch.H) < 1e-12);
    CHECK(relative_error(assemble_subchannels(ch.paths, cfg), ch.H) == 0.0);
}

TEST_CASE("channel sampling")
{
    SystemConfig cfg = SystemConfig::desk();

    SUBCASE("degenerate spread puts the path on the cluster centre")
    {
        SystemConfig one = cfg;
        one.N_c = 1;
        one.N_p = 1;
        one.angle_spread_deg = 0.0;
        one.distance_spread_m = 0.0;
        Rng a(5), b(5);
        ChannelRealization ch = sample_channel(one, a);
        REQUIRE(ch.paths.size() == 1);
        std::uniform_real_distribution<double> phi(0.0, 2.0 * kPi), dist(one.cluster_r_min, one.cluster_r_max);
        const double phi_c = phi(b);
        const double r_c = dist(b);
        CHECK(ch.paths[0].theta == doctest::Approx(std::sin(phi_c)).epsilon(1e-15));
        CHECK(ch.paths[0].r == doctest::Approx(r_c).epsilon(1e-15));
        CHECK(ch.paths[0].tau == doctest::Approx(r_c / kSpeedOfLight).epsilon(1e-15));
    }

    SUBCASE("paths respect the truncation and invariants")
    {
        Rng rng(9);
        const double r_ray = rayleigh_distance(cfg);
        for (int i = 0; i < 50; ++i)
        {
            ChannelRealization ch = sample_channel(cfg, rng);
            CHECK(ch.paths.size() == static_cast<std::size_t>(cfg.N_c * cfg.N_p));
            for (const auto &p : ch.paths)
            {
                CHECK(std::abs(p.theta) <= 1.0);
                CHECK(p.r >= 1.0);
                CHECK(p.r <= r_ray);
                CHECK(p.tau >= 0.0);
            }
        }
    }

    SUBCASE("same seed gives the same realisation")
    {
        Rng a(42), b(42);
        CHECK(sample_channel(cfg, a).H == sample_channel(cfg, b).H);
    }

    SUBCASE("mean channel energy is N K")
    {
        Rng rng(2024);
        double total = 0.0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i)
            total += sample_channel(cfg, rng).H.squaredNorm();
        CHECK(total / draws == doctest::Approx(double(cfg.N) * cfg.K).epsilon(0.05));
    }

    SUBCASE("configurations the generator cannot honour are rejected")
    {
        SystemConfig bad = cfg;
        bad.cluster_r_max = 2.0 * rayleigh_distance(cfg);
        Rng rng(1);
        CHECK_THROWS_AS(sample_channel(bad, rng), std::invalid_argument);
    }
}
