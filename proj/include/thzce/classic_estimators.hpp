#pragma once

#include <span>
#include <vector>

#include "thzce/types.hpp"

namespace thzce {

inline constexpr double kNumericFloor = 1e-30;

// ---------------------------------------------------------------- scoring

struct Nmse
{
    double linear = 0.0;
    double db = 0.0; // -inf when the estimate is exact
};

Nmse nmse(const CMat &H_true, const CMat &H_hat);

// Channel-domain reconstruction: column k is dictionary[k] * X.col(k).
CMat reconstruct(std::span<const CMat> dictionary, const CMat &X);

// ---------------------------------------------------------------- SOMP

// Greedy MMV recovery. Returns G x K coefficients.
CMat somp(const CMat &Y, std::span<const CMat> Phi, int max_iter = 6);

// ---------------------------------------------------------------- MSBL

struct MsblResult
{
    CMat X;                            // posterior means, G x K
    RVec gamma;                        // prior variances after the last M-step
    std::vector<double> log_evidence;  // per iteration, when requested
};

// EM sparse Bayesian learning with a prior variance vector shared by all subcarriers.
MsblResult msbl(const CMat &Y, std::span<const CMat> Phi, double sigma2, int max_iter = 100,
                bool track_evidence = false);

// log p(Y | gamma) for the MSBL model with prior variances gamma.
double msbl_log_evidence(const CMat &Y, std::span<const CMat> Phi, double sigma2, const RVec &gamma);

// ---------------------------------------------------------------- AMP-SBL

// Unitary preprocessing: Phi^k = U^k S^k V^k, B^k = U^kH Phi^k.
struct WhitenedProblem
{
    std::vector<CMat> U;
    std::vector<CMat> B;
    std::vector<RMat> B2;              // |B|^2 element-wise
    std::vector<RVec> singular_values;

    int M() const { return B.empty() ? 0 : static_cast<int>(B.front().rows()); }
    int G() const { return B.empty() ? 0 : static_cast<int>(B.front().cols()); }
    int K() const { return static_cast<int>(B.size()); }

    // r^k = U^kH y^k for every column of Y.
    CMat whiten(const CMat &Y) const;
};

WhitenedProblem whiten(std::span<const CMat> Phi);

// Per-subcarrier message-passing state carried between iterations.
struct AmpState
{
    CVec mu;
    RVec tau_x;
    CVec s;
};

AmpState amp_initial_state(int M, int G);

// Intermediates of one E-step, kept for the reverse pass.
struct EStepCache
{
    RVec tau_p, tau_p_noise, tau_s, u, tau_q, den_raw, den;
    CVec p, resid, v, q;
};

// One AMP E-step (posterior means/variances given gamma as prior precisions).
AmpState amp_e_step(const CMat &B, const RMat &B2, const CVec &r, double sigma2, const AmpState &prev,
                    const RVec &gamma, EStepCache *cache = nullptr);

struct AmpSblResult
{
    CMat X;                          // mu^L, G x K
    RVec gamma;                      // gamma^L
    RVec gamma_last_used;            // gamma^{L-1}, the prior of the final E-step
    std::vector<double> epsilon;     // epsilon^l, l = 1..L
    std::vector<double> radicand;    // argument of the epsilon square root, before clamping
    bool finite = true;              // false once any state entry stopped being finite
};

AmpSblResult amp_sbl(const WhitenedProblem &problem, const CMat &R, double sigma2, int L);
AmpSblResult amp_sbl(const CMat &Y, std::span<const CMat> Phi, double sigma2, int L);

} // namespace thzce
