#include "thzce/classic_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace thzce {

namespace {

void check_problem(const CMat &Y, std::span<const CMat> Phi)
{
    if (static_cast<Eigen::Index>(Phi.size()) != Y.cols())
        throw std::invalid_argument("one measurement matrix per subcarrier is required");
    for (const auto &P : Phi)
    {
        if (P.rows() != Y.rows())
            throw std::invalid_argument("measurement matrix rows must match the pilot length");
        if (P.cols() != Phi.front().cols())
            throw std::invalid_argument("all measurement matrices must share the grid size");
    }
}

} // namespace

Nmse nmse(const CMat &H_true, const CMat &H_hat)
{
    if (H_true.rows() != H_hat.rows() || H_true.cols() != H_hat.cols())
        throw std::invalid_argument("nmse: shape mismatch");
    const double ref = H_true.squaredNorm();
    if (ref == 0.0)
        throw std::invalid_argument("nmse: reference channel is zero");
    Nmse out;
    out.linear = (H_true - H_hat).squaredNorm() / ref;
    out.db = out.linear == 0.0 ? -std::numeric_limits<double>::infinity() : 10.0 * std::log10(out.linear);
    return out;
}

CMat reconstruct(std::span<const CMat> dictionary, const CMat &X)
{
    if (static_cast<Eigen::Index>(dictionary.size()) != X.cols())
        throw std::invalid_argument("reconstruct: one dictionary per subcarrier is required");
    CMat H(dictionary.front().rows(), X.cols());
    for (Eigen::Index k = 0; k < X.cols(); ++k)
        H.col(k) = dictionary[k] * X.col(k);
    return H;
}

// ---------------------------------------------------------------- SOMP

CMat somp(const CMat &Y, std::span<const CMat> Phi, int max_iter)
{
    check_problem(Y, Phi);
    const Eigen::Index M = Y.rows();
    const Eigen::Index K = Y.cols();
    const Eigen::Index G = Phi.front().cols();
    if (max_iter < 0 || max_iter > M)
        throw std::invalid_argument("somp: max_iter must lie in [0, M]");

    CMat X = CMat::Zero(G, K);
    CMat residual = Y;
    std::vector<Eigen::Index> support;
    std::vector<char> selected(G, 0);

    for (int it = 0; it < max_iter; ++it)
    {
        RVec score = RVec::Zero(G);
        for (Eigen::Index k = 0; k < K; ++k)
            score += (Phi[k].adjoint() * residual.col(k)).cwiseAbs();

        Eigen::Index best = -1;
        double best_score = 0.0;
        for (Eigen::Index g = 0; g < G; ++g)
            if (!selected[g] && score(g) > best_score)
            {
                best_score = score(g);
                best = g;
            }
        if (best < 0)
            break; // residual is exactly zero

        support.push_back(best);
        selected[best] = 1;

        const auto n = static_cast<Eigen::Index>(support.size());
        for (Eigen::Index k = 0; k < K; ++k)
        {
            CMat sub(M, n);
            for (Eigen::Index i = 0; i < n; ++i)
                sub.col(i) = Phi[k].col(support[i]);
            Eigen::ColPivHouseholderQR<CMat> qr(sub);
            if (qr.rank() < n)
                throw std::runtime_error("somp: selected columns are linearly dependent");
            CVec coef = qr.solve(Y.col(k));
            residual.col(k) = Y.col(k) - sub * coef;
            X.col(k).setZero();
            for (Eigen::Index i = 0; i < n; ++i)
                X(support[i], k) = coef(i);
        }
    }
    return X;
}

// ---------------------------------------------------------------- MSBL

MsblResult msbl(const CMat &Y, std::span<const CMat> Phi, double sigma2, int max_iter, bool track_evidence)
{
    check_problem(Y, Phi);
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("msbl: noise variance must be positive");

    const Eigen::Index M = Y.rows();
    const Eigen::Index K = Y.cols();
    const Eigen::Index G = Phi.front().cols();

    MsblResult out;
    out.X = CMat::Zero(G, K);
    out.gamma = RVec::Ones(G);

    CMat C(M, M);
    for (int it = 0; it < max_iter; ++it)
    {
        RVec next = RVec::Zero(G);
        double evidence = 0.0;
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const CMat &P = Phi[k];
            // C = sigma2 I + Phi diag(gamma) Phi^H
            C.noalias() = (P * out.gamma.cast<cplx>().asDiagonal()) * P.adjoint();
            C.diagonal().array() += sigma2;
            Eigen::LLT<CMat> llt(C);
            if (llt.info() != Eigen::Success)
                throw std::runtime_error("msbl: marginal covariance is not positive definite");

            // Z = L^{-1} Phi, w = L^{-1} y
            CMat Z = llt.matrixL().solve(P);
            CVec w = llt.matrixL().solve(Y.col(k));

            CVec mu = out.gamma.cast<cplx>().cwiseProduct(Z.adjoint() * w);
            RVec quad = Z.colwise().squaredNorm().transpose();
            RVec sigma_diag = out.gamma - out.gamma.cwiseProduct(out.gamma).cwiseProduct(quad);

            out.X.col(k) = mu;
            next += mu.cwiseAbs2() + sigma_diag.cwiseMax(0.0);

            if (track_evidence)
            {
                double logdet = 2.0 * llt.matrixLLT().diagonal().real().array().log().sum();
                evidence -= M * std::log(kPi) + logdet + w.squaredNorm();
            }
        }
        if (track_evidence)
            out.log_evidence.push_back(evidence);
        out.gamma = (next / static_cast<double>(K)).cwiseMax(kNumericFloor);
    }
    return out;
}

double msbl_log_evidence(const CMat &Y, std::span<const CMat> Phi, double sigma2, const RVec &gamma)
{
    check_problem(Y, Phi);
    const Eigen::Index M = Y.rows();
    double evidence = 0.0;
    for (Eigen::Index k = 0; k < Y.cols(); ++k)
    {
        CMat C = (Phi[k] * gamma.cast<cplx>().asDiagonal()) * Phi[k].adjoint();
        C.diagonal().array() += sigma2;
        Eigen::LLT<CMat> llt(C);
        CVec w = llt.matrixL().solve(Y.col(k));
        double logdet = 2.0 * llt.matrixLLT().diagonal().real().array().log().sum();
        evidence -= M * std::log(kPi) + logdet + w.squaredNorm();
    }
    return evidence;
}

// ---------------------------------------------------------------- AMP-SBL

CMat WhitenedProblem::whiten(const CMat &Y) const
{
    if (Y.cols() != K() || Y.rows() != M())
        throw std::invalid_argument("whiten: observation shape does not match the problem");
    CMat R(Y.rows(), Y.cols());
    for (int k = 0; k < K(); ++k)
        R.col(k) = U[k].adjoint() * Y.col(k);
    return R;
}

WhitenedProblem whiten(std::span<const CMat> Phi)
{
    WhitenedProblem out;
    for (const auto &P : Phi)
    {
        Eigen::BDCSVD<CMat> svd(P, Eigen::ComputeFullU);
        if (svd.info() != Eigen::Success)
            throw std::runtime_error("whiten: SVD of the measurement matrix failed");
        out.U.push_back(svd.matrixU());
        out.B.push_back(svd.matrixU().adjoint() * P);
        out.B2.push_back(out.B.back().cwiseAbs2());
        out.singular_values.push_back(svd.singularValues());
    }
    return out;
}

AmpState amp_initial_state(int M, int G)
{
    return {CVec::Zero(G), RVec::Ones(G), CVec::Zero(M)};
}

AmpState amp_e_step(const CMat &B, const RMat &B2, const CVec &r, double sigma2, const AmpState &prev,
                    const RVec &gamma, EStepCache *cache)
{
    EStepCache local;
    EStepCache &c = cache ? *cache : local;

    c.tau_p.noalias() = B2 * prev.tau_x;
    c.p.noalias() = B * prev.mu;
    c.p -= c.tau_p.cast<cplx>().cwiseProduct(prev.s);
    c.tau_p_noise = c.tau_p.array() + sigma2;
    c.tau_s = c.tau_p_noise.cwiseMax(kNumericFloor).cwiseInverse();

    AmpState next;
    c.resid = r - c.p;
    next.s = c.tau_s.cast<cplx>().cwiseProduct(c.resid);
    c.u.noalias() = B2.transpose() * c.tau_s;
    c.tau_q = c.u.cwiseMax(kNumericFloor).cwiseInverse();
    c.v.noalias() = B.adjoint() * next.s;
    c.q = prev.mu + c.tau_q.cast<cplx>().cwiseProduct(c.v);

    c.den_raw = RVec::Ones(gamma.size()) + c.tau_q.cwiseProduct(gamma);
    c.den = c.den_raw.cwiseMax(kNumericFloor);
    next.mu = c.q.cwiseQuotient(c.den.cast<cplx>());
    next.tau_x = c.tau_q.cwiseQuotient(c.den);
    return next;
}

AmpSblResult amp_sbl(const WhitenedProblem &problem, const CMat &R, double sigma2, int L)
{
    if (!(sigma2 > 0.0))
        throw std::invalid_argument("amp_sbl: noise variance must be positive");
    if (L < 1)
        throw std::invalid_argument("amp_sbl: at least one iteration is required");
    const int K = problem.K();
    const int M = problem.M();
    const int G = problem.G();
    if (R.cols() != K || R.rows() != M)
        throw std::invalid_argument("amp_sbl: observation shape does not match the problem");

    std::vector<AmpState> state(K, amp_initial_state(M, G));
    AmpSblResult out;
    out.gamma = RVec::Ones(G);
    out.gamma_last_used = out.gamma;
    double epsilon = 0.001;

    for (int l = 1; l <= L; ++l)
    {
        RVec power = RVec::Zero(G);
        for (int k = 0; k < K; ++k)
        {
            state[k] = amp_e_step(problem.B[k], problem.B2[k], R.col(k), sigma2, state[k], out.gamma);
            power += state[k].mu.cwiseAbs2() + state[k].tau_x;
        }
        out.gamma_last_used = out.gamma;
        power /= static_cast<double>(K);
        out.gamma = ((2.0 * epsilon + 1.0) / power.cwiseMax(kNumericFloor).array()).matrix();

        const double mean = out.gamma.mean();
        const double mean_log = out.gamma.array().log10().mean();
        const double radicand = std::log10(mean) - mean_log;
        out.radicand.push_back(radicand);
        epsilon = 0.5 * std::sqrt(std::max(radicand, 0.0));
        out.epsilon.push_back(epsilon);

        if (!power.allFinite() || !out.gamma.allFinite() || !std::isfinite(epsilon))
        {
            out.finite = false;
            break;
        }
    }

    out.X.resize(G, K);
    for (int k = 0; k < K; ++k)
    {
        out.X.col(k) = state[k].mu;
        if (!state[k].mu.allFinite())
            out.finite = false;
    }
    return out;
}

AmpSblResult amp_sbl(const CMat &Y, std::span<const CMat> Phi, double sigma2, int L)
{
    check_problem(Y, Phi);
    WhitenedProblem problem = whiten(Phi);
    return amp_sbl(problem, problem.whiten(Y), sigma2, L);
}

} // namespace thzce
