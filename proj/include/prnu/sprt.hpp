#ifndef PRNU_SPRT_HPP
#define PRNU_SPRT_HPP

// Wald sequential probability ratio test over pseudorandom pixel subsets.
//
// Thresholds are applied in constant form: the cumulative sum of
// D_j + log(2α₀Γ(1/c₀)) (the exact log-likelihood ratio) is compared with
// log A and log B. Comparing Σ D_j with the n-dependent thresholds
// log A − n·log(2α₀Γ(1/c₀)) and log B − n·log(2α₀Γ(1/c₀)) is the same test;
// decide_with_moving_thresholds implements that form for cross-checking.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prnu/core.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/pixelplane.hpp"
#include "prnu/sampling.hpp"
#include "prnu/stats.hpp"
#include "prnu/training.hpp"

namespace prnu {

class BoundViolation : public Error {
public:
    BoundViolation(double requested_pd, double max_pd)
        : Error(ErrorKind::bound_violation,
                "target detection probability " + std::to_string(requested_pd) +
                    " exceeds the achievable bound " + std::to_string(max_pd)),
          max_pd_(max_pd) {}

    double max_achievable_pd() const noexcept { return max_pd_; }

private:
    double max_pd_;
};

struct SprtPlan {
    double target_PD = 0.98;  // as requested, before contamination correction
    double target_PM = 0.02;  // corrected miss probability used for thresholds
    double target_PF = 0.3;
    double contamination_p = 0.0;
    double beta = 1.0;
    std::size_t T = 1024;
    std::size_t N = 256;
    double A = 0.0;
    double B = 0.0;
    std::uint64_t seed = 0;

    double log_A() const { return std::log(A); }
    double log_B() const { return std::log(B); }
};

/// Highest detection probability reachable when a fraction p of H1 images
/// behave like H0: 1 − p(1 − P_F*).
inline double max_achievable_pd(double target_pf, double contamination_p) {
    return 1.0 - contamination_p * (1.0 - target_pf);
}

/// Builds Wald thresholds A = β(1 − P_M*)/P_F*, B = β P_M*/(1 − P_F*), where
/// P_M* = (1 − P_D* − p(1 − P_F*))/(1 − p) compensates for weak-PRNU images.
inline SprtPlan make_plan(double target_pd, double target_pf, double contamination_p, double beta,
                          std::size_t T, std::size_t N, std::uint64_t seed) {
    if (!(target_pd > 0.0 && target_pd < 1.0)) throw Error(ErrorKind::domain, "P_D* must lie in (0, 1)");
    if (!(target_pf > 0.0 && target_pf < 1.0)) throw Error(ErrorKind::domain, "P_F* must lie in (0, 1)");
    if (!(contamination_p >= 0.0 && contamination_p < 1.0)) throw Error(ErrorKind::domain, "p must lie in [0, 1)");
    if (!(beta > 0.0 && beta <= 1.0)) throw Error(ErrorKind::domain, "beta must lie in (0, 1]");
    if (T == 0 || N == 0) throw Error(ErrorKind::domain, "T and N must be >= 1");

    const double miss = 1.0 - target_pd;
    const double corrected = (miss - contamination_p * (1.0 - target_pf)) / (1.0 - contamination_p);
    if (!(corrected > 0.0)) throw BoundViolation(target_pd, max_achievable_pd(target_pf, contamination_p));

    SprtPlan plan;
    plan.target_PD = target_pd;
    plan.target_PM = corrected;
    plan.target_PF = target_pf;
    plan.contamination_p = contamination_p;
    plan.beta = beta;
    plan.T = T;
    plan.N = N;
    plan.seed = seed;
    plan.A = beta * (1.0 - corrected) / target_pf;
    plan.B = beta * corrected / (1.0 - target_pf);
    if (!(plan.A > 1.0 && plan.B < 1.0 && plan.B > 0.0)) {
        throw Error(ErrorKind::domain, "thresholds must satisfy A > 1 > B > 0 (A=" + std::to_string(plan.A) +
                                           ", B=" + std::to_string(plan.B) + ")");
    }
    return plan;
}

/// Preset used by the CLI: P_D* 0.98, P_F* 0.3, p 0.0285, β 0.65, T 1024, N 256.
inline SprtPlan paper_table3_plan(std::uint64_t seed = 0) { return make_plan(0.98, 0.3, 0.0285, 0.65, 1024, 256, seed); }

enum class SprtOutcome { accept_h1, accept_h0, undecided };

inline const char* to_string(SprtOutcome o) {
    switch (o) {
        case SprtOutcome::accept_h1: return "accept_H1";
        case SprtOutcome::accept_h0: return "accept_H0";
        case SprtOutcome::undecided: return "undecided";
    }
    return "undecided";
}

/// Log-domain Wald stopping rule fed one log-likelihood-ratio increment at a time.
class SequentialTest {
public:
    SequentialTest(double log_a, double log_b, std::size_t max_observations)
        : log_a_(log_a), log_b_(log_b), max_n_(max_observations) {}

    explicit SequentialTest(const SprtPlan& plan) : SequentialTest(plan.log_A(), plan.log_B(), plan.N) {}

    SprtOutcome step(double llr_increment) {
        llr_ += llr_increment;
        ++n_;
        if (llr_ >= log_a_) return outcome_ = SprtOutcome::accept_h1;
        if (llr_ <= log_b_) return outcome_ = SprtOutcome::accept_h0;
        return outcome_ = SprtOutcome::undecided;
    }

    bool finished() const noexcept { return outcome_ != SprtOutcome::undecided || n_ >= max_n_; }
    SprtOutcome outcome() const noexcept { return outcome_; }
    std::size_t observations() const noexcept { return n_; }
    double llr() const noexcept { return llr_; }

private:
    double log_a_;
    double log_b_;
    std::size_t max_n_;
    std::size_t n_ = 0;
    double llr_ = 0.0;
    SprtOutcome outcome_ = SprtOutcome::undecided;
};

struct SprtDecision {
    SprtOutcome outcome = SprtOutcome::undecided;
    std::size_t n_used = 0;
    std::vector<double> llr_trace;   // cumulative Σ (D_j + log(2α₀Γ(1/c₀)))
    std::vector<double> increments;  // raw D_j
    std::vector<Observation> observations;
    std::size_t pixels_used = 0;

    double llr_final() const { return llr_trace.empty() ? 0.0 : llr_trace.back(); }

    friend bool operator==(const SprtDecision&, const SprtDecision&) = default;
};

/// Replays raw D_j increments against log A − n·log(2α₀Γ(1/c₀)) and
/// log B − n·log(2α₀Γ(1/c₀)). Returns the outcome and the stopping index.
inline std::pair<SprtOutcome, std::size_t> decide_with_moving_thresholds(std::span<const double> increments,
                                                                        const SprtPlan& plan, const H0Model& h0) {
    const double norm = h0.log_normalizer();
    double sum = 0.0;
    for (std::size_t j = 0; j < increments.size() && j < plan.N; ++j) {
        sum += increments[j];
        const double n = static_cast<double>(j + 1);
        if (sum >= plan.log_A() - n * norm) return {SprtOutcome::accept_h1, j + 1};
        if (sum <= plan.log_B() - n * norm) return {SprtOutcome::accept_h0, j + 1};
    }
    return {SprtOutcome::undecided, std::min(increments.size(), plan.N)};
}

struct SprtConfig {
    ObservationConfig observation;
    double saturation_threshold = 250.0;
};

/// Per-image detection inputs shared by the sequential and full-image tests.
struct DetectionPlanes {
    ImagePlane residual;
    ImagePlane kx;
    PixelMask mask;
};

inline DetectionPlanes prepare_detection(const ImagePlane& y_t, const Fingerprint& fp, const Denoiser& denoiser,
                                         double saturation_threshold) {
    if (!y_t.same_shape(fp.k)) throw Error(ErrorKind::shape, "test image and fingerprint differ in size");
    const ImagePlane xhat = denoiser(y_t);
    return {residual(y_t, xhat), kx_plane(fp.k, xhat), saturation_mask(y_t, saturation_threshold)};
}

/// Sequential test on precomputed planes. Subsets with σ̂_u = 0 are skipped:
/// their pixels count toward pixels_used but not toward n_used.
inline SprtDecision run(const DetectionPlanes& planes, const H1Model& h1, const H0Model& h0, const SprtPlan& plan,
                        const ObservationConfig& observation = {}) {
    if (h1.M_tr != plan.T) {
        throw Error(ErrorKind::domain, "H1 model trained for " + std::to_string(h1.M_tr) +
                                           " pixels must be rescaled to T = " + std::to_string(plan.T));
    }
    h0.validate();
    const double norm = h0.log_normalizer();
    SprtDecision decision;
    SequentialTest test(plan);
    SubsetStream stream(planes.mask, plan.T, plan.seed);
    while (!test.finished()) {
        auto subset = stream.next();
        if (!subset) break;
        decision.pixels_used += subset->size();
        const std::size_t id = stream.drawn() - 1;
        const auto obs = observe_subset(planes.residual, planes.kx, *subset, observation, derive_seed(plan.seed, id), id);
        if (!obs) continue;
        const auto [mu, sigma2] = lookup(h1, obs->v);
        const double d = increment_D(*obs, h0, mu, sigma2);
        test.step(d + norm);
        decision.increments.push_back(d);
        decision.observations.push_back(*obs);
        decision.llr_trace.push_back(test.llr());
    }
    decision.outcome = test.outcome();
    decision.n_used = test.observations();
    return decision;
}

inline SprtDecision run(const ImagePlane& y_t, const Fingerprint& fp, const H1Model& h1, const H0Model& h0,
                        const SprtPlan& plan, const Denoiser& denoiser, const SprtConfig& config = {}) {
    return run(prepare_detection(y_t, fp, denoiser, config.saturation_threshold), h1, h0, plan, config.observation);
}

// --- Full-image (non-sequential) test ---------------------------------------

enum class DetectorMode { improved, fixed };

struct FullTestConfig {
    DetectorMode mode = DetectorMode::improved;
    double eta3 = 0.0;        // improved-mode threshold
    double fixed_pf = 0.01;   // fixed-mode false-positive target
    ObservationConfig observation;
    double saturation_threshold = 250.0;
    std::uint64_t seed = 0;
};

struct FullTestResult {
    bool positive = false;
    double score = 0.0;
    double threshold = 0.0;
    Observation observation;
    bool degenerate = false;
};

/// u' threshold of the fixed detector: the (1 − P_F) quantile of the H0 GGD.
inline double fixed_threshold(const H0Model& h0, double pf) { return ggd_quantile(1.0 - pf, h0); }

/// Improved-detector score (|u'|/α₀)^c₀ − (u' − μ)²/(2σ²).
inline double improved_score(double u_prime, const H0Model& h0, double mu, double sigma2) {
    const double d = u_prime - mu;
    return std::pow(std::abs(u_prime) / h0.alpha0, h0.c0) - d * d / (2.0 * sigma2);
}

inline FullTestResult full_image_test(const DetectionPlanes& planes, const H1Model& h1, const H0Model& h0,
                                      const FullTestConfig& config) {
    std::vector<std::size_t> usable;
    usable.reserve(planes.mask.usable_count());
    for (std::size_t i = 0; i < planes.mask.size(); ++i) {
        if (planes.mask[i]) usable.push_back(i);
    }
    FullTestResult result;
    if (usable.empty()) {
        result.degenerate = true;
        return result;
    }
    const auto obs = observe_subset(planes.residual, planes.kx, usable, config.observation, config.seed);
    if (!obs) {
        result.degenerate = true;
        return result;
    }
    result.observation = *obs;
    if (config.mode == DetectorMode::fixed) {
        result.threshold = fixed_threshold(h0, config.fixed_pf);
        result.score = obs->u_prime;
    } else {
        const H1Model scaled = rescale(h1, usable.size());
        const auto [mu, sigma2] = lookup(scaled, obs->v);
        result.threshold = config.eta3;
        result.score = improved_score(obs->u_prime, h0, mu, sigma2);
    }
    result.positive = result.score > result.threshold;
    return result;
}

inline FullTestResult full_image_test(const ImagePlane& y_t, const Fingerprint& fp, const H1Model& h1,
                                      const H0Model& h0, const Denoiser& denoiser, const FullTestConfig& config = {}) {
    return full_image_test(prepare_detection(y_t, fp, denoiser, config.saturation_threshold), h1, h0, config);
}

/// Relative cost of sequential screening plus full-image retests versus
/// testing every image in full: P_D p_H1 + P_F (1 − p_H1) + n̄ T / M.
inline double cost_ratio(double pd, double pf, double p_h1, double n_bar, std::size_t T, double M) {
    if (!(M > 0.0)) throw Error(ErrorKind::domain, "cost ratio needs M > 0");
    return pd * p_h1 + pf * (1.0 - p_h1) + n_bar * static_cast<double>(T) / M;
}

}  // namespace prnu

#endif  // PRNU_SPRT_HPP
