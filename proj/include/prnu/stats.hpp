#ifndef PRNU_STATS_HPP
#define PRNU_STATS_HPP

// Detection statistics for one pixel subset, and the two hypothesis densities.
//
// Under H0 the normalized correlation u' follows a zero-mean generalized
// Gaussian GGD(alpha0, c0); under H1 it is Gaussian with parameters that
// depend on the fingerprint-energy statistic v.

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "prnu/core.hpp"

namespace prnu {

struct Observation {
    double u_prime = 0.0;
    double v = 0.0;
    std::size_t subset_id = 0;

    friend bool operator==(const Observation&, const Observation&) = default;
};

struct H0Model {
    double alpha0 = 1.24;
    double c0 = 1.78;

    void validate() const {
        if (!(alpha0 > 0.0 && c0 > 0.0 && std::isfinite(alpha0) && std::isfinite(c0))) {
            throw Error(ErrorKind::domain, "H0 model needs alpha0 > 0 and c0 > 0");
        }
    }

    /// log(2 α₀ Γ(1/c₀)): the GGD normalizer folded into each SPRT increment.
    double log_normalizer() const { return std::log(2.0 * alpha0) + std::lgamma(1.0 / c0); }

    friend bool operator==(const H0Model&, const H0Model&) = default;
};

enum class VarianceEstimator { fast, shift };

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw Error(ErrorKind::shape, std::string(what) + ": vector lengths differ");
}

inline double sum_squares(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}
}  // namespace detail

/// u = <residual, k̂∘x̂> restricted to a subset.
inline double statistic_u(std::span<const double> residual, std::span<const double> kx) {
    detail::require_same_length(residual.size(), kx.size(), "statistic_u");
    if (residual.empty()) throw Error(ErrorKind::shape, "statistic_u on empty subset");
    double s = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i) s += residual[i] * kx[i];
    return s;
}

/// Fast variance estimate of u: ||k̂∘x̂||² ||residual||² / M.
inline double variance_fast(std::span<const double> kx, std::span<const double> residual) {
    detail::require_same_length(residual.size(), kx.size(), "variance_fast");
    if (kx.empty()) throw Error(ErrorKind::shape, "variance_fast on empty subset");
    return detail::sum_squares(kx) * detail::sum_squares(residual) / static_cast<double>(kx.size());
}

/// v = ||k̂∘x̂||² / σ̂_u.
inline double statistic_v(std::span<const double> kx, double sigma_u) {
    if (!(sigma_u > 0.0)) throw Error(ErrorKind::domain, "statistic_v needs sigma_u > 0");
    return detail::sum_squares(kx) / sigma_u;
}

/// A circular shift is admissible when its circular distance from the origin
/// exceeds `radius` along at least one axis.
inline bool shift_admissible(std::size_t q_row, std::size_t q_col, std::size_t height, std::size_t width,
                             std::size_t radius) {
    const std::size_t d_row = std::min(q_row, height - q_row);
    const std::size_t d_col = std::min(q_col, width - q_col);
    return std::max(d_row, d_col) > radius;
}

inline std::size_t admissible_shift_count(std::size_t height, std::size_t width, std::size_t radius) {
    const std::size_t excluded = std::min(height, 2 * radius + 1) * std::min(width, 2 * radius + 1);
    return height * width - excluded;
}

/// Shift-based variance estimate of u: the mean of <Δ_q(residual), k̂∘x̂>² over
/// circular shifts q outside the exclusion neighbourhood of the origin.
///
/// Uses every admissible shift when num_shifts covers them all, otherwise
/// num_shifts shifts drawn uniformly (with replacement) from the admissible
/// set. An empty `subset` means the whole plane; otherwise the scalar product
/// runs over the listed pixel indices only.
inline double variance_shift(const ImagePlane& residual_plane, const ImagePlane& kx_plane,
                             std::size_t exclusion_radius, std::size_t num_shifts, std::uint64_t seed,
                             std::span<const std::size_t> subset = {}) {
    require_same_shape(residual_plane, kx_plane, "variance_shift");
    if (num_shifts == 0) throw Error(ErrorKind::domain, "variance_shift needs num_shifts >= 1");
    const std::size_t h = residual_plane.height();
    const std::size_t w = residual_plane.width();
    const std::size_t admissible = admissible_shift_count(h, w, exclusion_radius);
    if (admissible == 0) throw Error(ErrorKind::degenerate_input, "no admissible circular shift");

    auto product = [&](std::size_t qr, std::size_t qc) {
        double s = 0.0;
        auto term = [&](std::size_t idx) {
            const std::size_t r = idx / w, c = idx % w;
            const std::size_t sr = (r + h - qr) % h, sc = (c + w - qc) % w;
            return residual_plane[sr * w + sc] * kx_plane[idx];
        };
        if (subset.empty()) {
            for (std::size_t i = 0; i < residual_plane.size(); ++i) s += term(i);
        } else {
            for (std::size_t idx : subset) s += term(idx);
        }
        return s * s;
    };

    double total = 0.0;
    if (num_shifts >= admissible) {
        for (std::size_t qr = 0; qr < h; ++qr) {
            for (std::size_t qc = 0; qc < w; ++qc) {
                if (shift_admissible(qr, qc, h, w, exclusion_radius)) total += product(qr, qc);
            }
        }
        return total / static_cast<double>(admissible);
    }
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick_row(0, h - 1), pick_col(0, w - 1);
    for (std::size_t n = 0; n < num_shifts;) {
        const std::size_t qr = pick_row(rng), qc = pick_col(rng);
        if (!shift_admissible(qr, qc, h, w, exclusion_radius)) continue;
        total += product(qr, qc);
        ++n;
    }
    return total / static_cast<double>(num_shifts);
}

// --- Generalized Gaussian density ------------------------------------------

/// log[c₀ / (2α₀Γ(1/c₀))] − (|x|/α₀)^c₀
inline double ggd_logpdf(double x, const H0Model& model) {
    return std::log(model.c0) - model.log_normalizer() - std::pow(std::abs(x) / model.alpha0, model.c0);
}

inline double ggd_cdf(double x, const H0Model& model) {
    const double t = std::pow(std::abs(x) / model.alpha0, model.c0);
    const double half_mass = 0.5 * boost::math::gamma_p(1.0 / model.c0, t);
    return x >= 0.0 ? 0.5 + half_mass : 0.5 - half_mass;
}

inline double ggd_quantile(double prob, const H0Model& model) {
    if (!(prob > 0.0 && prob < 1.0)) throw Error(ErrorKind::domain, "GGD quantile needs prob in (0, 1)");
    if (prob == 0.5) return 0.0;
    const double mass = std::abs(2.0 * prob - 1.0);
    const double t = boost::math::gamma_p_inv(1.0 / model.c0, mass);
    const double x = model.alpha0 * std::pow(t, 1.0 / model.c0);
    return prob > 0.5 ? x : -x;
}

/// Draws from GGD(α₀, c₀): |X/α₀|^c₀ ~ Gamma(1/c₀, 1) with a random sign.
class GgdSampler {
public:
    explicit GgdSampler(const H0Model& model) : model_(model), gamma_(1.0 / model.c0, 1.0) {}

    template <typename Engine>
    double operator()(Engine& rng) {
        const double magnitude = model_.alpha0 * std::pow(gamma_(rng), 1.0 / model_.c0);
        return sign_(rng) ? magnitude : -magnitude;
    }

private:
    H0Model model_;
    std::gamma_distribution<double> gamma_;
    std::bernoulli_distribution sign_{0.5};
};

inline double normal_logpdf(double x, double mu, double sigma2) {
    const double d = x - mu;
    return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - d * d / (2.0 * sigma2);
}

/// Per-observation SPRT increment
///   D = (|u'|/α₀)^c₀ − (u' − μ)²/(2σ²) − log(c₀ √(2πσ²)).
/// Adding log(2α₀Γ(1/c₀)) gives the exact log-likelihood ratio log f1/f0.
inline double increment_D(const Observation& obs, const H0Model& h0, double mu, double sigma2) {
    if (!(sigma2 > 0.0)) throw Error(ErrorKind::domain, "increment_D needs sigma2 > 0");
    const double d = obs.u_prime - mu;
    return std::pow(std::abs(obs.u_prime) / h0.alpha0, h0.c0) - d * d / (2.0 * sigma2) -
           std::log(h0.c0 * std::sqrt(2.0 * std::numbers::pi * sigma2));
}

// --- Subset observation -----------------------------------------------------

struct ObservationConfig {
    VarianceEstimator estimator = VarianceEstimator::fast;
    std::size_t exclusion_radius = 2;
    std::size_t num_shifts = 64;
};

/// Computes (u', v) over one pixel subset of the residual and k̂∘x̂ planes.
/// Returns nullopt when σ̂_u = 0, where u' is undefined.
inline std::optional<Observation> observe_subset(const ImagePlane& residual_plane, const ImagePlane& kx_plane,
                                                 std::span<const std::size_t> subset,
                                                 const ObservationConfig& config, std::uint64_t seed,
                                                 std::size_t subset_id = 0) {
    std::vector<double> r(subset.size()), kx(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) {
        r[i] = residual_plane[subset[i]];
        kx[i] = kx_plane[subset[i]];
    }
    const double u = statistic_u(r, kx);
    const double var = config.estimator == VarianceEstimator::fast
                           ? variance_fast(kx, r)
                           : variance_shift(residual_plane, kx_plane, config.exclusion_radius, config.num_shifts,
                                            seed, subset);
    if (!(var > 0.0) || !std::isfinite(var)) return std::nullopt;
    const double sigma_u = std::sqrt(var);
    return Observation{u / sigma_u, statistic_v(kx, sigma_u), subset_id};
}

/// Element-wise k̂ ∘ x̂.
inline ImagePlane kx_plane(const ImagePlane& k, const ImagePlane& xhat) {
    require_same_shape(k, xhat, "k∘x̂");
    ImagePlane out(k.width(), k.height());
    for (std::size_t i = 0; i < k.size(); ++i) out[i] = k[i] * xhat[i];
    return out;
}

/// Area under the ROC curve (Mann–Whitney, ties count one half).
inline double roc_auc(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) throw Error(ErrorKind::insufficient_data, "AUC needs both classes");
    std::vector<std::pair<double, int>> all;
    all.reserve(positives.size() + negatives.size());
    for (double p : positives) all.emplace_back(p, 1);
    for (double n : negatives) all.emplace_back(n, 0);
    std::sort(all.begin(), all.end());
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (all[t].second == 1) rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(positives.size());
    const double nn = static_cast<double>(negatives.size());
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace prnu

#endif  // PRNU_STATS_HPP
