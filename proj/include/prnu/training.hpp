#ifndef PRNU_TRAINING_HPP
#define PRNU_TRAINING_HPP

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "prnu/core.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/pixelplane.hpp"
#include "prnu/sampling.hpp"
#include "prnu/stats.hpp"

namespace prnu {

enum class H1Kind { binned, fixed };

inline constexpr double kSigma2Floor = 1e-6;

/// Law of u' under H1: N(μ(v), σ²(v)), piecewise constant over v bins, or a
/// single (μ, σ²) for the fixed-parameter test.
struct H1Model {
    H1Kind kind = H1Kind::fixed;
    std::vector<double> bin_edges;  // binned: bin count + 1 ascending values
    std::vector<double> mu;
    std::vector<double> sigma2;
    double fixed_mu = 0.0;
    double fixed_sigma2 = 1.0;
    std::size_t M_tr = 0;

    std::size_t bin_count() const noexcept { return kind == H1Kind::binned ? mu.size() : 1; }

    void validate() const {
        if (kind == H1Kind::fixed) {
            if (!(fixed_sigma2 > 0.0) || !std::isfinite(fixed_mu)) throw Error(ErrorKind::data, "invalid fixed H1 model");
            return;
        }
        if (mu.empty() || mu.size() != sigma2.size() || bin_edges.size() != mu.size() + 1) {
            throw Error(ErrorKind::data, "binned H1 model has inconsistent lengths");
        }
        for (std::size_t i = 1; i < bin_edges.size(); ++i) {
            if (!(bin_edges[i] > bin_edges[i - 1])) throw Error(ErrorKind::data, "H1 bin edges not strictly ascending");
        }
        for (double s : sigma2) {
            if (!(s > 0.0)) throw Error(ErrorKind::data, "H1 bin variance must be positive");
        }
    }

    friend bool operator==(const H1Model&, const H1Model&) = default;
};

struct H1Params {
    double mu;
    double sigma2;
};

/// (μ(v), σ²(v)). Bins are half-open [e_i, e_{i+1}); v outside the edges is
/// clamped to the first/last bin.
inline H1Params lookup(const H1Model& model, double v) {
    if (model.kind == H1Kind::fixed) return {model.fixed_mu, model.fixed_sigma2};
    const auto first_interior = model.bin_edges.begin() + 1;
    const auto last_interior = model.bin_edges.end() - 1;
    const auto bin = static_cast<std::size_t>(std::upper_bound(first_interior, last_interior, v) - first_interior);
    return {model.mu[bin], model.sigma2[bin]};
}

/// Scales v-edges, μ and σ² by √(M_t/M_tr) to move a model to another subset size.
inline H1Model rescale(const H1Model& model, std::size_t M_t) {
    if (M_t == 0 || model.M_tr == 0) throw Error(ErrorKind::domain, "rescale needs positive subset sizes");
    const double s = std::sqrt(static_cast<double>(M_t) / static_cast<double>(model.M_tr));
    H1Model out = model;
    for (auto& e : out.bin_edges) e *= s;
    for (auto& m : out.mu) m *= s;
    for (auto& v : out.sigma2) v *= s;
    out.fixed_mu *= s;
    out.fixed_sigma2 *= s;
    out.M_tr = M_t;
    return out;
}

namespace detail {

struct MeanVar {
    double mean;
    double var;  // unbiased, floored
};

inline MeanVar mean_var(std::span<const Observation> pairs) {
    double mean = 0.0;
    for (const auto& p : pairs) mean += p.u_prime;
    mean /= static_cast<double>(pairs.size());
    double ss = 0.0;
    for (const auto& p : pairs) ss += (p.u_prime - mean) * (p.u_prime - mean);
    const double var = pairs.size() > 1 ? ss / static_cast<double>(pairs.size() - 1) : 0.0;
    return {mean, std::max(var, kSigma2Floor)};
}

inline std::vector<Observation> sorted_pairs(std::span<const Observation> pairs) {
    std::vector<Observation> sorted(pairs.begin(), pairs.end());
    std::sort(sorted.begin(), sorted.end(), [](const Observation& a, const Observation& b) {
        return a.v != b.v ? a.v < b.v : a.u_prime < b.u_prime;
    });
    return sorted;
}

}  // namespace detail

/// Fixed-parameter H1 law: μ and σ² of u' over all pairs, independent of v.
inline H1Model fit_h1_fixed(std::span<const Observation> pairs, std::size_t M_tr) {
    if (pairs.empty()) throw Error(ErrorKind::insufficient_data, "no (u', v) pairs to fit");
    const auto sorted = detail::sorted_pairs(pairs);
    const auto mv = detail::mean_var(sorted);
    H1Model model;
    model.kind = H1Kind::fixed;
    model.fixed_mu = mv.mean;
    model.fixed_sigma2 = mv.var;
    model.M_tr = M_tr;
    return model;
}

/// Equal-population binning of v; per bin the mean and unbiased variance of u'.
/// Bins holding fewer than two pairs are merged into their smaller neighbour.
/// A single surviving bin yields a fixed-kind model.
inline H1Model fit_h1(std::span<const Observation> pairs, std::size_t num_bins, std::size_t M_tr) {
    if (num_bins == 0) throw Error(ErrorKind::domain, "need at least one bin");
    if (pairs.size() < 2) throw Error(ErrorKind::insufficient_data, "need at least 2 (u', v) pairs");
    const auto sorted = detail::sorted_pairs(pairs);
    const std::size_t n = sorted.size();

    // Start index of every bin; ties in v never straddle a boundary.
    std::vector<std::size_t> starts{0};
    for (std::size_t b = 1; b < num_bins; ++b) {
        std::size_t pos = (b * n) / num_bins;
        const double cut = sorted[pos].v;
        pos = static_cast<std::size_t>(
            std::lower_bound(sorted.begin(), sorted.end(), cut,
                             [](const Observation& o, double value) { return o.v < value; }) -
            sorted.begin());
        if (pos > starts.back()) starts.push_back(pos);
    }
    auto bin_size = [&](std::size_t i) { return (i + 1 < starts.size() ? starts[i + 1] : n) - starts[i]; };
    for (bool merged = true; merged && starts.size() > 1;) {
        merged = false;
        for (std::size_t i = 0; i < starts.size(); ++i) {
            if (bin_size(i) >= 2) continue;
            std::size_t absorb = 0;  // index of the boundary to erase
            if (i == 0) {
                absorb = 1;
            } else if (i + 1 == starts.size()) {
                absorb = i;
            } else {
                absorb = bin_size(i - 1) <= bin_size(i + 1) ? i : i + 1;
            }
            starts.erase(starts.begin() + static_cast<std::ptrdiff_t>(absorb));
            merged = true;
            break;
        }
    }
    if (starts.size() == 1) return fit_h1_fixed(sorted, M_tr);

    H1Model model;
    model.kind = H1Kind::binned;
    model.M_tr = M_tr;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const std::span<const Observation> bin(sorted.data() + starts[i], bin_size(i));
        const auto mv = detail::mean_var(bin);
        model.mu.push_back(mv.mean);
        model.sigma2.push_back(mv.var);
        model.bin_edges.push_back(sorted[starts[i]].v);
    }
    double top = sorted.back().v;
    if (!(top > model.bin_edges.back())) top = std::nextafter(model.bin_edges.back(), std::numeric_limits<double>::infinity());
    model.bin_edges.push_back(top);
    return model;
}

// --- Generalized Gaussian maximum likelihood ---------------------------------

/// Raised when the shape iteration does not converge; carries the last iterate.
class GgdFitError : public Error {
public:
    GgdFitError(const std::string& what, H0Model last) : Error(ErrorKind::fit, what), last_(last) {}
    const H0Model& last_iterate() const noexcept { return last_; }

private:
    H0Model last_;
};

namespace detail {

struct GgdProfile {
    std::vector<double> log_abs;  // log|x|, -inf for zeros

    // mean |x|^c and mean |x|^c log|x|
    std::pair<double, double> moments(double c) const {
        double s = 0.0, sl = 0.0;
        for (double l : log_abs) {
            if (l == -std::numeric_limits<double>::infinity()) continue;
            const double p = std::exp(c * l);
            s += p;
            sl += p * l;
        }
        const double n = static_cast<double>(log_abs.size());
        return {s / n, sl / n};
    }

    double alpha(double c) const { return std::pow(c * moments(c).first, 1.0 / c); }

    // Per-sample log-likelihood with α profiled out.
    double loglik(double c) const {
        return std::log(c) - std::log(2.0 * alpha(c)) - std::lgamma(1.0 / c) - 1.0 / c;
    }

    // c · d(loglik)/dc = 1 + (log(c S) + ψ(1/c))/c − S'/S
    double shape_equation(double c) const {
        const auto [s, sl] = moments(c);
        return 1.0 + (std::log(c * s) + boost::math::digamma(1.0 / c)) / c - sl / s;
    }
};

inline double ggd_kurtosis(double c) {
    return std::exp(std::lgamma(5.0 / c) + std::lgamma(1.0 / c) - 2.0 * std::lgamma(3.0 / c));
}

}  // namespace detail

inline constexpr double kGgdShapeMin = 0.1;
inline constexpr double kGgdShapeMax = 10.0;

/// Average log-likelihood of samples under GGD(α, c).
inline double ggd_mean_loglik(std::span<const double> samples, const H0Model& model) {
    double s = 0.0;
    for (double x : samples) s += ggd_logpdf(x, model);
    return s / static_cast<double>(samples.size());
}

/// Kurtosis-matched starting point for the GGD fit.
inline H0Model ggd_moment_init(std::span<const double> samples) {
    double m2 = 0.0, m4 = 0.0;
    for (double x : samples) {
        m2 += x * x;
        m4 += x * x * x * x;
    }
    m2 /= static_cast<double>(samples.size());
    m4 /= static_cast<double>(samples.size());
    const double kurt = m4 / (m2 * m2);
    // Kurtosis falls monotonically in c.
    double lo = kGgdShapeMin, hi = kGgdShapeMax;
    double c = 2.0;
    if (kurt >= detail::ggd_kurtosis(lo)) {
        c = lo;
    } else if (kurt <= detail::ggd_kurtosis(hi)) {
        c = hi;
    } else {
        for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
            c = 0.5 * (lo + hi);
            if (detail::ggd_kurtosis(c) > kurt) lo = c; else hi = c;
        }
        c = 0.5 * (lo + hi);
    }
    const double alpha = std::sqrt(m2 * std::exp(std::lgamma(1.0 / c) - std::lgamma(3.0 / c)));
    return {alpha, c};
}

/// Maximum-likelihood GGD(α₀, c₀) fit of zero-mean samples.
///
/// The shape equation is solved by safeguarded Newton/bisection on
/// c ∈ [0.1, 10] starting from the kurtosis match; α₀ = (c₀ · mean|x|^c₀)^(1/c₀).
inline H0Model fit_h0_ggd(std::span<const double> samples, int max_iterations = 200) {
    if (samples.size() < 100) throw Error(ErrorKind::insufficient_data, "GGD fit needs at least 100 samples");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    if (*mn == *mx) throw GgdFitError("GGD fit on constant samples", H0Model{std::abs(*mn), 2.0});
    for (double x : samples) {
        if (!std::isfinite(x)) throw Error(ErrorKind::data, "non-finite GGD sample");
    }
    detail::GgdProfile prof;
    prof.log_abs.reserve(samples.size());
    for (double x : samples) prof.log_abs.push_back(std::log(std::abs(x)));

    const H0Model init = ggd_moment_init(samples);
    double lo = kGgdShapeMin, hi = kGgdShapeMax;
    double g_lo = prof.shape_equation(lo), g_hi = prof.shape_equation(hi);
    double c = init.c0;
    if (g_lo <= 0.0 && g_hi <= 0.0) {
        c = lo;
    } else if (g_lo >= 0.0 && g_hi >= 0.0) {
        c = hi;
    } else {
        // g decreases through the root of a unimodal profile likelihood.
        bool converged = false;
        for (int it = 0; it < max_iterations; ++it) {
            const double g = prof.shape_equation(c);
            if (g > 0.0) lo = c; else hi = c;
            const double h = 1e-6 * c;
            const double slope = (prof.shape_equation(c + h) - prof.shape_equation(c - h)) / (2.0 * h);
            double next = slope < 0.0 ? c - g / slope : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            const double step = std::abs(next - c);
            c = next;
            if (step <= 1e-12 * c || hi - lo <= 1e-12 * c) {
                converged = true;
                break;
            }
        }
        if (!converged) throw GgdFitError("GGD shape iteration did not converge", H0Model{prof.alpha(c), c});
    }
    H0Model fit{prof.alpha(c), c};
    if (ggd_mean_loglik(samples, fit) < ggd_mean_loglik(samples, init)) fit = init;
    return fit;
}

// --- (u', v) pair collection --------------------------------------------------

struct PairCollectionConfig {
    std::size_t subset_size = 1024;
    ObservationConfig observation;
    double saturation_threshold = 250.0;
    bool postprocess = true;
    std::optional<double> wiener_noise_floor;
};

using ImageLoader = std::function<ImagePlane(std::size_t)>;

/// Leave-one-out (u', v) pairs: for each training image m, k̂ is estimated from
/// the other L−1 images, image m is split into subsets of T usable pixels, and
/// one pair is emitted per non-degenerate subset.
inline std::vector<Observation> collect_pairs(std::size_t image_count, const ImageLoader& load,
                                              std::uint64_t seed, const Denoiser& denoiser,
                                              const PairCollectionConfig& config) {
    if (image_count < 3) throw Error(ErrorKind::insufficient_data, "pair collection needs at least 3 images");
    FingerprintAccumulator acc;
    for (std::size_t m = 0; m < image_count; ++m) {
        const ImagePlane y = load(m);
        if (m == 0) acc = FingerprintAccumulator(y.width(), y.height());
        const ImagePlane xhat = denoiser(y);
        const PixelMask mask = saturation_mask(y, config.saturation_threshold);
        acc.add(y, xhat, &mask);
    }
    std::vector<Observation> pairs;
    for (std::size_t m = 0; m < image_count; ++m) {
        const ImagePlane y = load(m);
        const ImagePlane xhat = denoiser(y);
        const PixelMask mask = saturation_mask(y, config.saturation_threshold);
        acc.remove(y, xhat, &mask);
        Fingerprint fp = acc.result();
        acc.add(y, xhat, &mask);
        if (config.postprocess) fp = postprocess(fp, config.wiener_noise_floor);

        const ImagePlane res = residual(y, xhat);
        const ImagePlane kx = kx_plane(fp.k, xhat);
        const std::uint64_t image_seed = derive_seed(seed, m);
        SubsetStream stream(mask, config.subset_size, image_seed);
        while (auto subset = stream.next()) {
            const std::size_t id = stream.drawn() - 1;
            if (auto obs = observe_subset(res, kx, *subset, config.observation, derive_seed(image_seed, id), id)) {
                pairs.push_back(*obs);
            }
        }
    }
    return pairs;
}

inline std::vector<Observation> collect_pairs(std::span<const ImagePlane> images, std::uint64_t seed,
                                              const Denoiser& denoiser, const PairCollectionConfig& config) {
    return collect_pairs(images.size(), [&](std::size_t i) { return images[i]; }, seed, denoiser, config);
}

}  // namespace prnu

#endif  // PRNU_TRAINING_HPP
