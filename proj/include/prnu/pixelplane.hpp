#ifndef PRNU_PIXELPLANE_HPP
#define PRNU_PIXELPLANE_HPP

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "prnu/core.hpp"

namespace prnu {

/// Any callable producing a same-shape denoised estimate x̂ of an image.
using Denoiser = std::function<ImagePlane(const ImagePlane&)>;

struct LocalMoments {
    ImagePlane mean;
    ImagePlane variance;  // population variance over the clipped window
};

/// Mean and variance over a square window clipped at the image edges.
inline LocalMoments local_moments(const ImagePlane& img, std::size_t window) {
    const std::size_t w = img.width();
    const std::size_t h = img.height();
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
    LocalMoments out{ImagePlane(w, h), ImagePlane(w, h)};
    for (std::size_t r = 0; r < h; ++r) {
        const std::size_t r0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(r) - half));
        const std::size_t r1 = std::min(h - 1, r + static_cast<std::size_t>(half));
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t c0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(c) - half));
            const std::size_t c1 = std::min(w - 1, c + static_cast<std::size_t>(half));
            double sum = 0.0;
            for (std::size_t rr = r0; rr <= r1; ++rr) {
                for (std::size_t cc = c0; cc <= c1; ++cc) sum += img(rr, cc);
            }
            const double count = static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
            const double m = sum / count;
            double ss = 0.0;
            for (std::size_t rr = r0; rr <= r1; ++rr) {
                for (std::size_t cc = c0; cc <= c1; ++cc) {
                    const double d = img(rr, cc) - m;
                    ss += d * d;
                }
            }
            out.mean(r, c) = m;
            out.variance(r, c) = ss / count;
        }
    }
    return out;
}

/// Noise floor for the adaptive Wiener filter: median of the local variances,
/// or their mean when more than half the plane is locally flat.
inline double wiener_noise_floor(const ImagePlane& local_variance) {
    std::vector<double> v = local_variance.data();
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double floor = *mid;
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), mid);
        floor = 0.5 * (floor + lower);
    }
    if (floor > 0.0) return floor;
    double sum = 0.0;
    for (double x : local_variance.data()) sum += x;
    return sum / static_cast<double>(local_variance.size());
}

/// Locally adaptive (Lee/wiener2-style) spatial Wiener filter.
///
/// Per pixel: x̂ = m + max(0, s² − σ²)/max(s², σ²) · (y − m), with m and s²
/// the local window moments and σ² the noise floor. Windows are clipped at
/// the borders. When `noise_variance` is unset, σ² comes from
/// wiener_noise_floor over the whole plane.
struct WienerDenoiser {
    std::size_t window = 3;
    std::optional<double> noise_variance;

    ImagePlane operator()(const ImagePlane& img) const {
        if (window < 3 || window % 2 == 0) {
            throw Error(ErrorKind::domain, "denoise window must be odd and >= 3");
        }
        if (img.width() < window || img.height() < window) {
            throw Error(ErrorKind::degenerate_input, "image smaller than denoise window");
        }
        const LocalMoments mom = local_moments(img, window);
        const double sigma2 = noise_variance ? *noise_variance : wiener_noise_floor(mom.variance);
        ImagePlane out(img.width(), img.height());
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double s2 = mom.variance[i];
            const double denom = std::max(s2, sigma2);
            const double gain = denom > 0.0 ? std::max(0.0, s2 - sigma2) / denom : 0.0;
            out[i] = mom.mean[i] + gain * (img[i] - mom.mean[i]);
        }
        return out;
    }
};

inline ImagePlane denoise(const ImagePlane& img, std::size_t window = 3) {
    return WienerDenoiser{window, std::nullopt}(img);
}

/// Noise residual y − x̂.
inline ImagePlane residual(const ImagePlane& img, const ImagePlane& denoised) {
    require_same_shape(img, denoised, "residual");
    ImagePlane out(img.width(), img.height());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] - denoised[i];
    return out;
}

/// Marks pixels at or above `threshold` as unusable (saturated pixels carry no PRNU).
inline PixelMask saturation_mask(const ImagePlane& img, double threshold = 250.0) {
    if (!(threshold > 0.0 && threshold <= 255.0)) {
        throw Error(ErrorKind::domain, "saturation threshold must be in (0, 255]");
    }
    PixelMask mask(img.width(), img.height());
    for (std::size_t i = 0; i < img.size(); ++i) mask.set(i, img[i] < threshold);
    return mask;
}

}  // namespace prnu

#endif  // PRNU_PIXELPLANE_HPP
