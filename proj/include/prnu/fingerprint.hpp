#ifndef PRNU_FINGERPRINT_HPP
#define PRNU_FINGERPRINT_HPP

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prnu/core.hpp"
#include "prnu/pixelplane.hpp"

namespace prnu {

/// Per-pixel PRNU estimate k̂.
struct Fingerprint {
    ImagePlane k;
    std::uint32_t training_count = 0;  // L
    bool postprocessed = false;

    std::size_t width() const noexcept { return k.width(); }
    std::size_t height() const noexcept { return k.height(); }

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

/// One training observation: the image y and its denoised estimate x̂.
struct TrainingPair {
    ImagePlane y;
    ImagePlane xhat;
};

/// Streaming accumulator for the weighted least-squares PRNU estimate
/// k̂ = <y − x̂, x̂> / ||x̂||² taken per pixel over the training images.
///
/// Per-pixel sums are kept in 128-bit fixed point (2^-64 resolution), so the
/// result does not depend on the order images are added, and remove() undoes
/// add() exactly. That makes leave-one-out fingerprints bitwise equal to a
/// fresh estimate over the remaining images.
class FingerprintAccumulator {
public:
    FingerprintAccumulator() = default;
    FingerprintAccumulator(std::size_t width, std::size_t height)
        : width_(width), height_(height), num_(width * height, 0), den_(width * height, 0) {}

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::uint32_t count() const noexcept { return count_; }

    void add(const ImagePlane& y, const ImagePlane& xhat, const PixelMask* mask = nullptr) {
        apply(y, xhat, mask, +1);
        ++count_;
    }

    void remove(const ImagePlane& y, const ImagePlane& xhat, const PixelMask* mask = nullptr) {
        if (count_ == 0) throw Error(ErrorKind::data, "remove from empty fingerprint accumulator");
        apply(y, xhat, mask, -1);
        --count_;
    }

    /// Current estimate; pixels with zero accumulated ||x̂||² get k̂ = 0.
    Fingerprint result() const {
        Fingerprint fp{ImagePlane(width_, height_), count_, false};
        for (std::size_t i = 0; i < num_.size(); ++i) {
            if (den_[i] > 0) fp.k[i] = from_fixed(num_[i]) / from_fixed(den_[i]);
        }
        return fp;
    }

private:
    using Fixed = __int128;
    static constexpr int kFracBits = 64;

    static Fixed to_fixed(double v) { return static_cast<Fixed>(std::nearbyint(std::ldexp(v, kFracBits))); }
    static double from_fixed(Fixed v) { return std::ldexp(static_cast<double>(v), -kFracBits); }

    void apply(const ImagePlane& y, const ImagePlane& xhat, const PixelMask* mask, int sign) {
        require_same_shape(y, xhat, "fingerprint training pair");
        if (y.width() != width_ || y.height() != height_) {
            throw Error(ErrorKind::shape, "training image does not match fingerprint dimensions");
        }
        if (mask && !mask->matches(y)) throw Error(ErrorKind::shape, "mask does not match training image");
        for (std::size_t i = 0; i < num_.size(); ++i) {
            if (mask && !(*mask)[i]) continue;
            const Fixed n = to_fixed((y[i] - xhat[i]) * xhat[i]);
            const Fixed d = to_fixed(xhat[i] * xhat[i]);
            if (sign > 0) {
                num_[i] += n;
                den_[i] += d;
            } else {
                num_[i] -= n;
                den_[i] -= d;
            }
        }
    }

    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::uint32_t count_ = 0;
    std::vector<Fixed> num_;
    std::vector<Fixed> den_;
};

/// Estimates k̂ from L >= 2 (y, x̂) pairs. Masked-out samples are excluded from
/// both sums.
inline Fingerprint estimate(std::span<const TrainingPair> training,
                            std::span<const PixelMask> masks = {}) {
    if (training.size() < 2) {
        throw Error(ErrorKind::insufficient_data, "fingerprint estimation needs at least 2 images");
    }
    if (!masks.empty() && masks.size() != training.size()) {
        throw Error(ErrorKind::shape, "mask count does not match training image count");
    }
    FingerprintAccumulator acc(training.front().y.width(), training.front().y.height());
    for (std::size_t m = 0; m < training.size(); ++m) {
        acc.add(training[m].y, training[m].xhat, masks.empty() ? nullptr : &masks[m]);
    }
    return acc.result();
}

/// Shifted-PRNU estimate κ̂ from the weighted-MSE stationarity condition
///   κ²<x̂,y>σr² + (||x̂||²σn² − ||y||²σr²)κ − <x̂,y>σn² = 0,
/// choosing the root nearest <x̂,y>/||x̂||². σr² = 0 gives that ratio directly.
inline double estimate_mle_quadratic(std::span<const double> xhat, std::span<const double> y,
                                     double sigma_n2, double sigma_r2) {
    if (xhat.size() != y.size()) throw Error(ErrorKind::shape, "sample vectors differ in length");
    if (xhat.size() < 2) throw Error(ErrorKind::insufficient_data, "need at least 2 samples");
    if (!(sigma_n2 > 0.0) || sigma_r2 < 0.0) throw Error(ErrorKind::domain, "need sigma_n2 > 0 and sigma_r2 >= 0");
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        xy += xhat[i] * y[i];
        xx += xhat[i] * xhat[i];
        yy += y[i] * y[i];
    }
    if (sigma_r2 == 0.0) {
        if (xx == 0.0) throw Error(ErrorKind::numerical, "zero denoised energy");
        return xy / xx;
    }
    const double a = xy * sigma_r2;
    const double b = xx * sigma_n2 - yy * sigma_r2;
    const double c = -xy * sigma_n2;
    if (a == 0.0) {
        if (b == 0.0) throw Error(ErrorKind::numerical, "quadratic degenerates to 0 = 0");
        return -c / b;
    }
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) throw Error(ErrorKind::numerical, "quadratic has no real root");
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    const double r1 = q / a;
    const double r2 = q != 0.0 ? c / q : r1;
    const double ref = xx > 0.0 ? xy / xx : 0.0;
    return std::abs(r1 - ref) <= std::abs(r2 - ref) ? r1 : r2;
}

/// Removes row means, then column means.
inline ImagePlane subtract_row_col_means(const ImagePlane& k) {
    ImagePlane out = k;
    const std::size_t w = k.width(), h = k.height();
    for (std::size_t r = 0; r < h; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < w; ++c) s += out(r, c);
        const double mean = s / static_cast<double>(w);
        for (std::size_t c = 0; c < w; ++c) out(r, c) -= mean;
    }
    for (std::size_t c = 0; c < w; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < h; ++r) s += out(r, c);
        const double mean = s / static_cast<double>(h);
        for (std::size_t r = 0; r < h; ++r) out(r, c) -= mean;
    }
    return out;
}

namespace detail {

struct FftwBuffer {
    explicit FftwBuffer(std::size_t n) : ptr(fftw_alloc_complex(n)), size(n) {
        if (!ptr) throw std::bad_alloc();
    }
    ~FftwBuffer() { fftw_free(ptr); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    fftw_complex* ptr;
    std::size_t size;
};

struct FftwPlan {
    explicit FftwPlan(fftw_plan p) : plan(p) {}
    ~FftwPlan() {
        if (plan) fftw_destroy_plan(plan);
    }
    FftwPlan(const FftwPlan&) = delete;
    FftwPlan& operator=(const FftwPlan&) = delete;
    void execute() const { fftw_execute(plan); }

    fftw_plan plan;
};

// Circular box mean of `in` over a (window x window) neighbourhood.
inline std::vector<double> circular_box_mean(const std::vector<double>& in, std::size_t w, std::size_t h,
                                             std::size_t window) {
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
    const auto W = static_cast<std::ptrdiff_t>(w);
    const auto H = static_cast<std::ptrdiff_t>(h);
    std::vector<double> tmp(in.size()), out(in.size());
    for (std::ptrdiff_t r = 0; r < H; ++r) {
        for (std::ptrdiff_t c = 0; c < W; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t d = -half; d <= half; ++d) s += in[r * W + ((c + d) % W + W) % W];
            tmp[r * W + c] = s;
        }
    }
    const double norm = static_cast<double>(window * window);
    for (std::ptrdiff_t r = 0; r < H; ++r) {
        for (std::ptrdiff_t c = 0; c < W; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t d = -half; d <= half; ++d) s += tmp[((r + d) % H + H) % H * W + c];
            out[r * W + c] = s / norm;
        }
    }
    return out;
}

}  // namespace detail

/// Fourier-domain Wiener shrinkage of spectral magnitudes, suppressing
/// periodic peaks. Each coefficient F is scaled by σ²/(σ² + ŝ²), where ŝ² is
/// the smallest local excess energy of |F|/√M over 3..9 windows.
inline ImagePlane fourier_wiener(const ImagePlane& k, double noise_floor) {
    const std::size_t w = k.width(), h = k.height(), n = k.size();
    if (n == 0 || !(noise_floor > 0.0)) return k;
    detail::FftwBuffer buf(n);
    // FFTW_ESTIMATE keeps plan selection, and so the output bits, deterministic.
    detail::FftwPlan forward(fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf.ptr, buf.ptr,
                                              FFTW_FORWARD, FFTW_ESTIMATE));
    detail::FftwPlan backward(fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf.ptr, buf.ptr,
                                               FFTW_BACKWARD, FFTW_ESTIMATE));
    for (std::size_t i = 0; i < n; ++i) {
        buf.ptr[i][0] = k[i];
        buf.ptr[i][1] = 0.0;
    }
    forward.execute();
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(n));
    std::vector<double> energy(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mag = std::hypot(buf.ptr[i][0], buf.ptr[i][1]) * inv_sqrt_m;
        energy[i] = mag * mag;
    }
    std::vector<double> excess(n, std::numeric_limits<double>::infinity());
    for (std::size_t window : {3u, 5u, 7u, 9u}) {
        const auto local = detail::circular_box_mean(energy, w, h, window);
        for (std::size_t i = 0; i < n; ++i) excess[i] = std::min(excess[i], std::max(0.0, local[i] - noise_floor));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double gain = noise_floor / (noise_floor + excess[i]) * inv_n;
        buf.ptr[i][0] *= gain;
        buf.ptr[i][1] *= gain;
    }
    backward.execute();
    ImagePlane out(w, h);
    for (std::size_t i = 0; i < n; ++i) out[i] = buf.ptr[i][0];
    return out;
}

inline double plane_variance(const ImagePlane& p) {
    if (p.empty()) return 0.0;
    double mean = 0.0;
    for (double v : p.data()) mean += v;
    mean /= static_cast<double>(p.size());
    double ss = 0.0;
    for (double v : p.data()) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(p.size());
}

/// Row/column mean subtraction followed by Fourier Wiener shrinkage. The noise
/// floor defaults to the variance of the mean-subtracted fingerprint.
inline Fingerprint postprocess(const Fingerprint& fp, std::optional<double> wiener_noise_floor = std::nullopt) {
    if (fp.postprocessed) throw Error(ErrorKind::data, "fingerprint is already postprocessed");
    if (!fp.k.all_finite()) throw Error(ErrorKind::data, "fingerprint has non-finite values");
    Fingerprint out = fp;
    out.k = subtract_row_col_means(fp.k);
    const double floor = wiener_noise_floor ? *wiener_noise_floor : plane_variance(out.k);
    out.k = fourier_wiener(out.k, floor);
    out.postprocessed = true;
    return out;
}

// --- Fingerprint file: "PRNUFP1\0", u32 width, u32 height, u32 L,
// u8 postprocessed, then width*height little-endian float64, row-major.

inline constexpr std::array<char, 8> kFingerprintMagic{'P', 'R', 'N', 'U', 'F', 'P', '1', '\0'};

namespace detail {

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
    return value;
}

}  // namespace detail

inline std::vector<unsigned char> encode_fingerprint(const Fingerprint& fp) {
    std::vector<unsigned char> out(kFingerprintMagic.begin(), kFingerprintMagic.end());
    out.reserve(8 + 13 + 8 * fp.k.size());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fp.width()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fp.height()));
    detail::put_le<std::uint32_t>(out, fp.training_count);
    out.push_back(fp.postprocessed ? 1 : 0);
    for (double v : fp.k.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Fingerprint decode_fingerprint(std::span<const unsigned char> bytes) {
    constexpr std::size_t header = 8 + 4 + 4 + 4 + 1;
    if (bytes.size() < header || !std::equal(kFingerprintMagic.begin(), kFingerprintMagic.end(), bytes.begin())) {
        throw Error(ErrorKind::format, "not a PRNUFP1 fingerprint");
    }
    const auto* p = bytes.data() + 8;
    const auto width = detail::get_le<std::uint32_t>(p);
    const auto height = detail::get_le<std::uint32_t>(p + 4);
    const auto count = detail::get_le<std::uint32_t>(p + 8);
    const bool post = p[12] != 0;
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (bytes.size() != header + 8 * n) throw Error(ErrorKind::format, "fingerprint payload size mismatch");
    std::vector<double> k(n);
    for (std::size_t i = 0; i < n; ++i) {
        k[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes.data() + header + 8 * i));
    }
    Fingerprint fp{ImagePlane(width, height, std::move(k)), count, post};
    if (!fp.k.all_finite()) throw Error(ErrorKind::data, "fingerprint file holds non-finite values");
    return fp;
}

inline void write_fingerprint(const std::filesystem::path& path, const Fingerprint& fp) {
    const auto bytes = encode_fingerprint(fp);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

inline Fingerprint read_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_fingerprint(bytes);
}

/// "<dir>/<stem>.meta.json" next to a fingerprint file.
inline std::filesystem::path sidecar_path(const std::filesystem::path& fingerprint_path) {
    auto p = fingerprint_path;
    p.replace_extension(".meta.json");
    return p;
}

}  // namespace prnu

#endif  // PRNU_FINGERPRINT_HPP
