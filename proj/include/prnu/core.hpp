#ifndef PRNU_CORE_HPP
#define PRNU_CORE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prnu {

enum class ErrorKind {
    io,
    format,
    shape,
    degenerate_input,
    insufficient_data,
    domain,
    numerical,
    bound_violation,
    fit,
    data,
    usage,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return "io";
        case ErrorKind::format: return "format";
        case ErrorKind::shape: return "shape";
        case ErrorKind::degenerate_input: return "degenerate-input";
        case ErrorKind::insufficient_data: return "insufficient-data";
        case ErrorKind::domain: return "domain";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::bound_violation: return "bound-violation";
        case ErrorKind::fit: return "fit";
        case ErrorKind::data: return "data";
        case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

/// Base exception for every library failure. The kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Single-channel pixel grid, row-major. Holds intensities, residuals and
/// fingerprints alike.
class ImagePlane {
public:
    ImagePlane() = default;

    ImagePlane(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), data_(width * height, fill) {}

    ImagePlane(std::size_t width, std::size_t height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != width_ * height_) {
            throw Error(ErrorKind::shape, "plane data length " + std::to_string(data_.size()) +
                                              " does not match " + std::to_string(width_) + "x" +
                                              std::to_string(height_));
        }
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
    double operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const ImagePlane& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool all_finite() const noexcept {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> data_;
};

/// Per-pixel usability flags (true = usable).
class PixelMask {
public:
    PixelMask() = default;

    PixelMask(std::size_t width, std::size_t height, bool fill = true)
        : width_(width), height_(height), flags_(width * height, fill ? 1 : 0) {}

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return flags_.size(); }

    bool operator[](std::size_t i) const { return flags_[i] != 0; }
    void set(std::size_t i, bool usable) { flags_[i] = usable ? 1 : 0; }

    std::size_t usable_count() const noexcept {
        std::size_t n = 0;
        for (auto f : flags_) n += f;
        return n;
    }

    bool matches(const ImagePlane& plane) const noexcept {
        return width_ == plane.width() && height_ == plane.height();
    }

    friend bool operator==(const PixelMask&, const PixelMask&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::uint8_t> flags_;
};

inline void require_same_shape(const ImagePlane& a, const ImagePlane& b, std::string_view what) {
    if (!a.same_shape(b)) {
        throw Error(ErrorKind::shape, std::string(what) + ": " + std::to_string(a.width()) + "x" +
                                          std::to_string(a.height()) + " vs " +
                                          std::to_string(b.width()) + "x" +
                                          std::to_string(b.height()));
    }
}

// Seeding. Every random stream in the library is an mt19937_64 seeded through
// derive_seed so that (base seed, stream id) fully determines it.

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept {
    return derive_seed(base, fnv1a(tag));
}

}  // namespace prnu

#endif  // PRNU_CORE_HPP
