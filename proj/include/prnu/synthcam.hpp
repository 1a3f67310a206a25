#ifndef PRNU_SYNTHCAM_HPP
#define PRNU_SYNTHCAM_HPP

// Synthetic sensor: y = clip((1 + k) ∘ x + n, 0, 255) with Gaussian i.i.d.
// PRNU k and sensor noise n. Ground truth for every desk-scale experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "json.hpp"
#include "prnu/core.hpp"

namespace prnu {

struct SynthCamera {
    std::size_t width = 0;
    std::size_t height = 0;
    double sigma_k = 0.02;
    double sigma_n = 2.0;
    std::uint64_t seed = 0;
    ImagePlane k;
};

inline SynthCamera make_camera(std::size_t width, std::size_t height, double sigma_k, double sigma_n,
                               std::uint64_t seed) {
    if (sigma_k < 0.0 || sigma_n < 0.0) throw Error(ErrorKind::domain, "camera noise levels must be >= 0");
    if (width == 0 || height == 0) throw Error(ErrorKind::domain, "camera needs a non-empty sensor");
    SynthCamera cam{width, height, sigma_k, sigma_n, seed, ImagePlane(width, height)};
    if (sigma_k > 0.0) {
        Rng rng(derive_seed(seed, "prnu"));
        std::normal_distribution<double> gauss(0.0, sigma_k);
        for (auto& v : cam.k.data()) v = gauss(rng);
    }
    return cam;
}

enum class SceneKind { flatfield, gradient, textured_noise, dark, near_saturated };

inline const char* to_string(SceneKind kind) {
    switch (kind) {
        case SceneKind::flatfield: return "flatfield";
        case SceneKind::gradient: return "gradient";
        case SceneKind::textured_noise: return "textured-noise";
        case SceneKind::dark: return "dark";
        case SceneKind::near_saturated: return "near-saturated";
    }
    return "flatfield";
}

inline SceneKind scene_kind_from_string(const std::string& name) {
    for (auto k : {SceneKind::flatfield, SceneKind::gradient, SceneKind::textured_noise, SceneKind::dark,
                   SceneKind::near_saturated}) {
        if (name == to_string(k)) return k;
    }
    throw Error(ErrorKind::usage, "unknown scene kind '" + name + "'");
}

/// Scene generator parameters. `level` is the base intensity (gradient start
/// for gradients), optionally jittered per shot by ±level_jitter.
struct SceneConfig {
    SceneKind kind = SceneKind::flatfield;
    double level = 128.0;
    double level_jitter = 0.0;
    double high = 200.0;       // gradient end intensity
    double amplitude = 30.0;   // textured-noise standard deviation
    std::size_t smoothing = 4; // textured-noise box radius

    static SceneConfig flatfield(double level = 128.0, double jitter = 0.0) {
        return {SceneKind::flatfield, level, jitter};
    }
    static SceneConfig dark(double level = 0.0) { return {SceneKind::dark, level}; }
    static SceneConfig near_saturated(double level = 254.0) { return {SceneKind::near_saturated, level}; }
    static SceneConfig gradient(double low, double high) {
        SceneConfig s{SceneKind::gradient, low};
        s.high = high;
        return s;
    }
    static SceneConfig textured(double level, double amplitude, std::size_t smoothing = 4) {
        SceneConfig s{SceneKind::textured_noise, level};
        s.amplitude = amplitude;
        s.smoothing = smoothing;
        return s;
    }

    void validate() const {
        auto in_range = [](double v) { return v >= 0.0 && v <= 255.0; };
        if (!in_range(level - level_jitter) || !in_range(level + level_jitter)) {
            throw Error(ErrorKind::domain, "scene level (with jitter) must stay within [0, 255]");
        }
        if (kind == SceneKind::gradient && !in_range(high)) throw Error(ErrorKind::domain, "gradient end outside [0, 255]");
        if (kind == SceneKind::textured_noise && amplitude < 0.0) throw Error(ErrorKind::domain, "negative texture amplitude");
    }

    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

/// Scene for shot `index` of a mixed corpus: a repeating cycle of textured,
/// gradient, bright and dark flatfield, and coarse texture.
inline SceneConfig mixed_scene(std::size_t index) {
    switch (index % 5) {
        case 0: return SceneConfig::textured(128.0, 30.0, 4);
        case 1: return SceneConfig::gradient(40.0, 220.0);
        case 2: return SceneConfig::flatfield(160.0, 40.0);
        case 3: return SceneConfig::textured(100.0, 20.0, 8);
        default: return SceneConfig::flatfield(40.0, 20.0);
    }
}

/// Training flatfields spanning most of the exposure range.
inline SceneConfig training_flatfield() { return SceneConfig::flatfield(125.0, 115.0); }

namespace detail {

// Zero-mean, unit-variance smooth random field (separable box blur of white noise).
inline ImagePlane smooth_field(std::size_t w, std::size_t h, std::size_t radius, Rng& rng) {
    ImagePlane noise(w, h);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : noise.data()) v = gauss(rng);
    if (radius == 0) return noise;
    auto blur = [&](const ImagePlane& in, bool horizontal) {
        ImagePlane out(w, h);
        const auto r = static_cast<std::ptrdiff_t>(radius);
        for (std::size_t row = 0; row < h; ++row) {
            for (std::size_t col = 0; col < w; ++col) {
                double s = 0.0;
                std::size_t count = 0;
                for (std::ptrdiff_t d = -r; d <= r; ++d) {
                    const auto rr = static_cast<std::ptrdiff_t>(row) + (horizontal ? 0 : d);
                    const auto cc = static_cast<std::ptrdiff_t>(col) + (horizontal ? d : 0);
                    if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                    s += in(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                    ++count;
                }
                out(row, col) = s / static_cast<double>(count);
            }
        }
        return out;
    };
    ImagePlane field = blur(blur(noise, true), false);
    double mean = 0.0, ss = 0.0;
    for (double v : field.data()) mean += v;
    mean /= static_cast<double>(field.size());
    for (double v : field.data()) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(field.size()));
    for (auto& v : field.data()) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return field;
}

}  // namespace detail

/// Noise-free scene intensities x. Deterministic in (scene, scene_seed).
inline ImagePlane render_scene(const SceneConfig& scene, std::size_t width, std::size_t height,
                               std::uint64_t scene_seed) {
    scene.validate();
    Rng rng(derive_seed(scene_seed, "scene"));
    double level = scene.level;
    if (scene.level_jitter > 0.0) {
        level += std::uniform_real_distribution<double>(-scene.level_jitter, scene.level_jitter)(rng);
    }
    ImagePlane x(width, height, level);
    switch (scene.kind) {
        case SceneKind::flatfield:
        case SceneKind::dark:
        case SceneKind::near_saturated:
            break;
        case SceneKind::gradient: {
            const double span = scene.high - scene.level;
            for (std::size_t r = 0; r < height; ++r) {
                for (std::size_t c = 0; c < width; ++c) {
                    const double t = width > 1 ? static_cast<double>(c) / static_cast<double>(width - 1) : 0.0;
                    x(r, c) = std::clamp(level + span * t, 0.0, 255.0);
                }
            }
            break;
        }
        case SceneKind::textured_noise: {
            const ImagePlane field = detail::smooth_field(width, height, scene.smoothing, rng);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(level + scene.amplitude * field[i], 0.0, 255.0);
            break;
        }
    }
    return x;
}

/// One exposure: (1 + k) ∘ x + n, clipped to [0, 255] unless `clip` is false.
/// The scene depends only on shot_seed, so two cameras can shoot the same scene.
inline ImagePlane shoot(const SynthCamera& cam, const SceneConfig& scene, std::uint64_t shot_seed, bool clip = true) {
    const ImagePlane x = render_scene(scene, cam.width, cam.height, shot_seed);
    Rng rng(derive_seed(derive_seed(cam.seed, shot_seed), "sensor-noise"));
    std::normal_distribution<double> gauss(0.0, cam.sigma_n > 0.0 ? cam.sigma_n : 1.0);
    ImagePlane y(cam.width, cam.height);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double noise = cam.sigma_n > 0.0 ? gauss(rng) : 0.0;
        const double v = (1.0 + cam.k[i]) * x[i] + noise;
        y[i] = clip ? std::clamp(v, 0.0, 255.0) : v;
    }
    return y;
}

inline nlohmann::json camera_to_json(const SynthCamera& cam) {
    return {{"width", cam.width}, {"height", cam.height}, {"sigma_k", cam.sigma_k},
            {"sigma_n", cam.sigma_n}, {"seed", cam.seed}};
}

inline SynthCamera camera_from_json(const nlohmann::json& j) {
    return make_camera(j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>(),
                       j.at("sigma_k").get<double>(), j.at("sigma_n").get<double>(), j.at("seed").get<std::uint64_t>());
}

inline nlohmann::json scene_to_json(const SceneConfig& s) {
    return {{"kind", to_string(s.kind)}, {"level", s.level}, {"level_jitter", s.level_jitter},
            {"high", s.high}, {"amplitude", s.amplitude}, {"smoothing", s.smoothing}};
}

inline SceneConfig scene_from_json(const nlohmann::json& j) {
    SceneConfig s;
    s.kind = scene_kind_from_string(j.at("kind").get<std::string>());
    s.level = j.value("level", s.level);
    s.level_jitter = j.value("level_jitter", s.level_jitter);
    s.high = j.value("high", s.high);
    s.amplitude = j.value("amplitude", s.amplitude);
    s.smoothing = j.value("smoothing", s.smoothing);
    s.validate();
    return s;
}

}  // namespace prnu

#endif  // PRNU_SYNTHCAM_HPP
