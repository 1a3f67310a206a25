#include <gtest/gtest.h>

#include <algorithm>
#include <complex>
#include <fstream>
#include <numeric>

#include "prnu/fingerprint.hpp"
#include "prnu/pixelplane.hpp"
#include "prnu/synthcam.hpp"
#include "support.hpp"

using namespace prnu;
using prnu::testing::gaussian_plane;

namespace {

std::vector<TrainingPair> noisy_pairs(std::size_t L, std::size_t w, std::size_t h, std::uint64_t seed) {
    std::vector<TrainingPair> out;
    for (std::size_t m = 0; m < L; ++m) {
        ImagePlane x = gaussian_plane(w, h, 120.0, 30.0, seed * 1000 + m);
        ImagePlane y = x;
        const ImagePlane n = gaussian_plane(w, h, 0.0, 3.0, seed * 1000 + m + 500);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.01 * x[i] + n[i];
        out.push_back({y, x});
    }
    return out;
}

double max_abs_row_col_mean(const ImagePlane& k) {
    double worst = 0.0;
    for (std::size_t r = 0; r < k.height(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k.width(); ++c) s += k(r, c);
        worst = std::max(worst, std::abs(s / static_cast<double>(k.width())));
    }
    for (std::size_t c = 0; c < k.width(); ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < k.height(); ++r) s += k(r, c);
        worst = std::max(worst, std::abs(s / static_cast<double>(k.height())));
    }
    return worst;
}

// Naive 2-D DFT (sign -1 forward, +1 inverse without normalization).
std::vector<std::complex<double>> dft2(const std::vector<std::complex<double>>& in, std::size_t w, std::size_t h,
                                       int sign) {
    std::vector<std::complex<double>> out(in.size());
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> s = 0.0;
            for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < w; ++c) {
                    const double phase = sign * 2.0 * std::numbers::pi *
                                         (static_cast<double>(u * r) / static_cast<double>(h) +
                                          static_cast<double>(v * c) / static_cast<double>(w));
                    s += in[r * w + c] * std::polar(1.0, phase);
                }
            }
            out[u * w + v] = s;
        }
    }
    return out;
}

}  // namespace

// --- estimate ------------------------------------------------------------------

TEST(Estimate, IdenticalImagesGiveZeroFingerprint) {
    std::vector<TrainingPair> pairs;
    for (int m = 0; m < 4; ++m) {
        const ImagePlane x = gaussian_plane(6, 5, 100.0, 20.0, m);
        pairs.push_back({x, x});
    }
    EXPECT_EQ(estimate(pairs).k, ImagePlane(6, 5, 0.0));
}

TEST(Estimate, NoiselessSensorRecoversPrnu) {
    const ImagePlane k = gaussian_plane(8, 8, 0.0, 0.02, 11);
    std::vector<TrainingPair> pairs;
    for (int m = 0; m < 5; ++m) {
        const ImagePlane x = gaussian_plane(8, 8, 120.0, 30.0, 100 + m);
        ImagePlane y(8, 8);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = (1.0 + k[i]) * x[i];
        pairs.push_back({y, x});
    }
    const Fingerprint fp = estimate(pairs);
    EXPECT_EQ(fp.training_count, 5u);
    EXPECT_FALSE(fp.postprocessed);
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(fp.k[i], k[i], 1e-12);
}

TEST(Estimate, SinglePixelHandValue) {
    const std::vector<TrainingPair> pairs{{ImagePlane(1, 1, 2.2), ImagePlane(1, 1, 2.0)},
                                          {ImagePlane(1, 1, 1.2), ImagePlane(1, 1, 1.0)}};
    EXPECT_NEAR(estimate(pairs).k[0], (0.2 * 2.0 + 0.2 * 1.0) / 5.0, 1e-15);
    EXPECT_NEAR(estimate(pairs).k[0], 0.12, 1e-15);
}

TEST(Estimate, MaskedSamplesAreExcluded) {
    const std::vector<TrainingPair> pairs{{ImagePlane(1, 1, 2.2), ImagePlane(1, 1, 2.0)},
                                          {ImagePlane(1, 1, 1.2), ImagePlane(1, 1, 1.0)},
                                          {ImagePlane(1, 1, 500.0), ImagePlane(1, 1, 1.0)}};
    std::vector<PixelMask> masks{PixelMask(1, 1, true), PixelMask(1, 1, true), PixelMask(1, 1, false)};
    EXPECT_NEAR(estimate(pairs, masks).k[0], 0.12, 1e-15);
}

TEST(Estimate, ZeroDenoisedEnergyGivesZero) {
    const std::vector<TrainingPair> pairs{{ImagePlane(2, 1, 3.0), ImagePlane(2, 1, 0.0)},
                                          {ImagePlane(2, 1, 1.0), ImagePlane(2, 1, 0.0)}};
    EXPECT_EQ(estimate(pairs).k, ImagePlane(2, 1, 0.0));
}

TEST(Estimate, ErrorsOnTooFewImagesAndShapeMismatch) {
    const std::vector<TrainingPair> one{{ImagePlane(2, 2, 1.0), ImagePlane(2, 2, 1.0)}};
    try {
        estimate(one);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
    }
    const std::vector<TrainingPair> mixed{{ImagePlane(2, 2, 1.0), ImagePlane(2, 2, 1.0)},
                                          {ImagePlane(3, 2, 1.0), ImagePlane(3, 2, 1.0)}};
    try {
        estimate(mixed);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::shape);
    }
}

TEST(Estimate, PermutationInvariantBitwise) {
    auto pairs = noisy_pairs(9, 7, 6, 3);
    const Fingerprint ref = estimate(pairs);
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        EXPECT_EQ(estimate(pairs).k, ref.k);
    }
}

TEST(Estimate, RemoveGivesExactLeaveOneOut) {
    const auto pairs = noisy_pairs(6, 5, 5, 4);
    FingerprintAccumulator acc(5, 5);
    for (const auto& p : pairs) acc.add(p.y, p.xhat);
    for (std::size_t m = 0; m < pairs.size(); ++m) {
        acc.remove(pairs[m].y, pairs[m].xhat);
        std::vector<TrainingPair> rest;
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            if (j != m) rest.push_back(pairs[j]);
        }
        const Fingerprint loo = acc.result();
        EXPECT_EQ(loo.k, estimate(rest).k);
        EXPECT_EQ(loo.training_count, pairs.size() - 1);
        acc.add(pairs[m].y, pairs[m].xhat);
    }
}

TEST(Estimate, CorrelationWithTruthGrowsWithLAndExceedsHalfAtFifty) {
    const std::size_t W = 48, seeds = 20;
    const std::vector<std::size_t> Ls{5, 15, 50};
    std::vector<double> mean_corr(Ls.size(), 0.0);
    for (std::uint64_t s = 0; s < seeds; ++s) {
        const SynthCamera cam = make_camera(W, W, 0.02, 2.0, 1000 + s);
        FingerprintAccumulator acc(W, W);
        std::size_t added = 0;
        for (std::size_t li = 0; li < Ls.size(); ++li) {
            for (; added < Ls[li]; ++added) {
                const ImagePlane y = shoot(cam, SceneConfig::flatfield(128.0, 40.0), derive_seed(s, added));
                const ImagePlane xhat = denoise(y);
                const PixelMask mask = saturation_mask(y);
                acc.add(y, xhat, &mask);
            }
            mean_corr[li] += prnu::testing::correlation(acc.result().k.data(), cam.k.data()) / seeds;
        }
    }
    EXPECT_LE(mean_corr[0], mean_corr[1]);
    EXPECT_LE(mean_corr[1], mean_corr[2]);
    EXPECT_GT(mean_corr[2], 0.5);
}

// --- estimate_mle_quadratic ------------------------------------------------------

TEST(MleQuadratic, NoResidueReducesToRatio) {
    const std::vector<double> x{1, 1}, y{1, 1};
    EXPECT_DOUBLE_EQ(estimate_mle_quadratic(x, y, 1.0, 0.0), 1.0);
    const std::vector<double> x2{1, 0}, y2{2, 0};
    EXPECT_DOUBLE_EQ(estimate_mle_quadratic(x2, y2, 1.0, 0.0), 2.0);
}

TEST(MleQuadratic, RootSolvesStationarityEquation) {
    const std::vector<double> x{1, 1}, y{1.1, 0.9};
    const double k = estimate_mle_quadratic(x, y, 1.0, 0.01);
    const double residual = 0.02 * k * k + (2.0 - 0.0202) * k - 2.0;
    EXPECT_LT(std::abs(residual), 1e-12);
    // Nearest root to <x,y>/||x||² = 1.
    EXPECT_NEAR(k, 1.0, 0.05);
}

TEST(MleQuadratic, ZeroCrossProductSolvesLinearly) {
    const std::vector<double> x{1, -1}, y{1, 1};
    EXPECT_DOUBLE_EQ(estimate_mle_quadratic(x, y, 2.0, 0.5), 0.0);
}

TEST(MleQuadratic, ApproachesRatioAsResidueVanishes) {
    const auto x = prnu::testing::gaussian_vector(50, 100.0, 20.0, 1);
    auto y = x;
    for (auto& v : y) v *= 1.02;
    const double ratio = estimate_mle_quadratic(x, y, 4.0, 0.0);
    EXPECT_NEAR(estimate_mle_quadratic(x, y, 4.0, 1e-9), ratio, 1e-8);
}

// --- postprocess -----------------------------------------------------------------

TEST(Postprocess, MeanSubtractionZeroesRowAndColumnMeans) {
    const ImagePlane k = gaussian_plane(16, 16, 0.3, 1.0, 21);
    EXPECT_LT(max_abs_row_col_mean(subtract_row_col_means(k)), 1e-9);
}

TEST(Postprocess, ConstantFingerprintVanishes) {
    const ImagePlane z = subtract_row_col_means(ImagePlane(9, 7, 0.75));
    for (double v : z.data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Postprocess, MeanSubtractionIsIdempotent) {
    const ImagePlane once = subtract_row_col_means(gaussian_plane(12, 10, 1.0, 2.0, 5));
    const ImagePlane twice = subtract_row_col_means(once);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-12);
}

TEST(Postprocess, PostprocessedFingerprintHasZeroRowAndColumnMeans) {
    const Fingerprint fp{gaussian_plane(20, 14, 0.0, 0.02, 6), 10, false};
    const Fingerprint out = postprocess(fp);
    EXPECT_TRUE(out.postprocessed);
    EXPECT_EQ(out.training_count, 10u);
    EXPECT_LT(max_abs_row_col_mean(out.k), 1e-9);
}

TEST(Postprocess, FourierWienerMatchesNaiveDftOracle) {
    const std::size_t w = 6, h = 5, n = w * h;
    const ImagePlane k = subtract_row_col_means(gaussian_plane(w, h, 0.0, 1.0, 8));
    const double floor = 0.8;
    std::vector<std::complex<double>> spec(n);
    for (std::size_t i = 0; i < n; ++i) spec[i] = k[i];
    spec = dft2(spec, w, h, -1);
    std::vector<double> energy(n);
    for (std::size_t i = 0; i < n; ++i) energy[i] = std::norm(spec[i]) / static_cast<double>(n);
    std::vector<std::complex<double>> filtered(n);
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            double best = 1e300;
            for (int win : {3, 5, 7, 9}) {
                double s = 0.0;
                for (int du = -win / 2; du <= win / 2; ++du) {
                    for (int dv = -win / 2; dv <= win / 2; ++dv) {
                        const std::size_t uu = (u + h * 10 + du) % h, vv = (v + w * 10 + dv) % w;
                        s += energy[uu * w + vv];
                    }
                }
                best = std::min(best, std::max(0.0, s / (win * win) - floor));
            }
            filtered[u * w + v] = spec[u * w + v] * (floor / (floor + best));
        }
    }
    const auto back = dft2(filtered, w, h, +1);
    const ImagePlane got = fourier_wiener(k, floor);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], back[i].real() / n, 1e-12);
}

TEST(Postprocess, SuppressesPeriodicPattern) {
    // A strong period-4 column pattern on top of white noise is shrunk far
    // more than the noise itself.
    const std::size_t W = 64;
    ImagePlane noise = gaussian_plane(W, W, 0.0, 0.01, 12);
    ImagePlane k = noise;
    for (std::size_t r = 0; r < W; ++r) {
        for (std::size_t c = 0; c < W; ++c) k(r, c) += 0.05 * std::cos(2.0 * std::numbers::pi * (c + 2.0 * r) / 4.0);
    }
    const Fingerprint out = postprocess(Fingerprint{k, 5, false}, 1e-4);
    double pattern = 0.0, orig = 0.0;
    for (std::size_t r = 0; r < W; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
            const double basis = std::cos(2.0 * std::numbers::pi * (c + 2.0 * r) / 4.0);
            pattern += out.k(r, c) * basis;
            orig += k(r, c) * basis;
        }
    }
    EXPECT_LT(std::abs(pattern), 0.1 * std::abs(orig));
    EXPECT_GT(prnu::testing::correlation(out.k.data(), noise.data()), 0.8);
}

TEST(Postprocess, RejectsSecondPassAndNonFinite) {
    Fingerprint fp{gaussian_plane(8, 8, 0.0, 1.0, 1), 3, false};
    const Fingerprint done = postprocess(fp);
    EXPECT_THROW(postprocess(done), Error);
    fp.k[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        postprocess(fp);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
    }
}

// --- file format -----------------------------------------------------------------

TEST(FingerprintFile, RoundTripIsExact) {
    prnu::testing::ScratchDir dir("fp");
    const Fingerprint fp{gaussian_plane(7, 3, 0.0, 0.02, 2), 50, true};
    write_fingerprint(dir / "a.prnu", fp);
    const Fingerprint back = read_fingerprint(dir / "a.prnu");
    EXPECT_EQ(back.k, fp.k);
    EXPECT_EQ(back.training_count, 50u);
    EXPECT_TRUE(back.postprocessed);
    EXPECT_EQ(std::filesystem::file_size(dir / "a.prnu"), 21u + 8u * 21u);
}

TEST(FingerprintFile, LayoutIsLittleEndian) {
    const Fingerprint fp{ImagePlane(2, 1, std::vector<double>{1.0, -2.0}), 258, false};
    const auto bytes = encode_fingerprint(fp);
    ASSERT_EQ(bytes.size(), 21u + 16u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "PRNUFP1");
    EXPECT_EQ(bytes[7], 0);
    EXPECT_EQ(bytes[8], 2);   // width
    EXPECT_EQ(bytes[12], 1);  // height
    EXPECT_EQ(bytes[16], 2);  // L = 258 = 0x0102
    EXPECT_EQ(bytes[17], 1);
    EXPECT_EQ(bytes[20], 0);  // flag
    EXPECT_EQ(bytes[21], 0x00);  // 1.0 = 0x3ff0000000000000, bytes 21..28
    EXPECT_EQ(bytes[27], 0xf0);
    EXPECT_EQ(bytes[28], 0x3f);
    EXPECT_EQ(bytes[36], 0xc0);  // -2.0 = 0xc000000000000000
}

TEST(FingerprintFile, CorruptInputIsFormatError) {
    std::vector<unsigned char> bytes = encode_fingerprint(Fingerprint{ImagePlane(2, 2, 0.0), 2, false});
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_fingerprint(bad), Error);
    bytes.pop_back();
    try {
        decode_fingerprint(bytes);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
    }
}

TEST(FingerprintFile, SidecarSharesBasename) {
    EXPECT_EQ(sidecar_path("/tmp/cam0.prnu"), std::filesystem::path("/tmp/cam0.meta.json"));
}
