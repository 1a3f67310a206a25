#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "prnu/synthcam.hpp"
#include "prnu/training.hpp"
#include "support.hpp"

using namespace prnu;

namespace {

std::vector<ImagePlane> flatfield_shots(const SynthCamera& cam, std::size_t count, std::uint64_t seed) {
    std::vector<ImagePlane> out;
    for (std::size_t m = 0; m < count; ++m) out.push_back(shoot(cam, training_flatfield(), derive_seed(seed, m)));
    return out;
}

PairCollectionConfig config_for(std::size_t T) {
    PairCollectionConfig c;
    c.subset_size = T;
    return c;
}

const Denoiser kDenoiser = WienerDenoiser{};

double sample_variance(const std::vector<double>& x) {
    const double m = prnu::testing::mean_of(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

}  // namespace

// --- collect_pairs ---------------------------------------------------------------

TEST(CollectPairs, OnePairPerImageWhenImageHoldsOneSubset) {
    const SynthCamera cam = make_camera(8, 8, 0.02, 2.0, 1);
    std::vector<ImagePlane> shots;
    for (std::uint64_t m = 0; m < 5; ++m) shots.push_back(shoot(cam, SceneConfig::flatfield(100.0, 20.0), m));
    for (const auto& y : shots) ASSERT_EQ(saturation_mask(y, 250.0).usable_count(), 64u);
    const auto pairs = collect_pairs(shots, 3, kDenoiser, config_for(64));
    EXPECT_EQ(pairs.size(), 5u);
}

TEST(CollectPairs, DeterministicForFixedSeed) {
    const SynthCamera cam = make_camera(32, 32, 0.02, 2.0, 4);
    const auto shots = flatfield_shots(cam, 4, 5);
    const auto a = collect_pairs(shots, 9, kDenoiser, config_for(100));
    const auto b = collect_pairs(shots, 9, kDenoiser, config_for(100));
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_NE(a, collect_pairs(shots, 10, kDenoiser, config_for(100)));
}

TEST(CollectPairs, StrongPrnuGivesPositiveMeanCorrelation) {
    int positive = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const SynthCamera cam = make_camera(32, 32, 0.02, 2.0, 100 + s);
        const auto pairs = collect_pairs(flatfield_shots(cam, 5, s), s, kDenoiser, config_for(256));
        double mean = 0.0;
        for (const auto& p : pairs) mean += p.u_prime / static_cast<double>(pairs.size());
        positive += mean > 0.0;
    }
    EXPECT_EQ(positive, 20);
}

TEST(CollectPairs, NeedsThreeImages) {
    const SynthCamera cam = make_camera(8, 8, 0.02, 2.0, 1);
    try {
        collect_pairs(flatfield_shots(cam, 2, 0), 0, kDenoiser, config_for(16));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
    }
}

// --- fit_h1 ----------------------------------------------------------------------

TEST(FitH1, LinearPairsGiveBinMeansOfTwiceV) {
    std::vector<Observation> pairs;
    Rng rng(3);
    std::uniform_real_distribution<double> uni(0.0, 10.0);
    for (std::size_t i = 0; i < 40; ++i) {
        const double v = uni(rng);
        pairs.push_back({2.0 * v, v, i});
    }
    const H1Model m = fit_h1(pairs, 4, 1024);
    ASSERT_EQ(m.kind, H1Kind::binned);
    ASSERT_EQ(m.mu.size(), 4u);
    EXPECT_EQ(m.M_tr, 1024u);
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.v < b.v; });
    for (std::size_t b = 0; b < 4; ++b) {
        std::vector<double> u;
        for (std::size_t i = 10 * b; i < 10 * b + 10; ++i) u.push_back(sorted[i].u_prime);
        EXPECT_NEAR(m.mu[b], prnu::testing::mean_of(u), 1e-12);
        EXPECT_NEAR(m.sigma2[b], sample_variance(u), 1e-12);
    }
    EXPECT_DOUBLE_EQ(m.bin_edges.front(), sorted.front().v);
}

TEST(FitH1, IdenticalPairsDegenerateToFixedWithFloor) {
    const std::vector<Observation> pairs(30, Observation{1.0, 1.0, 0});
    const H1Model m = fit_h1(pairs, 5, 256);
    EXPECT_EQ(m.kind, H1Kind::fixed);
    EXPECT_DOUBLE_EQ(m.fixed_mu, 1.0);
    EXPECT_DOUBLE_EQ(m.fixed_sigma2, kSigma2Floor);
    EXPECT_EQ(m.M_tr, 256u);
}

TEST(FitH1, IndependentGaussianBinsCenterOnMean) {
    Rng rng(8);
    std::normal_distribution<double> g(3.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 50.0);
    std::vector<Observation> pairs;
    for (std::size_t i = 0; i < 2000; ++i) pairs.push_back({g(rng), uni(rng), i});
    const H1Model m = fit_h1(pairs, 20, 1024);
    ASSERT_EQ(m.mu.size(), 20u);
    const double se = 1.0 / std::sqrt(100.0);
    for (double mu : m.mu) EXPECT_NEAR(mu, 3.0, 5.0 * se);
}

TEST(FitH1, PermutationInvariant) {
    Rng rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Observation> pairs;
    for (std::size_t i = 0; i < 300; ++i) {
        const double v = std::abs(g(rng)) * 5.0;
        pairs.push_back({v + g(rng), v, i});
    }
    const H1Model ref = fit_h1(pairs, 10, 1024);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        EXPECT_EQ(fit_h1(pairs, 10, 1024), ref);
    }
}

TEST(FitH1, TiesAndSparseBinsStayValid) {
    std::vector<Observation> pairs;
    for (std::size_t i = 0; i < 25; ++i) pairs.push_back({1.0 + 0.1 * i, 2.0, i});
    pairs.push_back({5.0, 7.0, 25});
    pairs.push_back({6.0, 9.0, 26});
    const H1Model m = fit_h1(pairs, 10, 64);
    EXPECT_NO_THROW(m.validate());
    EXPECT_LE(m.bin_count(), 10u);
    if (m.kind == H1Kind::binned) {
        for (std::size_t i = 1; i < m.bin_edges.size(); ++i) EXPECT_GT(m.bin_edges[i], m.bin_edges[i - 1]);
    }
}

TEST(FitH1, FixedFitUsesPooledMoments) {
    const std::vector<Observation> pairs{{1.0, 0.0, 0}, {2.0, 5.0, 1}, {3.0, 9.0, 2}, {6.0, 1.0, 3}};
    const H1Model m = fit_h1_fixed(pairs, 512);
    EXPECT_EQ(m.kind, H1Kind::fixed);
    EXPECT_DOUBLE_EQ(m.fixed_mu, 3.0);
    EXPECT_DOUBLE_EQ(m.fixed_sigma2, (4.0 + 1.0 + 0.0 + 9.0) / 3.0);
}

TEST(FitH1, LearnedMeanRisesWithVOnSyntheticCamera) {
    int monotone = 0, rising = 0;
    const int runs = 10;
    for (int s = 0; s < runs; ++s) {
        const SynthCamera cam = make_camera(64, 64, 0.02, 2.0, 500 + s);
        const auto pairs = collect_pairs(flatfield_shots(cam, 10, 600 + s), s, kDenoiser, config_for(256));
        const H1Model m = fit_h1(pairs, 5, 256);
        ASSERT_EQ(m.kind, H1Kind::binned);
        monotone += std::is_sorted(m.mu.begin(), m.mu.end());
        rising += m.mu.back() > m.mu.front();
    }
    EXPECT_GE(monotone, 9);
    EXPECT_GT(rising, runs / 2);
}

// --- lookup / rescale ------------------------------------------------------------

namespace {

H1Model three_bins() {
    H1Model m;
    m.kind = H1Kind::binned;
    m.bin_edges = {1.0, 2.0, 4.0, 8.0};
    m.mu = {10.0, 20.0, 30.0};
    m.sigma2 = {1.0, 2.0, 3.0};
    m.M_tr = 1024;
    return m;
}

}  // namespace

TEST(Lookup, ClampsBelowAndAbove) {
    const H1Model m = three_bins();
    EXPECT_EQ(lookup(m, 0.0).mu, 10.0);
    EXPECT_EQ(lookup(m, 0.5).sigma2, 1.0);
    EXPECT_EQ(lookup(m, 100.0).mu, 30.0);
}

TEST(Lookup, InteriorEdgeBelongsToRightBin) {
    const H1Model m = three_bins();
    EXPECT_EQ(lookup(m, 2.0).mu, 20.0);
    EXPECT_EQ(lookup(m, std::nextafter(2.0, 0.0)).mu, 10.0);
    EXPECT_EQ(lookup(m, 4.0).mu, 30.0);
}

TEST(Lookup, FixedModelIgnoresV) {
    H1Model m;
    m.kind = H1Kind::fixed;
    m.fixed_mu = 0.81;
    m.fixed_sigma2 = 1.17;
    EXPECT_EQ(lookup(m, 0.0).mu, lookup(m, 100.0).mu);
    EXPECT_EQ(lookup(m, 0.0).sigma2, lookup(m, 100.0).sigma2);
}

TEST(Lookup, TotalAndPiecewiseConstant) {
    const H1Model m = three_bins();
    for (double v = 0.0; v < 20.0; v += 0.01) {
        const auto p = lookup(m, v);
        EXPECT_TRUE(p.mu == 10.0 || p.mu == 20.0 || p.mu == 30.0);
    }
}

TEST(Rescale, IdentityAtSameSize) { EXPECT_EQ(rescale(three_bins(), 1024), three_bins()); }

TEST(Rescale, FourTimesPixelsDoublesEverything) {
    const H1Model m = rescale(three_bins(), 4096);
    EXPECT_EQ(m.bin_edges, (std::vector<double>{2.0, 4.0, 8.0, 16.0}));
    EXPECT_EQ(m.mu, (std::vector<double>{20.0, 40.0, 60.0}));
    EXPECT_EQ(m.sigma2, (std::vector<double>{2.0, 4.0, 6.0}));
    EXPECT_EQ(m.M_tr, 4096u);
}

TEST(Rescale, RoundTripRestoresModel) {
    H1Model m = three_bins();
    m.mu = {1.3, 2.7, 3.1};
    m.M_tr = 1000;
    const H1Model back = rescale(rescale(m, 3000), 1000);
    for (std::size_t i = 0; i < m.mu.size(); ++i) {
        EXPECT_NEAR(back.mu[i], m.mu[i], 1e-12);
        EXPECT_NEAR(back.sigma2[i], m.sigma2[i], 1e-12);
    }
    for (std::size_t i = 0; i < m.bin_edges.size(); ++i) EXPECT_NEAR(back.bin_edges[i], m.bin_edges[i], 1e-12);
    EXPECT_EQ(back.M_tr, 1000u);
}

// --- fit_h0_ggd ------------------------------------------------------------------

TEST(FitH0, RecoversPaperParameters) {
    const H0Model truth{1.24, 1.78};
    GgdSampler draw(truth);
    Rng rng(2024);
    std::vector<double> x(100000);
    for (auto& v : x) v = draw(rng);
    const H0Model fit = fit_h0_ggd(x);
    EXPECT_NEAR(fit.alpha0, 1.24, 0.02 * 1.24);
    EXPECT_NEAR(fit.c0, 1.78, 0.03 * 1.78);
}

TEST(FitH0, GaussianSamplesGiveShapeTwo) {
    const auto x = prnu::testing::gaussian_vector(100000, 0.0, 1.0, 77);
    const H0Model fit = fit_h0_ggd(x);
    EXPECT_NEAR(fit.c0, 2.0, 0.03 * 2.0);
    EXPECT_NEAR(fit.alpha0, std::sqrt(2.0), 0.02 * std::sqrt(2.0));
}

TEST(FitH0, LaplaceSamplesGiveShapeOne) {
    Rng rng(5);
    std::exponential_distribution<double> e(1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> x(50000);
    for (auto& v : x) v = sign(rng) ? e(rng) : -e(rng);
    const H0Model fit = fit_h0_ggd(x);
    EXPECT_NEAR(fit.c0, 1.0, 0.03);
    EXPECT_NEAR(fit.alpha0, 1.0, 0.03);
}

TEST(FitH0, ConstantSamplesAreFitError) {
    const std::vector<double> x(500, 0.7);
    try {
        fit_h0_ggd(x);
        FAIL() << "expected an error";
    } catch (const GgdFitError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::fit);
    }
}

TEST(FitH0, TooFewSamples) {
    const auto x = prnu::testing::gaussian_vector(99, 0.0, 1.0, 1);
    try {
        fit_h0_ggd(x);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
    }
}

TEST(FitH0, NeverWorseThanInitializer) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(s);
        std::uniform_real_distribution<double> c(0.5, 4.0);
        const H0Model truth{1.0, c(rng)};
        GgdSampler draw(truth);
        std::vector<double> x(500);
        for (auto& v : x) v = draw(rng);
        const H0Model fit = fit_h0_ggd(x);
        EXPECT_GE(ggd_mean_loglik(x, fit), ggd_mean_loglik(x, ggd_moment_init(x)) - 1e-12);
    }
}

TEST(FitH0, ShapeEquationVanishesAtFit) {
    const auto x = prnu::testing::gaussian_vector(5000, 0.0, 2.0, 3);
    const H0Model fit = fit_h0_ggd(x);
    // The profile log-likelihood is maximal at the fitted shape.
    auto profile = [&](double c) {
        double s = 0.0;
        for (double v : x) s += std::pow(std::abs(v), c);
        const double alpha = std::pow(c * s / x.size(), 1.0 / c);
        return ggd_mean_loglik(x, H0Model{alpha, c});
    };
    EXPECT_GE(profile(fit.c0), profile(fit.c0 * 1.01));
    EXPECT_GE(profile(fit.c0), profile(fit.c0 * 0.99));
}
