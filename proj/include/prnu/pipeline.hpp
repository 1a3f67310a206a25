#ifndef PRNU_PIPELINE_HPP
#define PRNU_PIPELINE_HPP

// Batch orchestration: model files, training over image pools, the
// screen-then-retest scan flow, and scan reports (CSV + JSON).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prnu/core.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/pixelplane.hpp"
#include "prnu/raster_io.hpp"
#include "prnu/sprt.hpp"
#include "prnu/stats.hpp"
#include "prnu/training.hpp"

namespace prnu {

// --- Model file ---------------------------------------------------------------

struct DetectionModel {
    H1Model h1;
    H0Model h0;

    friend bool operator==(const DetectionModel&, const DetectionModel&) = default;
};

namespace detail {

inline std::string format_real(double v) {
    if (!std::isfinite(v)) throw Error(ErrorKind::data, "cannot serialize non-finite value");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);  // 17 significant digits
    return buf;
}

inline std::string format_reals(const std::vector<double>& values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += format_real(values[i]);
    }
    return out + "]";
}

}  // namespace detail

/// Model JSON: kind, bin_edges, mu, sigma2, M_tr, h0{alpha0, c0}. A fixed
/// model stores its constants as one-element mu/sigma2 arrays and no edges.
inline std::string encode_model(const DetectionModel& model) {
    const H1Model& h1 = model.h1;
    const bool fixed = h1.kind == H1Kind::fixed;
    std::ostringstream out;
    out << "{\n"
        << "  \"kind\": \"" << (fixed ? "fixed" : "binned") << "\",\n"
        << "  \"bin_edges\": " << detail::format_reals(fixed ? std::vector<double>{} : h1.bin_edges) << ",\n"
        << "  \"mu\": " << detail::format_reals(fixed ? std::vector<double>{h1.fixed_mu} : h1.mu) << ",\n"
        << "  \"sigma2\": " << detail::format_reals(fixed ? std::vector<double>{h1.fixed_sigma2} : h1.sigma2) << ",\n"
        << "  \"M_tr\": " << h1.M_tr << ",\n"
        << "  \"h0\": {\"alpha0\": " << detail::format_real(model.h0.alpha0)
        << ", \"c0\": " << detail::format_real(model.h0.c0) << "}\n"
        << "}\n";
    return out.str();
}

inline DetectionModel decode_model(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("model JSON: ") + e.what());
    }
    try {
        DetectionModel model;
        const auto kind = j.at("kind").get<std::string>();
        model.h1.M_tr = j.at("M_tr").get<std::size_t>();
        const auto mu = j.at("mu").get<std::vector<double>>();
        const auto sigma2 = j.at("sigma2").get<std::vector<double>>();
        if (kind == "fixed") {
            if (mu.size() != 1 || sigma2.size() != 1) throw Error(ErrorKind::format, "fixed model needs one mu/sigma2");
            model.h1.kind = H1Kind::fixed;
            model.h1.fixed_mu = mu[0];
            model.h1.fixed_sigma2 = sigma2[0];
        } else if (kind == "binned") {
            model.h1.kind = H1Kind::binned;
            model.h1.bin_edges = j.at("bin_edges").get<std::vector<double>>();
            model.h1.mu = mu;
            model.h1.sigma2 = sigma2;
        } else {
            throw Error(ErrorKind::format, "unknown model kind '" + kind + "'");
        }
        model.h0.alpha0 = j.at("h0").at("alpha0").get<double>();
        model.h0.c0 = j.at("h0").at("c0").get<double>();
        model.h1.validate();
        model.h0.validate();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("model JSON: ") + e.what());
    }
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

inline void write_model(const std::filesystem::path& path, const DetectionModel& model) {
    write_text(path, encode_model(model));
}

inline DetectionModel read_model(const std::filesystem::path& path) { return decode_model(read_text(path)); }

// --- Image directories --------------------------------------------------------

/// Raster files (.png, .tif, .tiff, .pgm) in a directory, sorted by name.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::io, "not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Seeded choice of `count` distinct indices out of `pool`, returned ascending.
inline std::vector<std::size_t> choose_indices(std::size_t pool, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    if (count >= pool) return idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// --- Training -----------------------------------------------------------------

struct TrainOptions {
    std::size_t L = 50;
    std::size_t repeats = 5;
    std::size_t bins = 20;
    bool fixed = false;
    PairCollectionConfig pairs;
    std::uint64_t seed = 0;
};

/// Pools leave-one-out (u', v) pairs over `repeats` seeded selections of L
/// images, then fits the binned (or fixed) H1 law for subsets of T pixels.
inline H1Model train_h1(std::size_t pool_size, const ImageLoader& load, const Denoiser& denoiser,
                        const TrainOptions& options) {
    if (pool_size < 3) throw Error(ErrorKind::insufficient_data, "training needs at least 3 images");
    if (options.repeats == 0) throw Error(ErrorKind::domain, "repeats must be >= 1");
    std::vector<Observation> pairs;
    for (std::size_t r = 0; r < options.repeats; ++r) {
        const std::uint64_t repeat_seed = derive_seed(options.seed, r);
        const auto chosen = choose_indices(pool_size, std::max<std::size_t>(options.L, 3), derive_seed(repeat_seed, "select"));
        auto part = collect_pairs(chosen.size(), [&](std::size_t i) { return load(chosen[i]); }, repeat_seed, denoiser,
                                  options.pairs);
        pairs.insert(pairs.end(), part.begin(), part.end());
    }
    if (options.fixed) return fit_h1_fixed(pairs, options.pairs.subset_size);
    return fit_h1(pairs, options.bins, options.pairs.subset_size);
}

/// u' of every T-pixel subset of images that do not carry the fingerprint.
inline std::vector<double> collect_h0_samples(const Fingerprint& fp, std::size_t image_count, const ImageLoader& load,
                                              const Denoiser& denoiser, const PairCollectionConfig& config,
                                              std::uint64_t seed) {
    std::vector<double> samples;
    for (std::size_t m = 0; m < image_count; ++m) {
        const ImagePlane y = load(m);
        const auto planes = prepare_detection(y, fp, denoiser, config.saturation_threshold);
        const std::uint64_t image_seed = derive_seed(seed, m);
        SubsetStream stream(planes.mask, config.subset_size, image_seed);
        while (auto subset = stream.next()) {
            const std::size_t id = stream.drawn() - 1;
            if (auto obs = observe_subset(planes.residual, planes.kx, *subset, config.observation,
                                          derive_seed(image_seed, id), id)) {
                samples.push_back(obs->u_prime);
            }
        }
    }
    return samples;
}

// --- Scanning -----------------------------------------------------------------

struct ImageRecord {
    std::string image_id;
    int true_label = -1;  // 1 = H1, 0 = H0, -1 = unknown
    SprtOutcome sprt_outcome = SprtOutcome::undecided;
    std::size_t n_used = 0;
    std::size_t pixels_used = 0;
    std::optional<bool> retest;  // full-image verdict; absent for SPRT negatives
    bool final_positive = false;
    double llr_final = 0.0;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct ScanOptions {
    SprtPlan plan;
    SprtConfig sprt;
    FullTestConfig retest;
    std::uint64_t seed = 0;
};

/// One image through the screen-then-retest flow: accept_H0 is final, while
/// accept_H1 and undecided outcomes are retested on all usable pixels.
/// `h1` must already be rescaled to T.
inline ImageRecord scan_image(const std::string& image_id, const ImagePlane& y, const Fingerprint& fp,
                              const DetectionModel& model, const Denoiser& denoiser, const ScanOptions& options,
                              int true_label = -1) {
    const std::uint64_t image_seed = derive_seed(options.seed, image_id);
    SprtPlan plan = options.plan;
    plan.seed = image_seed;
    const auto planes = prepare_detection(y, fp, denoiser, options.sprt.saturation_threshold);
    const auto decision = run(planes, model.h1, model.h0, plan, options.sprt.observation);
    ImageRecord rec;
    rec.image_id = image_id;
    rec.true_label = true_label;
    rec.sprt_outcome = decision.outcome;
    rec.n_used = decision.n_used;
    rec.pixels_used = decision.pixels_used;
    rec.llr_final = decision.llr_final();
    if (decision.outcome != SprtOutcome::accept_h0) {
        FullTestConfig retest = options.retest;
        retest.seed = derive_seed(image_seed, "retest");
        const auto full = full_image_test(planes, model.h1, model.h0, retest);
        rec.retest = full.positive;
        rec.final_positive = full.positive;
    }
    return rec;
}

struct ReportAggregates {
    std::size_t scanned = 0;
    std::size_t skipped = 0;
    std::size_t h1_count = 0;
    std::size_t h0_count = 0;
    std::optional<double> pd;          // final, after retest
    std::optional<double> pf;
    std::optional<double> sprt_pd;     // SPRT stage alone (accept_H1)
    std::optional<double> sprt_pf;
    std::optional<double> n_bar_h1;
    std::optional<double> n_bar_h0;
    std::optional<double> p_h1;
    double n_bar = 0.0;
    double retest_fraction = 0.0;
    double cost_ratio = 0.0;

    friend bool operator==(const ReportAggregates&, const ReportAggregates&) = default;
};

struct ScanReport {
    std::vector<ImageRecord> records;
    std::vector<std::string> skipped_files;
    std::size_t T = 1024;
    double M = 0.0;  // pixels per image
    ReportAggregates aggregates;
};

/// Recomputes every aggregate from the per-image records.
inline ReportAggregates compute_aggregates(const std::vector<ImageRecord>& records, std::size_t skipped,
                                          std::size_t T, double M) {
    ReportAggregates a;
    a.scanned = records.size();
    a.skipped = skipped;
    std::size_t h1_final = 0, h0_final = 0, h1_sprt = 0, h0_sprt = 0, routed = 0;
    double n_h1 = 0.0, n_h0 = 0.0, n_all = 0.0;
    for (const auto& r : records) {
        const bool routed_here = r.sprt_outcome != SprtOutcome::accept_h0;
        routed += routed_here;
        n_all += static_cast<double>(r.n_used);
        if (r.true_label == 1) {
            ++a.h1_count;
            h1_final += r.final_positive;
            h1_sprt += r.sprt_outcome == SprtOutcome::accept_h1;
            n_h1 += static_cast<double>(r.n_used);
        } else if (r.true_label == 0) {
            ++a.h0_count;
            h0_final += r.final_positive;
            h0_sprt += r.sprt_outcome == SprtOutcome::accept_h1;
            n_h0 += static_cast<double>(r.n_used);
        }
    }
    if (a.h1_count) {
        const double n = static_cast<double>(a.h1_count);
        a.pd = h1_final / n;
        a.sprt_pd = h1_sprt / n;
        a.n_bar_h1 = n_h1 / n;
    }
    if (a.h0_count) {
        const double n = static_cast<double>(a.h0_count);
        a.pf = h0_final / n;
        a.sprt_pf = h0_sprt / n;
        a.n_bar_h0 = n_h0 / n;
    }
    const std::size_t labeled = a.h1_count + a.h0_count;
    if (labeled) {
        a.p_h1 = static_cast<double>(a.h1_count) / static_cast<double>(labeled);
        a.n_bar = a.n_bar_h0.value_or(0.0) * (1.0 - *a.p_h1) + a.n_bar_h1.value_or(0.0) * *a.p_h1;
    } else if (!records.empty()) {
        a.n_bar = n_all / static_cast<double>(records.size());
    }
    if (!records.empty()) {
        a.retest_fraction = static_cast<double>(routed) / static_cast<double>(records.size());
        if (M > 0.0) a.cost_ratio = a.retest_fraction + a.n_bar * static_cast<double>(T) / M;
    }
    return a;
}

inline void finalize(ScanReport& report) {
    report.aggregates = compute_aggregates(report.records, report.skipped_files.size(), report.T, report.M);
}

// CSV: image_id,true_label,sprt_outcome,n_used,pixels_used,retest,final,llr_final

inline constexpr const char* kReportCsvHeader = "image_id,true_label,sprt_outcome,n_used,pixels_used,retest,final,llr_final";

inline SprtOutcome outcome_from_string(const std::string& s) {
    if (s == "accept_H1") return SprtOutcome::accept_h1;
    if (s == "accept_H0") return SprtOutcome::accept_h0;
    if (s == "undecided") return SprtOutcome::undecided;
    throw Error(ErrorKind::format, "unknown SPRT outcome '" + s + "'");
}

inline std::string encode_report_csv(const ScanReport& report) {
    std::string out = std::string(kReportCsvHeader) + "\n";
    for (const auto& r : report.records) {
        if (r.image_id.find_first_of(",\n\"") != std::string::npos) {
            throw Error(ErrorKind::data, "image id not representable in CSV: " + r.image_id);
        }
        out += r.image_id + "," + std::to_string(r.true_label) + "," + to_string(r.sprt_outcome) + "," +
               std::to_string(r.n_used) + "," + std::to_string(r.pixels_used) + "," +
               (r.retest ? (*r.retest ? "positive" : "negative") : "") + "," + (r.final_positive ? "1" : "0") + "," +
               detail::format_real(r.llr_final) + "\n";
    }
    return out;
}

inline std::vector<ImageRecord> decode_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kReportCsvHeader) throw Error(ErrorKind::format, "bad report CSV header");
    std::vector<ImageRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 8) throw Error(ErrorKind::format, "report CSV row needs 8 fields: " + line);
        ImageRecord r;
        try {
            r.image_id = f[0];
            r.true_label = std::stoi(f[1]);
            r.sprt_outcome = outcome_from_string(f[2]);
            r.n_used = std::stoull(f[3]);
            r.pixels_used = std::stoull(f[4]);
            if (f[5] == "positive") r.retest = true;
            else if (f[5] == "negative") r.retest = false;
            else if (!f[5].empty()) throw Error(ErrorKind::format, "bad retest field '" + f[5] + "'");
            r.final_positive = f[6] == "1";
            r.llr_final = std::stod(f[7]);
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::format, "malformed report CSV row: " + line);
        }
        records.push_back(r);
    }
    return records;
}

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> optional_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace detail

inline nlohmann::json aggregates_to_json(const ReportAggregates& a) {
    return {{"scanned", a.scanned},
            {"skipped", a.skipped},
            {"h1_count", a.h1_count},
            {"h0_count", a.h0_count},
            {"P_D", detail::optional_json(a.pd)},
            {"P_F", detail::optional_json(a.pf)},
            {"sprt_P_D", detail::optional_json(a.sprt_pd)},
            {"sprt_P_F", detail::optional_json(a.sprt_pf)},
            {"n_bar_H1", detail::optional_json(a.n_bar_h1)},
            {"n_bar_H0", detail::optional_json(a.n_bar_h0)},
            {"p_H1", detail::optional_json(a.p_h1)},
            {"n_bar", a.n_bar},
            {"retest_fraction", a.retest_fraction},
            {"cost_ratio", a.cost_ratio}};
}

inline ReportAggregates aggregates_from_json(const nlohmann::json& j) {
    ReportAggregates a;
    a.scanned = j.at("scanned").get<std::size_t>();
    a.skipped = j.at("skipped").get<std::size_t>();
    a.h1_count = j.at("h1_count").get<std::size_t>();
    a.h0_count = j.at("h0_count").get<std::size_t>();
    a.pd = detail::optional_from_json(j.at("P_D"));
    a.pf = detail::optional_from_json(j.at("P_F"));
    a.sprt_pd = detail::optional_from_json(j.at("sprt_P_D"));
    a.sprt_pf = detail::optional_from_json(j.at("sprt_P_F"));
    a.n_bar_h1 = detail::optional_from_json(j.at("n_bar_H1"));
    a.n_bar_h0 = detail::optional_from_json(j.at("n_bar_H0"));
    a.p_h1 = detail::optional_from_json(j.at("p_H1"));
    a.n_bar = j.at("n_bar").get<double>();
    a.retest_fraction = j.at("retest_fraction").get<double>();
    a.cost_ratio = j.at("cost_ratio").get<double>();
    return a;
}

inline std::string encode_report_json(const ScanReport& report) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : report.records) {
        records.push_back({{"image_id", r.image_id},
                           {"true_label", r.true_label},
                           {"sprt_outcome", to_string(r.sprt_outcome)},
                           {"n_used", r.n_used},
                           {"pixels_used", r.pixels_used},
                           {"retest", r.retest ? nlohmann::json(*r.retest ? "positive" : "negative") : nlohmann::json(nullptr)},
                           {"final", r.final_positive ? 1 : 0},
                           {"llr_final", r.llr_final}});
    }
    nlohmann::json j = {{"T", report.T},
                        {"M", report.M},
                        {"skipped_files", report.skipped_files},
                        {"records", records},
                        {"aggregates", aggregates_to_json(report.aggregates)}};
    return j.dump(2) + "\n";
}

namespace detail {

inline bool close(double a, double b) { return a == b || std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); }

inline bool close(const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) return false;
    return !a || close(*a, *b);
}

}  // namespace detail

inline bool aggregates_match(const ReportAggregates& a, const ReportAggregates& b) {
    using detail::close;
    return a.scanned == b.scanned && a.skipped == b.skipped && a.h1_count == b.h1_count && a.h0_count == b.h0_count &&
           close(a.pd, b.pd) && close(a.pf, b.pf) && close(a.sprt_pd, b.sprt_pd) && close(a.sprt_pf, b.sprt_pf) &&
           close(a.n_bar_h1, b.n_bar_h1) && close(a.n_bar_h0, b.n_bar_h0) && close(a.p_h1, b.p_h1) &&
           close(a.n_bar, b.n_bar) && close(a.retest_fraction, b.retest_fraction) && close(a.cost_ratio, b.cost_ratio);
}

/// Parses a JSON report and audits its aggregates against the records.
inline ScanReport decode_report_json(const std::string& text) {
    ScanReport report;
    try {
        const auto j = nlohmann::json::parse(text);
        report.T = j.at("T").get<std::size_t>();
        report.M = j.at("M").get<double>();
        report.skipped_files = j.at("skipped_files").get<std::vector<std::string>>();
        for (const auto& r : j.at("records")) {
            ImageRecord rec;
            rec.image_id = r.at("image_id").get<std::string>();
            rec.true_label = r.at("true_label").get<int>();
            rec.sprt_outcome = outcome_from_string(r.at("sprt_outcome").get<std::string>());
            rec.n_used = r.at("n_used").get<std::size_t>();
            rec.pixels_used = r.at("pixels_used").get<std::size_t>();
            if (!r.at("retest").is_null()) rec.retest = r.at("retest").get<std::string>() == "positive";
            rec.final_positive = r.at("final").get<int>() == 1;
            rec.llr_final = r.at("llr_final").get<double>();
            report.records.push_back(rec);
        }
        report.aggregates = aggregates_from_json(j.at("aggregates"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("report JSON: ") + e.what());
    }
    const auto recomputed = compute_aggregates(report.records, report.skipped_files.size(), report.T, report.M);
    if (!aggregates_match(recomputed, report.aggregates)) {
        throw Error(ErrorKind::data, "report aggregates do not match its records");
    }
    return report;
}

/// Every accept_H0 record lacks a retest; every other record has exactly one.
inline bool routing_consistent(const ImageRecord& r) {
    return (r.sprt_outcome == SprtOutcome::accept_h0) != r.retest.has_value();
}

}  // namespace prnu

#endif  // PRNU_PIPELINE_HPP
