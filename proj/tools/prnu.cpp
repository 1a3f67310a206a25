// prnu: command-line front end for fingerprint extraction, model training,
// sequential camera identification, and synthetic corpus generation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prnu/prnu.hpp"

namespace fs = std::filesystem;
using namespace prnu;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kInsufficient = 3, kBound = 4, kIo = 5 };

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return kUsage;
        case ErrorKind::insufficient_data: return kInsufficient;
        case ErrorKind::bound_violation: return kBound;
        case ErrorKind::io:
        case ErrorKind::format: return kIo;
        default: return kOther;
    }
}

struct CommonOptions {
    std::uint64_t seed = 0;
    std::size_t T = 1024;
    std::size_t N = 256;
    double pd = 0.98;
    double pf = 0.3;
    double p = 0.0285;
    double beta = 0.65;
    std::string variance = "fast";
    std::string detector = "improved";
    std::size_t window = 3;
    double saturation = 250.0;
    std::size_t exclusion_radius = 2;
    std::size_t num_shifts = 64;

    ObservationConfig observation() const {
        ObservationConfig c;
        c.estimator = variance == "shift" ? VarianceEstimator::shift : VarianceEstimator::fast;
        c.exclusion_radius = exclusion_radius;
        c.num_shifts = num_shifts;
        return c;
    }
    Denoiser denoiser() const { return WienerDenoiser{window, std::nullopt}; }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--seed", o.seed, "Global seed")->capture_default_str();
    cmd->add_option("--T", o.T, "Pixels per subset")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--N", o.N, "Maximum SPRT observations")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--pd", o.pd, "Target detection probability")->capture_default_str();
    cmd->add_option("--pf", o.pf, "Target SPRT false-positive probability")->capture_default_str();
    cmd->add_option("--p", o.p, "H0 contamination of H1 training data")->capture_default_str();
    cmd->add_option("--beta", o.beta, "Threshold tightening factor")->capture_default_str();
    cmd->add_option("--variance", o.variance, "Variance estimator")
        ->check(CLI::IsMember({"fast", "shift"}))
        ->capture_default_str();
    cmd->add_option("--detector", o.detector, "Full-image detector")
        ->check(CLI::IsMember({"improved", "fixed"}))
        ->capture_default_str();
    cmd->add_option("--window", o.window, "Wiener denoiser window")->capture_default_str();
    cmd->add_option("--saturation", o.saturation, "Saturation threshold")->capture_default_str();
    cmd->add_option("--exclusion-radius", o.exclusion_radius, "Shift-variance exclusion radius")->capture_default_str();
    cmd->add_option("--shifts", o.num_shifts, "Shift-variance shift count")->capture_default_str();
}

// --- extract -----------------------------------------------------------------

struct ExtractArgs {
    fs::path images, out;
    std::size_t L = 50;
    bool no_postprocess = false;
};

int cmd_extract(const ExtractArgs& a, const CommonOptions& o) {
    const auto files = list_images(a.images);
    if (files.size() < 2) throw Error(ErrorKind::insufficient_data, "extract needs at least 2 training images");
    const auto chosen = choose_indices(files.size(), a.L, derive_seed(o.seed, "extract"));
    if (chosen.size() < 2) throw Error(ErrorKind::insufficient_data, "extract needs L >= 2");
    const Denoiser denoiser = o.denoiser();
    std::optional<FingerprintAccumulator> acc;
    nlohmann::json sources = nlohmann::json::array();
    for (std::size_t i : chosen) {
        const ImagePlane y = load_grayscale(files[i]);
        if (!acc) acc.emplace(y.width(), y.height());
        const ImagePlane xhat = denoiser(y);
        const PixelMask mask = saturation_mask(y, o.saturation);
        acc->add(y, xhat, &mask);
        sources.push_back(files[i].filename().string());
    }
    Fingerprint fp = acc->result();
    const double floor = plane_variance(subtract_row_col_means(fp.k));
    if (!a.no_postprocess) fp = postprocess(fp, floor);
    write_fingerprint(a.out, fp);
    nlohmann::json meta = {{"width", fp.k.width()},
                           {"height", fp.k.height()},
                           {"L", fp.training_count},
                           {"postprocessed", fp.postprocessed},
                           {"seed", o.seed},
                           {"window", o.window},
                           {"saturation", o.saturation},
                           {"wiener_noise_floor", floor},
                           {"sources", sources}};
    write_text(sidecar_path(a.out), meta.dump(2) + "\n");
    std::cerr << "fingerprint from " << fp.training_count << " images -> " << a.out.string() << "\n";
    return kOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
    fs::path images, out, fingerprint, h0_images;
    std::size_t L = 50, repeats = 5, bins = 20;
    bool fixed = false, no_postprocess = false;
    std::optional<double> alpha0, c0;
};

int cmd_train(const TrainArgs& a, const CommonOptions& o) {
    const auto files = list_images(a.images);
    if (files.size() < 3) throw Error(ErrorKind::insufficient_data, "train needs at least 3 training images");
    const Denoiser denoiser = o.denoiser();
    TrainOptions opt;
    opt.L = a.L;
    opt.repeats = a.repeats;
    opt.bins = a.bins;
    opt.fixed = a.fixed;
    opt.seed = derive_seed(o.seed, "train");
    opt.pairs.subset_size = o.T;
    opt.pairs.observation = o.observation();
    opt.pairs.saturation_threshold = o.saturation;
    opt.pairs.postprocess = !a.no_postprocess;
    DetectionModel model;
    model.h1 = train_h1(files.size(), [&](std::size_t i) { return load_grayscale(files[i]); }, denoiser, opt);

    if (!a.h0_images.empty()) {
        if (a.fingerprint.empty()) throw Error(ErrorKind::usage, "--h0-images requires --fingerprint");
        const Fingerprint fp = read_fingerprint(a.fingerprint);
        const auto others = list_images(a.h0_images);
        const auto samples = collect_h0_samples(fp, others.size(), [&](std::size_t i) { return load_grayscale(others[i]); },
                                                denoiser, opt.pairs, derive_seed(o.seed, "h0"));
        model.h0 = fit_h0_ggd(samples);
        std::cerr << "H0 fit on " << samples.size() << " samples: alpha0 = " << model.h0.alpha0
                  << ", c0 = " << model.h0.c0 << "\n";
    }
    if (a.alpha0) model.h0.alpha0 = *a.alpha0;
    if (a.c0) model.h0.c0 = *a.c0;
    model.h0.validate();
    write_model(a.out, model);
    std::cerr << (model.h1.kind == H1Kind::fixed ? "fixed" : "binned") << " model (M_tr = " << model.h1.M_tr
              << ") -> " << a.out.string() << "\n";
    return kOk;
}

// --- scan / test -------------------------------------------------------------

struct DetectArgs {
    fs::path fingerprint, model, images, image, truth, csv, json, out;
    std::string camera;
    std::string preset = "paper-table3";
    double eta3 = 0.0, retest_pf = 0.01;
};

ScanOptions scan_options(const DetectArgs& a, const CommonOptions& o, const CLI::App& cmd) {
    ScanOptions s;
    const bool custom = cmd.count("--pd") || cmd.count("--pf") || cmd.count("--p") || cmd.count("--beta") ||
                        cmd.count("--T") || cmd.count("--N");
    if (a.preset == "paper-table3" && !custom) {
        s.plan = paper_table3_plan();
    } else {
        s.plan = make_plan(o.pd, o.pf, o.p, o.beta, o.T, o.N, 0);
    }
    s.sprt.observation = o.observation();
    s.sprt.saturation_threshold = o.saturation;
    s.retest.mode = o.detector == "fixed" ? DetectorMode::fixed : DetectorMode::improved;
    s.retest.eta3 = a.eta3;
    s.retest.fixed_pf = a.retest_pf;
    s.retest.observation = s.sprt.observation;
    s.retest.saturation_threshold = o.saturation;
    s.seed = o.seed;
    return s;
}

DetectionModel load_model_for(const fs::path& path, std::size_t T) {
    DetectionModel model = read_model(path);
    if (model.h1.M_tr != T) model.h1 = rescale(model.h1, T);
    return model;
}

// Camera label per image file name from a simulate truth file.
std::map<std::string, std::string> truth_cameras(const fs::path& path) {
    std::map<std::string, std::string> out;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
        for (const auto& img : j.at("images")) out[img.at("file").get<std::string>()] = img.at("camera").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("truth file: ") + e.what());
    }
    return out;
}

int cmd_scan(const DetectArgs& a, const CommonOptions& o, const CLI::App& cmd) {
    const ScanOptions opts = scan_options(a, o, cmd);
    const Fingerprint fp = read_fingerprint(a.fingerprint);
    const DetectionModel model = load_model_for(a.model, opts.plan.T);
    std::map<std::string, std::string> truth;
    if (!a.truth.empty()) {
        if (a.camera.empty()) throw Error(ErrorKind::usage, "--truth requires --camera");
        truth = truth_cameras(a.truth);
    }
    const Denoiser denoiser = o.denoiser();
    ScanReport report;
    report.T = opts.plan.T;
    report.M = static_cast<double>(fp.k.size());
    for (const auto& file : list_images(a.images)) {
        const std::string id = file.filename().string();
        ImagePlane y;
        try {
            y = load_grayscale(file);
            if (!y.same_shape(fp.k)) throw Error(ErrorKind::shape, "size differs from fingerprint");
        } catch (const Error& e) {
            std::cerr << "skipping " << id << ": " << e.what() << "\n";
            report.skipped_files.push_back(id);
            continue;
        }
        int label = -1;
        if (auto it = truth.find(id); it != truth.end()) label = it->second == a.camera ? 1 : 0;
        report.records.push_back(scan_image(id, y, fp, model, denoiser, opts, label));
    }
    finalize(report);
    const std::string json = encode_report_json(report);
    if (!a.json.empty()) write_text(a.json, json);
    if (!a.csv.empty()) write_text(a.csv, encode_report_csv(report));
    if (a.json.empty() && a.csv.empty()) std::cout << json;
    const auto& g = report.aggregates;
    std::cerr << "scanned " << g.scanned << ", skipped " << g.skipped << ", retested " << g.retest_fraction
              << ", cost ratio " << g.cost_ratio << "\n";
    return kOk;
}

int cmd_test(const DetectArgs& a, const CommonOptions& o, const CLI::App& cmd) {
    const ScanOptions opts = scan_options(a, o, cmd);
    const Fingerprint fp = read_fingerprint(a.fingerprint);
    const DetectionModel model = load_model_for(a.model, opts.plan.T);
    const ImagePlane y = load_grayscale(a.image);
    const std::string id = a.image.filename().string();
    const auto r = scan_image(id, y, fp, model, o.denoiser(), opts);
    nlohmann::json j = {{"image_id", r.image_id},
                        {"sprt_outcome", to_string(r.sprt_outcome)},
                        {"n_used", r.n_used},
                        {"pixels_used", r.pixels_used},
                        {"retest", r.retest ? nlohmann::json(*r.retest ? "positive" : "negative") : nlohmann::json(nullptr)},
                        {"final", r.final_positive ? "H1" : "H0"},
                        {"llr_final", r.llr_final}};
    const std::string text = j.dump(2) + "\n";
    if (a.out.empty()) std::cout << text;
    else write_text(a.out, text);
    return kOk;
}

// --- simulate ----------------------------------------------------------------

struct SimulateArgs {
    fs::path out;
    std::size_t cameras = 2, shots = 60, width = 256, height = 256, shot_offset = 0;
    double sigma_k = 0.02, sigma_n = 2.0;
    std::string scene = "mixed";
    double level = 128.0, jitter = 0.0;
    std::string format = "png";
};

int cmd_simulate(const SimulateArgs& a, const CommonOptions& o) {
    if (a.cameras == 0) throw Error(ErrorKind::usage, "--cameras must be >= 1");
    std::optional<SceneConfig> fixed_scene;
    if (a.scene != "mixed") {
        SceneConfig s;
        s.kind = scene_kind_from_string(a.scene);
        s.level = a.level;
        s.level_jitter = a.jitter;
        s.validate();
        fixed_scene = s;
    }
    fs::create_directories(a.out);
    nlohmann::json cams = nlohmann::json::array();
    nlohmann::json images = nlohmann::json::array();
    for (std::size_t c = 0; c < a.cameras; ++c) {
        const std::string cam_id = "cam" + std::to_string(c);
        const SynthCamera cam = make_camera(a.width, a.height, a.sigma_k, a.sigma_n, derive_seed(o.seed, cam_id));
        nlohmann::json cj = camera_to_json(cam);
        cj["id"] = cam_id;
        cams.push_back(cj);
        for (std::size_t s = a.shot_offset; s < a.shot_offset + a.shots; ++s) {
            const SceneConfig scene = fixed_scene ? *fixed_scene : mixed_scene(s);
            const std::uint64_t shot_seed = derive_seed(derive_seed(o.seed, "shot"), c * 1000003ULL + s);
            const ImagePlane y = shoot(cam, scene, shot_seed);
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04zu.%s", cam_id.c_str(), s, a.format == "pgm" ? "pgm" : "png");
            if (a.format == "pgm") save_pgm(y, a.out / name);
            else save_png(y, a.out / name);
            images.push_back({{"file", name}, {"camera", cam_id}, {"scene", scene_to_json(scene)}});
        }
    }
    nlohmann::json truth = {{"seed", o.seed}, {"cameras", cams}, {"images", images}};
    write_text(a.out / "truth.json", truth.dump(2) + "\n");
    std::cerr << images.size() << " images -> " << a.out.string() << "\n";
    return kOk;
}

// --- report ------------------------------------------------------------------

struct ReportArgs {
    fs::path json, csv;
};

std::string fmt(const std::optional<double>& v) { return v ? std::to_string(*v) : "n/a"; }

int cmd_report(const ReportArgs& a) {
    const ScanReport report = decode_report_json(read_text(a.json));
    for (const auto& r : report.records) {
        if (!routing_consistent(r)) throw Error(ErrorKind::data, "record " + r.image_id + " violates retest routing");
    }
    if (!a.csv.empty()) {
        if (decode_report_csv(read_text(a.csv)) != report.records) {
            throw Error(ErrorKind::data, "CSV and JSON reports disagree");
        }
    }
    const auto& g = report.aggregates;
    std::cout << "scanned        " << g.scanned << "\n"
              << "skipped        " << g.skipped << "\n"
              << "P_D            " << fmt(g.pd) << "\n"
              << "P_F            " << fmt(g.pf) << "\n"
              << "n_bar_H1       " << fmt(g.n_bar_h1) << "\n"
              << "n_bar_H0       " << fmt(g.n_bar_h0) << "\n"
              << "n_bar          " << g.n_bar << "\n"
              << "cost_ratio     " << g.cost_ratio << "\n"
              << "audit          ok\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PRNU camera fingerprinting with sequential detection"};
    app.require_subcommand(1);
    CommonOptions common;

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "Estimate a camera fingerprint from training images");
    extract->add_option("--images", ex.images, "Training image directory")->required();
    extract->add_option("--out", ex.out, "Fingerprint file")->required();
    extract->add_option("--L", ex.L, "Number of training images")->capture_default_str();
    extract->add_flag("--no-postprocess", ex.no_postprocess, "Skip zero-meaning and Fourier Wiener filtering");
    add_common(extract, common);

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Fit the H1 (and optionally H0) detection model");
    train->add_option("--images", tr.images, "Training image directory")->required();
    train->add_option("--out", tr.out, "Model JSON file")->required();
    train->add_option("--fingerprint", tr.fingerprint, "Fingerprint used for H0 samples");
    train->add_option("--h0-images", tr.h0_images, "Images from other cameras for the H0 fit");
    train->add_option("--L", tr.L, "Images per selection")->capture_default_str();
    train->add_option("--repeats", tr.repeats, "Random selections pooled")->capture_default_str();
    train->add_option("--bins", tr.bins, "Number of v bins")->capture_default_str();
    train->add_option("--alpha0", tr.alpha0, "Override H0 scale");
    train->add_option("--c0", tr.c0, "Override H0 shape");
    train->add_flag("--fixed", tr.fixed, "Fit a single fixed H1 Gaussian");
    train->add_flag("--no-postprocess", tr.no_postprocess, "Skip fingerprint postprocessing");
    add_common(train, common);

    DetectArgs sc;
    auto* scan = app.add_subcommand("scan", "Identify every image in a directory");
    scan->add_option("--fingerprint", sc.fingerprint, "Fingerprint file")->required();
    scan->add_option("--model", sc.model, "Model JSON file")->required();
    scan->add_option("--images", sc.images, "Query image directory")->required();
    scan->add_option("--truth", sc.truth, "Truth JSON for labeled evaluation");
    scan->add_option("--camera", sc.camera, "Camera id in the truth file that owns the fingerprint");
    scan->add_option("--csv", sc.csv, "CSV report path");
    scan->add_option("--json", sc.json, "JSON report path");
    scan->add_option("--preset", sc.preset, "Plan preset")->check(CLI::IsMember({"paper-table3", "custom"}))->capture_default_str();
    scan->add_option("--eta3", sc.eta3, "Improved-detector threshold")->capture_default_str();
    scan->add_option("--retest-pf", sc.retest_pf, "Fixed-detector false-positive target")->capture_default_str();
    add_common(scan, common);

    DetectArgs te;
    auto* test = app.add_subcommand("test", "Identify a single image");
    test->add_option("--fingerprint", te.fingerprint, "Fingerprint file")->required();
    test->add_option("--model", te.model, "Model JSON file")->required();
    test->add_option("--image", te.image, "Query image")->required();
    test->add_option("--out", te.out, "Result JSON path (stdout if absent)");
    test->add_option("--preset", te.preset, "Plan preset")->check(CLI::IsMember({"paper-table3", "custom"}))->capture_default_str();
    test->add_option("--eta3", te.eta3, "Improved-detector threshold")->capture_default_str();
    test->add_option("--retest-pf", te.retest_pf, "Fixed-detector false-positive target")->capture_default_str();
    add_common(test, common);

    SimulateArgs si;
    auto* simulate = app.add_subcommand("simulate", "Write a seeded synthetic corpus");
    simulate->add_option("--out", si.out, "Output directory")->required();
    simulate->add_option("--cameras", si.cameras, "Number of cameras")->capture_default_str();
    simulate->add_option("--shots", si.shots, "Images per camera")->capture_default_str();
    simulate->add_option("--shot-offset", si.shot_offset, "Index of the first shot (fresh shots of the same cameras)")
        ->capture_default_str();
    simulate->add_option("--width", si.width, "Image width")->capture_default_str();
    simulate->add_option("--height", si.height, "Image height")->capture_default_str();
    simulate->add_option("--sigma-k", si.sigma_k, "PRNU standard deviation")->capture_default_str();
    simulate->add_option("--sigma-n", si.sigma_n, "Sensor noise standard deviation")->capture_default_str();
    simulate->add_option("--scene", si.scene, "mixed, flatfield, gradient, textured-noise, dark, near-saturated")
        ->capture_default_str();
    simulate->add_option("--level", si.level, "Scene base level")->capture_default_str();
    simulate->add_option("--jitter", si.jitter, "Per-shot level jitter")->capture_default_str();
    simulate->add_option("--format", si.format, "Image format")->check(CLI::IsMember({"png", "pgm"}))->capture_default_str();
    add_common(simulate, common);

    ReportArgs re;
    auto* report = app.add_subcommand("report", "Audit and summarize a scan report");
    report->add_option("--json", re.json, "JSON report")->required();
    report->add_option("--csv", re.csv, "CSV report to cross-check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*extract) return cmd_extract(ex, common);
        if (*train) return cmd_train(tr, common);
        if (*scan) return cmd_scan(sc, common, *scan);
        if (*test) return cmd_test(te, common, *test);
        if (*simulate) return cmd_simulate(si, common);
        if (*report) return cmd_report(re);
    } catch (const BoundViolation& e) {
        std::cerr << "error: " << e.what() << " (max achievable P_D = " << e.max_achievable_pd() << ")\n";
        return kBound;
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error [io]: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kUsage;
}
