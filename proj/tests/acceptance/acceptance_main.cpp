// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.
//
//   msseg_acceptance [--cli <path to msseg>] [--work <scratch dir>]
//
// With --cli, the determinism criterion drives the command-line tool;
// otherwise it compares library-produced report bytes.

#include "msseg/fusion.hpp"
#include "msseg/geometry.hpp"
#include "msseg/ingest.hpp"
#include "msseg/metrics.hpp"
#include "msseg/pipeline.hpp"
#include "msseg/rng.hpp"
#include "msseg/synth.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace msseg;
namespace fs = std::filesystem;

namespace {

// Pinned limits.
constexpr int kOracleInstances = 1000;
constexpr double kOracleSeconds = 10.0;
constexpr int kMonotoneImages = 200;
constexpr std::uint64_t kMonotoneSeed = 7;
constexpr std::uint64_t kBenchmarkSeed = 42;
constexpr int kBenchmarkImages = 100;
constexpr double kBenchmarkSeconds = 120.0;
constexpr double kMaxFusedFpAvg = 0.5;
constexpr double kMinTprRatio = 0.9;
constexpr double kMinSingleScaleFpAvg = 1.0;
constexpr double kMetricTolerance = 1e-9;
constexpr int kCoverageWindows = 500;
constexpr int kEndToEndImages = 20;
constexpr double kMinMeanDice = 0.95;
constexpr double kEndToEndSeconds = 60.0;
constexpr double kAnchorRelativeError = 0.05;
constexpr int kAnchorBoxesPerCluster = 20;
constexpr int kDeterminismImages = 6;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(char const * f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::vector<ImageSize> const kScales = default_scales();
double const kLambdas[] = {0.0, 0.5, 0.6, 0.7};

struct SyntheticImage {
    std::vector<BoundingBox> truth;
    std::vector<ScaleDetectionSet> sets;
};

// Mass geometry plus simulated detections at every default scale.
std::vector<SyntheticImage> simulate_benchmark(std::uint64_t seed, int count, DetectionNoiseSpec noise) {
    PhantomSpec spec;
    spec.seed = seed;
    noise.seed = seed;
    std::vector<SyntheticImage> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto const idx = static_cast<std::uint64_t>(i);
        for (auto const & m : place_masses(spec, idx)) {
            out[idx].truth.push_back(tight_box(m, spec.native));
        }
        for (std::size_t s = 0; s < kScales.size(); ++s) {
            out[idx].sets.push_back(simulate_detections(out[idx].truth, spec.native, kScales[s], noise, idx, s));
        }
    }
    return out;
}

std::vector<ScoredBox> as_predictions(std::vector<FusedCandidate> const & cands) {
    std::vector<ScoredBox> out;
    for (auto const & c : cands) {
        out.push_back({c.box, c.peak});
    }
    return out;
}

// ---------------------------------------------------------------------------

Outcome fusion_oracle() {
    auto const t0 = Clock::now();
    Rng rng(20240601);
    int matched = 0;
    std::string first_failure;
    for (int i = 0; i < kOracleInstances; ++i) {
        ImageSize const native{static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64))};
        std::vector<ScaleDetectionSet> sets;
        auto const n_scales = rng.uniform_int(1, 4);
        for (std::int64_t s = 0; s < n_scales; ++s) {
            ImageSize const sz{static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64))};
            ScaleDetectionSet set{sz, {}};
            auto const n_boxes = rng.uniform_int(0, 3);
            for (std::int64_t b = 0; b < n_boxes; ++b) {
                int const x0 = static_cast<int>(rng.uniform_int(0, sz.width - 1));
                int const y0 = static_cast<int>(rng.uniform_int(0, sz.height - 1));
                BoundingBox const box{x0, y0, static_cast<int>(rng.uniform_int(x0 + 1, sz.width)),
                                      static_cast<int>(rng.uniform_int(y0 + 1, sz.height))};
                double const c = rng.bernoulli(0.5) ? static_cast<double>(rng.uniform_int(0, 10)) / 10.0
                                                    : rng.uniform();
                set.detections.push_back({box, c});
            }
            sets.push_back(set);
        }
        double const lambda = rng.bernoulli(0.3) ? static_cast<double>(rng.uniform_int(0, 10)) / 10.0
                                                 : std::round(rng.uniform(0.0, 1.2) * 1e6) / 1e6;

        auto const mask = build_fused_mask(sets, native);
        auto const got = candidates_at(mask, lambda);
        auto const want = oracle::brute_force_msf(sets, native, lambda);
        bool same = got.size() == want.size();
        for (std::size_t k = 0; same && k < got.size(); ++k) {
            same = got[k].box == want[k].box &&
                   oracle::Rational(got[k].peak_sum, mask.denominator()) == want[k].peak;
        }
        if (same) {
            ++matched;
        } else if (first_failure.empty()) {
            first_failure = "; first mismatch at instance " + std::to_string(i);
        }
    }
    double const secs = seconds_since(t0);
    return {matched == kOracleInstances && secs < kOracleSeconds,
            std::to_string(matched) + "/" + std::to_string(kOracleInstances) + " instances identical" +
                first_failure + " (" + fmt("%.2f", secs) + " s, limit " + fmt("%.0f", kOracleSeconds) + " s)"};
}

Outcome lambda_monotonicity() {
    auto const images = simulate_benchmark(kMonotoneSeed, kMonotoneImages, DetectionNoiseSpec{});
    PhantomSpec const spec;
    bool nested = true;
    std::vector<std::vector<DetectionSample>> samples(std::size(kLambdas));
    for (auto const & img : images) {
        auto const fused = build_fused_mask(img.sets, spec.native);
        BinaryMask previous;
        for (std::size_t li = 0; li < std::size(kLambdas); ++li) {
            auto const kept = threshold_mask(fused, kLambdas[li]);
            if (li > 0) {
                for (std::size_t p = 0; p < kept.data().size(); ++p) {
                    nested &= kept.data()[p] <= previous.data()[p];
                }
            }
            samples[li].push_back({as_predictions(components_to_candidates(label_components(kept), fused)), img.truth});
            previous = kept;
        }
    }
    bool fp_monotone = true;
    std::string table;
    double last = 1e300;
    for (std::size_t li = 0; li < std::size(kLambdas); ++li) {
        auto const op = operating_point(samples[li], 0.5);
        fp_monotone &= op.fp_avg <= last;
        last = op.fp_avg;
        table += " l=" + fmt("%.1f", kLambdas[li]) + ":FPavg " + fmt("%.3f", op.fp_avg);
    }
    return {nested && fp_monotone, std::string(nested ? "kept sets nested" : "kept sets NOT nested") +
                                       (fp_monotone ? ", FPavg non-increasing;" : ", FPavg INCREASES;") + table};
}

struct BenchmarkResult {
    FrocPoint fused;
    double best_single_tpr = 0.0;
    double min_single_fp = 0.0;
    std::string per_scale;
};

BenchmarkResult run_benchmark(DetectionNoiseSpec const & noise) {
    auto const images = simulate_benchmark(kBenchmarkSeed, kBenchmarkImages, noise);
    PhantomSpec const spec;
    std::vector<std::vector<DetectionSample>> single(kScales.size());
    std::vector<DetectionSample> fused;
    for (auto const & img : images) {
        for (std::size_t s = 0; s < kScales.size(); ++s) {
            std::vector<ScoredBox> preds;
            for (auto const & d : img.sets[s].detections) {
                preds.push_back({scale_box(d.box, kScales[s], spec.native), d.confidence});
            }
            single[s].push_back({preds, img.truth});
        }
        fused.push_back({as_predictions(msf(img.sets, spec.native, 0.6)), img.truth});
    }
    BenchmarkResult r;
    r.min_single_fp = 1e300;
    for (std::size_t s = 0; s < kScales.size(); ++s) {
        auto const op = operating_point(single[s], 0.5);
        r.best_single_tpr = std::max(r.best_single_tpr, op.tpr);
        r.min_single_fp = std::min(r.min_single_fp, op.fp_avg);
        r.per_scale += " " + to_string(kScales[s]) + "(" + fmt("%.3f", op.tpr) + "," + fmt("%.2f", op.fp_avg) + ")";
    }
    r.fused = operating_point(fused, 0.5);
    return r;
}

Outcome table2_analog() {
    auto const t0 = Clock::now();
    DetectionNoiseSpec noise;
    noise.detection_probability = 0.8;
    noise.center_jitter_sigma = 0.05;
    noise.size_jitter_sigma = 0.05;
    noise.false_positive_rate = 1.5;
    // The benchmark varies presence, geometry and false positives only; every
    // detection reports the same confidence, so lambda = 0.6 is a 3-of-5 vote.
    noise.confidence_sigma = 0.0;
    auto const r = run_benchmark(noise);
    double const secs = seconds_since(t0);
    bool const pass = r.fused.fp_avg <= kMaxFusedFpAvg && r.fused.tpr >= kMinTprRatio * r.best_single_tpr &&
                      r.min_single_fp >= kMinSingleScaleFpAvg && secs < kBenchmarkSeconds;

    // Informational: with spread-out confidences, normalising by the image's
    // maximum confidence turns the 3-of-5 vote into roughly 4-of-5.
    noise.confidence_sigma = 0.05;
    auto const spread = run_benchmark(noise);
    return {pass, "MSF@0.6 TPR " + fmt("%.3f", r.fused.tpr) + " FPavg " + fmt("%.3f", r.fused.fp_avg) +
                      " (need FPavg<=" + fmt("%.1f", kMaxFusedFpAvg) + ", TPR>=" +
                      fmt("%.3f", kMinTprRatio * r.best_single_tpr) + "); single-scale (TPR,FPavg):" + r.per_scale +
                      " (need FPavg>=" + fmt("%.1f", kMinSingleScaleFpAvg) + "); " + fmt("%.1f", secs) +
                      " s [info: confidence sigma 0.05 gives TPR " + fmt("%.3f", spread.fused.tpr) + ", ratio " +
                      fmt("%.3f", spread.fused.tpr / spread.best_single_tpr) + "]"};
}

Outcome metric_oracle() {
    std::vector<std::string> bad;
    auto near = [&](double got, double want, char const * what) {
        if (std::abs(got - want) > kMetricTolerance) {
            bad.push_back(std::string(what) + "=" + fmt("%.12g", got));
        }
    };
    DetectionSample s;
    s.truths = {{0, 0, 10, 10}, {50, 50, 60, 60}};
    s.predictions = {{{0, 0, 10, 10}, 0.9}, {{100, 100, 110, 110}, 0.8}, {{50, 50, 60, 60}, 0.7}};
    std::vector<DetectionSample> const pr_samples{s};
    auto const curve = pr_curve(pr_samples, 0.5);
    if (curve.points.size() != 3) {
        bad.push_back("PR point count");
    } else {
        near(curve.points[0].recall, 0.5, "r1");
        near(curve.points[0].precision, 1.0, "p1");
        near(curve.points[1].recall, 0.5, "r2");
        near(curve.points[1].precision, 0.5, "p2");
        near(curve.points[2].recall, 1.0, "r3");
        near(curve.points[2].precision, 2.0 / 3.0, "p3");
    }
    near(average_precision(curve), 5.0 / 6.0, "AP");

    BinaryMask left({10, 10});
    BinaryMask top({10, 10});
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) {
            left.at(x, y) = x < 5 ? 1 : 0;
            top.at(x, y) = y < 5 ? 1 : 0;
        }
    }
    if (!(confusion(left, top) == ConfusionCounts{25, 25, 25, 25})) {
        bad.push_back("quadrant counts");
    }
    near(dice(left, top), 0.5, "dice");

    std::vector<DetectionSample> froc_samples(10);
    for (int i = 0; i < 10; ++i) {
        froc_samples[i].truths = {{0, 0, 10, 10}};
        if (i < 9) {
            froc_samples[i].predictions.push_back({{0, 0, 10, 10}, 0.8});
        }
        if (i < 3) {
            froc_samples[i].predictions.push_back({{50, 50, 60, 60}, 0.8});
        }
    }
    auto const pts = froc(froc_samples, 0.5);
    if (pts.size() != 1) {
        bad.push_back("FROC point count");
    } else {
        near(pts[0].tpr, 0.9, "froc tpr");
        near(pts[0].fp_avg, 0.3, "froc fp");
    }
    std::string detail = "PR (0.5,1),(0.5,0.5),(1,2/3); AP 5/6; Dice 0.5; FROC (0.9,0.3) within 1e-9";
    for (auto const & b : bad) {
        detail += "; mismatch " + b;
    }
    return {bad.empty(), detail};
}

Outcome geometry_round_trip() {
    Rng rng(555);
    bool exact = true;
    // Identity and integer factors (x1 up, x2 up, x4 up, x2 down with block-constant masks).
    for (int factor : {1, 2, 4}) {
        int const side = 256 / factor;
        GrayImage img({320, 320});
        for (auto & v : img.data()) {
            v = rng.bernoulli(0.5) ? 255 : 0;
        }
        BoundingBox const window{13, 21, 13 + side, 21 + side};
        auto const patch = extract_patch(img, window, {256, 256});
        BinaryMask pm(patch.pixels.size());
        for (std::size_t i = 0; i < pm.data().size(); ++i) {
            pm.data()[i] = patch.pixels.data()[i] != 0 ? 1 : 0;
        }
        auto const canvas = reconstruct_mask(pm, patch.transform, img.size());
        for (int y = 0; y < 320; ++y) {
            for (int x = 0; x < 320; ++x) {
                exact &= canvas.at(x, y) == (window.contains(x, y) && img.at(x, y) != 0 ? 1 : 0);
            }
        }
    }
    {
        GrayImage img({512, 512});
        for (int y = 0; y < 512; y += 2) {
            for (int x = 0; x < 512; x += 2) {
                std::uint8_t const v = rng.bernoulli(0.5) ? 255 : 0;
                img.at(x, y) = img.at(x + 1, y) = img.at(x, y + 1) = img.at(x + 1, y + 1) = v;
            }
        }
        auto const patch = extract_patch(img, {0, 0, 512, 512}, {256, 256});
        BinaryMask pm(patch.pixels.size());
        for (std::size_t i = 0; i < pm.data().size(); ++i) {
            pm.data()[i] = patch.pixels.data()[i] != 0 ? 1 : 0;
        }
        auto const canvas = reconstruct_mask(pm, patch.transform, img.size());
        for (std::size_t i = 0; i < canvas.data().size(); ++i) {
            exact &= canvas.data()[i] == (img.data()[i] != 0 ? 1 : 0);
        }
    }

    // Random windows carrying random truth pixels through a frame change and back.
    int preserved = 0;
    for (int i = 0; i < kCoverageWindows; ++i) {
        ImageSize const native{static_cast<int>(rng.uniform_int(16, 400)), static_cast<int>(rng.uniform_int(16, 400))};
        ImageSize const scale{static_cast<int>(rng.uniform_int(8, 400)), static_cast<int>(rng.uniform_int(8, 400))};
        int const x0 = static_cast<int>(rng.uniform_int(0, native.width - 1));
        int const y0 = static_cast<int>(rng.uniform_int(0, native.height - 1));
        BoundingBox const window{x0, y0, static_cast<int>(rng.uniform_int(x0 + 1, native.width)),
                                 static_cast<int>(rng.uniform_int(y0 + 1, native.height))};
        BinaryMask truth(native);
        for (int y = window.min_y; y < window.max_y; ++y) {
            for (int x = window.min_x; x < window.max_x; ++x) {
                truth.at(x, y) = rng.bernoulli(0.3) ? 1 : 0;
            }
        }
        // Border pixels of the window are always truth, so losing any edge shows.
        truth.at(window.min_x, window.min_y) = 1;
        truth.at(window.max_x - 1, window.max_y - 1) = 1;
        auto const back = scale_box(scale_box(window, native, scale), scale, native);
        std::int64_t lost = 0;
        for (int y = 0; y < native.height; ++y) {
            for (int x = 0; x < native.width; ++x) {
                lost += truth.at(x, y) != 0 && !back.contains(x, y) ? 1 : 0;
            }
        }
        preserved += lost == 0 ? 1 : 0;
    }
    return {exact && preserved == kCoverageWindows,
            std::string(exact ? "patch round trips bit-exact" : "patch round trip MISMATCH") + "; " +
                std::to_string(preserved) + "/" + std::to_string(kCoverageWindows) +
                " windows kept every truth pixel"};
}

Outcome end_to_end(fs::path const & work) {
    auto const t0 = Clock::now();
    auto const dir = work / "zero_noise";
    fs::remove_all(dir);
    SyntheticDatasetOptions opts;
    opts.phantom.background_noise_sigma = 0.0;
    opts.phantom.seed = 2026;
    opts.noise.seed = 2026;
    opts.scales = kScales;
    opts.count = kEndToEndImages;
    write_synthetic_dataset(dir, opts);
    auto const manifest = load_manifest(dir / "manifest.json");
    PipelineConfig config; // builtin providers, lambda 0.6
    auto const run = run_pipeline(manifest, config);
    double const secs = seconds_since(t0);
    double const mean = run.report.mean_dice.value_or(0.0);
    bool const pass = run.failures.empty() && mean >= kMinMeanDice && run.report.operating.tpr == 1.0 &&
                      secs < kEndToEndSeconds;
    return {pass, std::to_string(kEndToEndImages) + " phantoms: mean Dice " + fmt("%.4f", mean) + " (pooled " +
                      fmt("%.4f", run.report.pooled_dice.value_or(0.0)) + "), TPR " +
                      fmt("%.3f", run.report.operating.tpr) + ", FPavg " + fmt("%.3f", run.report.operating.fp_avg) +
                      ", failures " + std::to_string(run.failures.size()) + " (" + fmt("%.1f", secs) + " s, limit " +
                      fmt("%.0f", kEndToEndSeconds) + " s)"};
}

Outcome anchor_recovery() {
    std::vector<AnchorBox> const centres{{12, 14},  {30, 22},  {24, 60},   {70, 45},   {60, 130},
                                         {140, 90}, {120, 260}, {280, 200}, {330, 420}};
    Rng rng(99);
    std::vector<AnchorBox> boxes;
    std::vector<AnchorBox> centroids;
    for (auto const & c : centres) {
        AnchorBox mean{0, 0};
        for (int i = 0; i < kAnchorBoxesPerCluster; ++i) {
            AnchorBox const b{c.width * (1 + rng.uniform(-0.06, 0.06)), c.height * (1 + rng.uniform(-0.06, 0.06))};
            boxes.push_back(b);
            mean.width += b.width / kAnchorBoxesPerCluster;
            mean.height += b.height / kAnchorBoxesPerCluster;
        }
        centroids.push_back(mean);
    }
    auto const fit = kmeans_anchors(boxes, kAnchorCount, 42);
    int recovered = 0;
    double worst = 0.0;
    std::vector<bool> used(fit.anchors.size(), false);
    for (auto const & c : centroids) {
        std::size_t best = 0;
        double best_iou = -1.0;
        for (std::size_t a = 0; a < fit.anchors.size(); ++a) {
            double const v = centered_iou(c, fit.anchors[a]);
            if (v > best_iou) {
                best_iou = v;
                best = a;
            }
        }
        double const err = std::max(std::abs(fit.anchors[best].width - c.width) / c.width,
                                    std::abs(fit.anchors[best].height - c.height) / c.height);
        worst = std::max(worst, err);
        if (!used[best] && err <= kAnchorRelativeError) {
            ++recovered;
        }
        used[best] = true;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
        monotone &= fit.objective_trace[i] <= fit.objective_trace[i - 1];
    }
    return {recovered == kAnchorCount && monotone,
            std::to_string(recovered) + "/9 anchors within 5% (worst " + fmt("%.2f", 100 * worst) + "%); objective " +
                (monotone ? "non-increasing" : "INCREASED") + " over " + std::to_string(fit.iterations) +
                " iterations; anchors " + format_anchors(fit.anchors)};
}

std::string slurp(fs::path const & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_command(std::string const & cmd) {
    return std::system((cmd + " > /dev/null 2>&1").c_str());
}

Outcome determinism(fs::path const & work, std::string const & cli) {
    auto const dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    if (!cli.empty()) {
        auto const q = [](fs::path const & p) { return "'" + p.string() + "'"; };
        std::string const data = q(dir / "data");
        int rc = run_command("'" + cli + "' synth --out-dir " + data + " --seed 8 --count " +
                             std::to_string(kDeterminismImages));
        std::string const base = "'" + cli + "' pipeline --manifest " + q(dir / "data" / "manifest.json");
        rc |= run_command(base + " --report " + q(dir / "a.json"));
        rc |= run_command(base + " --report " + q(dir / "b.json"));
        rc |= run_command(base + " --jobs 8 --report " + q(dir / "c.json"));
        auto const a = slurp(dir / "a.json");
        bool const same = rc == 0 && !a.empty() && a == slurp(dir / "b.json") && a == slurp(dir / "c.json");
        return {same, std::string("msseg pipeline: ") + (rc == 0 ? "runs ok" : "a run FAILED") +
                          ", repeat " + (a == slurp(dir / "b.json") ? "identical" : "DIFFERS") + ", jobs 1 vs 8 " +
                          (a == slurp(dir / "c.json") ? "identical" : "DIFFERS") + " (" +
                          std::to_string(a.size()) + " bytes)"};
    }
    SyntheticDatasetOptions opts;
    opts.phantom.seed = 8;
    opts.noise.seed = 8;
    opts.scales = kScales;
    opts.count = kDeterminismImages;
    write_synthetic_dataset(dir / "data", opts);
    auto const manifest = load_manifest(dir / "data" / "manifest.json");
    PipelineConfig config;
    auto const a = report_json(run_pipeline(manifest, config).report);
    auto const b = report_json(run_pipeline(manifest, config).report);
    config.jobs = 8;
    auto const c = report_json(run_pipeline(manifest, config).report);
    return {a == b && a == c, std::string("library reports: repeat ") + (a == b ? "identical" : "DIFFERS") +
                                  ", jobs 1 vs 8 " + (a == c ? "identical" : "DIFFERS")};
}

} // namespace

int main(int argc, char ** argv) {
    std::string cli;
    fs::path work = fs::temp_directory_path() / "msseg_acceptance";
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string const flag = argv[i];
        if (flag == "--cli") {
            cli = argv[i + 1];
        } else if (flag == "--work") {
            work = argv[i + 1];
        }
    }
    fs::create_directories(work);

    struct Criterion {
        char const * name;
        std::function<Outcome()> run;
    };
    std::vector<Criterion> const criteria{
        {"fusion oracle equivalence", fusion_oracle},
        {"lambda monotonicity", lambda_monotonicity},
        {"synthetic multi-scale benchmark", table2_analog},
        {"metric unit oracle", metric_oracle},
        {"geometry round trip", geometry_round_trip},
        {"end-to-end zero-noise run", [&] { return end_to_end(work); }},
        {"anchor recovery", anchor_recovery},
        {"determinism", [&] { return determinism(work, cli); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (std::exception const & e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
