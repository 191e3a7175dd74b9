// msseg: multi-scale detection fusion and evaluation pipeline.
//
// Exit codes: 0 success, 1 validation or I/O failure, 2 some images failed.

#include "msseg/detections_io.hpp"
#include "msseg/fusion.hpp"
#include "msseg/ingest.hpp"
#include "msseg/metrics.hpp"
#include "msseg/pgm.hpp"
#include "msseg/pipeline.hpp"
#include "msseg/synth.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace msseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitPartial = 2;

std::vector<ImageSize> parse_scales(std::string const & text) {
    std::vector<ImageSize> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(parse_image_size(item));
        }
    }
    if (out.empty()) {
        throw ValidationError("--scales needs at least one WxH entry");
    }
    return out;
}

std::vector<double> parse_lambdas(std::string const & text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) {
            continue;
        }
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (std::exception const &) {
            throw ValidationError("invalid lambda '" + item + "'");
        }
    }
    return out;
}

void write_text(fs::path const & path, std::string const & text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

struct CommonOptions {
    std::string manifest;
    std::string config;
    std::string scales;
    std::string detections;
    std::string masks;
    std::string out_dir;
    std::string report;
    std::optional<double> lambda;
    std::optional<int> jobs;
};

PipelineConfig resolve_config(CommonOptions const & o) {
    PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (!o.scales.empty()) {
        c.scales = parse_scales(o.scales);
    }
    if (o.lambda) {
        c.lambda = *o.lambda;
    }
    if (o.jobs) {
        c.jobs = *o.jobs;
    }
    if (!o.detections.empty()) {
        c.detector.kind = ProviderKind::external_files;
        c.detector.path = o.detections;
    }
    if (!o.masks.empty()) {
        c.segmenter.kind = ProviderKind::external_files;
        c.segmenter.path = o.masks;
    }
    c.validate();
    return c;
}

int cmd_synth(std::string const & out_dir, std::string const & config_path, std::string const & scales,
              std::uint64_t seed, int count, std::string const & native, SyntheticDatasetOptions options) {
    PipelineConfig const c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    options.scales = scales.empty() ? c.scales : parse_scales(scales);
    options.count = count;
    options.phantom.seed = seed;
    options.noise.seed = seed;
    if (!native.empty()) {
        options.phantom.native = parse_image_size(native);
    }
    write_synthetic_dataset(out_dir, options);
    std::cerr << "wrote " << count << " phantoms to " << out_dir << "\n";
    return kExitOk;
}

int cmd_fuse(std::string const & detections, std::string const & manifest_path, std::string const & native_text,
             std::string const & scales_text, double lambda, std::string const & out_path) {
    auto const index = index_detections(read_detections_jsonl(detections));
    std::map<std::string, ImageSize> natives;
    if (!manifest_path.empty()) {
        for (auto const & e : load_manifest(manifest_path).entries) {
            natives[e.image_id] = e.native;
        }
    }
    std::optional<ImageSize> fixed_native;
    if (!native_text.empty()) {
        fixed_native = parse_image_size(native_text);
    }
    if (natives.empty() && !fixed_native) {
        throw ValidationError("fuse needs --manifest or --native to know the native frame");
    }
    std::optional<std::vector<ImageSize>> scales;
    if (!scales_text.empty()) {
        scales = parse_scales(scales_text);
    }

    std::ostringstream out;
    for (auto const & [image_id, sets] : index) {
        ImageSize native;
        if (auto const it = natives.find(image_id); it != natives.end()) {
            native = it->second;
        } else if (fixed_native) {
            native = *fixed_native;
        } else {
            throw ValidationError("image '" + image_id + "' is not in the manifest");
        }
        std::vector<ScaleDetectionSet> chosen = sets;
        if (scales) {
            chosen.clear();
            for (auto const & s : *scales) {
                auto const it = std::find_if(sets.begin(), sets.end(),
                                             [&](ScaleDetectionSet const & d) { return d.scale == s; });
                if (it == sets.end()) {
                    throw ValidationError("image '" + image_id + "' has no detections at " + to_string(s));
                }
                chosen.push_back(*it);
            }
        }
        out << fused_record_line(image_id, native, msf(chosen, native, lambda)) << '\n';
    }
    if (out_path.empty()) {
        std::cout << out.str();
    } else {
        write_text(out_path, out.str());
    }
    return kExitOk;
}

int cmd_pipeline(CommonOptions const & o) {
    auto const manifest = load_manifest(o.manifest);
    auto const config = resolve_config(o);
    ProcessOptions options;
    if (!o.out_dir.empty()) {
        fs::create_directories(fs::path(o.out_dir) / "patches");
        options.patch_dir = fs::path(o.out_dir) / "patches";
    }
    auto const run = run_pipeline(manifest, config, options);
    auto const report = report_json(run.report);

    if (!o.out_dir.empty()) {
        fs::path const dir(o.out_dir);
        fs::create_directories(dir / "masks");
        std::ostringstream fused;
        for (auto const & r : run.results) {
            write_mask_pgm(dir / "masks" / (r.image_id + ".pgm"), r.full_mask);
            fused << fused_record_line(r.image_id, r.native, r.candidates) << '\n';
        }
        write_text(dir / "fused.jsonl", fused.str());
        write_text(dir / "report.json", report);
    }
    if (!o.report.empty()) {
        write_text(o.report, report);
    } else if (o.out_dir.empty()) {
        std::cout << report;
    }
    for (auto const & f : run.failures) {
        std::cerr << "image " << f.image_id << " failed: " << f.message << "\n";
    }
    std::cerr << "processed " << run.results.size() << " images, " << run.failures.size()
              << " failed\n";
    return run.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_eval(CommonOptions const & o, std::string const & csv_dir) {
    auto const manifest = load_manifest(o.manifest);
    PipelineConfig const config = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    DetectionIndex index;
    if (!o.detections.empty()) {
        index = index_detections(read_detections_jsonl(o.detections));
    }
    std::vector<std::string> ids;
    std::vector<DetectionSample> samples;
    std::vector<ConfusionCounts> counts;
    for (auto const & e : manifest.entries) {
        auto const truth = rasterize_truth(e, manifest.base_dir);
        DetectionSample sample;
        sample.truths = truth.boxes;
        if (auto const it = index.find(e.image_id); it != index.end()) {
            for (auto const & set : it->second) {
                for (auto const & d : set.detections) {
                    sample.predictions.push_back({scale_box(d.box, set.scale, e.native), d.confidence});
                }
            }
        }
        ids.push_back(e.image_id);
        samples.push_back(std::move(sample));
        if (!o.masks.empty()) {
            auto const mask = read_mask_pgm(fs::path(o.masks) / (e.image_id + ".pgm"));
            counts.push_back(confusion(mask, truth.mask));
        }
    }
    auto const report = evaluate(ids, samples, counts, config.iou_threshold);
    auto const text = report_json(report);
    if (o.report.empty()) {
        std::cout << text;
    } else {
        write_text(o.report, text);
    }
    if (!csv_dir.empty()) {
        write_text(fs::path(csv_dir) / "pr.csv", pr_csv(report.pr));
        write_text(fs::path(csv_dir) / "froc.csv", froc_csv(report.froc_points));
    }
    return kExitOk;
}

int cmd_sweep(CommonOptions const & o, std::string const & lambdas) {
    auto const manifest = load_manifest(o.manifest);
    auto const config = resolve_config(o);
    auto const rows = sweep_lambda(manifest, config, parse_lambdas(lambdas));
    std::cout << "lambda  TPR@FPavg\n";
    for (auto const & r : rows) {
        std::cout << r.lambda << "  " << r.point.tpr << "@" << r.point.fp_avg << "\n";
    }
    if (!o.report.empty()) {
        write_text(o.report, sweep_json(rows));
    }
    return kExitOk;
}

int cmd_anchors(std::string const & manifest_path, std::uint64_t seed, int k) {
    auto const manifest = load_manifest(manifest_path);
    std::vector<AnchorBox> boxes;
    for (auto const & e : manifest.entries) {
        for (auto const & b : rasterize_truth(e, manifest.base_dir).boxes) {
            boxes.push_back({static_cast<double>(b.width()), static_cast<double>(b.height())});
        }
    }
    auto const fit = kmeans_anchors(boxes, k, seed);
    std::cout << format_anchors(fit.anchors) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Multi-scale detection fusion, patch segmentation and evaluation"};
    app.require_subcommand(1);

    CommonOptions common;
    std::uint64_t seed = 0;

    auto * synth = app.add_subcommand("synth", "Generate a seeded synthetic benchmark");
    std::string native;
    int count = 10;
    SyntheticDatasetOptions synth_opts;
    synth->add_option("--out-dir", common.out_dir, "Output directory")->required();
    synth->add_option("--seed", seed, "Random seed");
    synth->add_option("--count", count, "Number of phantoms");
    synth->add_option("--config", common.config, "Pipeline config (for scales)");
    synth->add_option("--scales", common.scales, "Comma-separated WxH list");
    synth->add_option("--native", native, "Native size WxH (default 1024x2048)");
    synth->add_option("--min-masses", synth_opts.phantom.mass_count_min);
    synth->add_option("--max-masses", synth_opts.phantom.mass_count_max);
    synth->add_option("--min-radius", synth_opts.phantom.mass_radius_min);
    synth->add_option("--max-radius", synth_opts.phantom.mass_radius_max);
    synth->add_option("--irregularity", synth_opts.phantom.boundary_irregularity);
    synth->add_option("--noise-sigma", synth_opts.phantom.background_noise_sigma);
    synth->add_option("--detection-prob", synth_opts.noise.detection_probability);
    synth->add_option("--jitter", [&](CLI::results_t const & r) {
        double const v = std::stod(r.at(0));
        synth_opts.noise.center_jitter_sigma = v;
        synth_opts.noise.size_jitter_sigma = v;
        return true;
    }, "Centre and size jitter sigma (fraction of box size)");
    synth->add_option("--fp-rate", synth_opts.noise.false_positive_rate, "False positives per image per scale");
    synth->add_option("--confidence-mean", synth_opts.noise.confidence_mean);
    synth->add_option("--confidence-sigma", synth_opts.noise.confidence_sigma);

    auto * fuse = app.add_subcommand("fuse", "Fuse multi-scale detections (JSONL) into candidates");
    std::string fuse_out;
    double fuse_lambda = 0.6;
    fuse->add_option("--detections", common.detections, "Input detections JSONL")->required();
    fuse->add_option("--manifest", common.manifest, "Manifest providing native sizes");
    fuse->add_option("--native", native, "Native size WxH for every image");
    fuse->add_option("--scales", common.scales, "Scales that must be present, WxH list");
    fuse->add_option("--lambda", fuse_lambda, "Voting threshold");
    fuse->add_option("--out", fuse_out, "Output JSONL (default stdout)");

    auto add_pipeline_options = [&](CLI::App * sub) {
        sub->add_option("--manifest", common.manifest, "Dataset manifest JSON")->required();
        sub->add_option("--config", common.config, "Pipeline config JSON");
        sub->add_option("--scales", common.scales, "Comma-separated WxH list");
        sub->add_option("--detections", common.detections, "External detections JSONL");
        sub->add_option("--jobs", common.jobs, "Worker threads");
        sub->add_option("--report", common.report, "Report output path");
    };

    auto * pipeline = app.add_subcommand("pipeline", "Run detection, fusion, segmentation and evaluation");
    add_pipeline_options(pipeline);
    pipeline->add_option("--lambda", common.lambda, "Voting threshold");
    pipeline->add_option("--masks", common.masks, "Directory of external patch masks");
    pipeline->add_option("--out-dir", common.out_dir, "Write masks, patches, fused.jsonl and report here");

    auto * eval = app.add_subcommand("eval", "Evaluate detections and/or masks against a manifest");
    std::string csv_dir;
    eval->add_option("--manifest", common.manifest, "Dataset manifest JSON")->required();
    eval->add_option("--config", common.config, "Config (IoU threshold)");
    eval->add_option("--detections", common.detections, "Detections JSONL (any scale)");
    eval->add_option("--masks", common.masks, "Directory of full-size predicted masks <image_id>.pgm");
    eval->add_option("--report", common.report, "Report output path");
    eval->add_option("--csv-dir", csv_dir, "Also write pr.csv and froc.csv here");

    auto * sweep = app.add_subcommand("sweep", "TPR@FPavg for a list of voting thresholds");
    std::string lambdas = "0,0.5,0.6,0.7";
    add_pipeline_options(sweep);
    sweep->add_option("--lambda", lambdas, "Comma-separated thresholds");

    auto * anchors = app.add_subcommand("anchors", "Recompute detector anchors by k-means");
    int k = kAnchorCount;
    anchors->add_option("--manifest", common.manifest, "Dataset manifest JSON")->required();
    anchors->add_option("--seed", seed, "Random seed");
    anchors->add_option("-k", k, "Number of anchors");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const & e) {
        int const code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*synth) {
            return cmd_synth(common.out_dir, common.config, common.scales, seed, count, native, synth_opts);
        }
        if (*fuse) {
            return cmd_fuse(common.detections, common.manifest, native, common.scales, fuse_lambda, fuse_out);
        }
        if (*pipeline) {
            return cmd_pipeline(common);
        }
        if (*eval) {
            return cmd_eval(common, csv_dir);
        }
        if (*sweep) {
            return cmd_sweep(common, lambdas);
        }
        if (*anchors) {
            return cmd_anchors(common.manifest, seed, k);
        }
    } catch (std::exception const & e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
