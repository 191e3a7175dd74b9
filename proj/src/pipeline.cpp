#include "msseg/pipeline.hpp"

#include "msseg/pgm.hpp"
#include "parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace msseg {

using nlohmann::json;
using nlohmann::ordered_json;

ProviderKind parse_provider_kind(std::string const & text) {
    if (text == "builtin_blob_detector") {
        return ProviderKind::builtin_blob_detector;
    }
    if (text == "builtin_threshold_segmenter") {
        return ProviderKind::builtin_threshold_segmenter;
    }
    if (text == "external_files") {
        return ProviderKind::external_files;
    }
    throw ValidationError("unknown provider kind '" + text + "'");
}

std::string to_string(ProviderKind kind) {
    switch (kind) {
    case ProviderKind::builtin_blob_detector:
        return "builtin_blob_detector";
    case ProviderKind::builtin_threshold_segmenter:
        return "builtin_threshold_segmenter";
    case ProviderKind::external_files:
        return "external_files";
    }
    return "unknown";
}

std::vector<ImageSize> default_scales() {
    return {{160, 320}, {256, 512}, {320, 640}, {416, 832}, {480, 960}};
}

void PipelineConfig::validate() const {
    if (scales.empty()) {
        throw ValidationError("config needs at least one scale");
    }
    for (auto const & s : scales) {
        if (!s.valid()) {
            throw ValidationError("config scale " + to_string(s) + " is empty");
        }
    }
    // Fused values are not clamped, so thresholds above 1 stay meaningful.
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ValidationError("lambda must be a finite non-negative number");
    }
    if (!patch_size.valid()) {
        throw ValidationError("patch size must be positive");
    }
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
        throw ValidationError("IoU threshold must be in (0,1]");
    }
    if (detector.kind == ProviderKind::builtin_threshold_segmenter) {
        throw ValidationError("detector cannot be a segmenter provider");
    }
    if (segmenter.kind == ProviderKind::builtin_blob_detector) {
        throw ValidationError("segmenter cannot be a detector provider");
    }
    for (auto const * b : {&detector, &segmenter}) {
        if (b->kind == ProviderKind::external_files && b->path.empty()) {
            throw ValidationError("external_files provider needs a path");
        }
    }
    if (jobs < 1) {
        throw ValidationError("jobs must be >= 1");
    }
}

namespace {

ImageSize size_from_json(json const & j) {
    if (j.is_string()) {
        return parse_image_size(j.get<std::string>());
    }
    return {j.at(0).get<int>(), j.at(1).get<int>()};
}

ProviderBinding binding_from_json(json const & j, ProviderBinding binding) {
    if (j.contains("kind")) {
        binding.kind = parse_provider_kind(j.at("kind").get<std::string>());
    }
    binding.path = j.value("path", binding.path.string());
    binding.min_area = j.value("min_area", binding.min_area);
    binding.min_separation = j.value("min_separation", binding.min_separation);
    return binding;
}

ordered_json binding_json(ProviderBinding const & b) {
    return {{"kind", to_string(b.kind)},
            {"path", b.path.string()},
            {"min_area", b.min_area},
            {"min_separation", b.min_separation}};
}

} // namespace

PipelineConfig parse_config(std::string const & json_text) {
    PipelineConfig c;
    try {
        auto const j = json::parse(json_text);
        if (j.contains("scales")) {
            c.scales.clear();
            for (auto const & s : j.at("scales")) {
                c.scales.push_back(size_from_json(s));
            }
        }
        c.lambda = j.value("lambda", c.lambda);
        if (j.contains("patch_size")) {
            c.patch_size = size_from_json(j.at("patch_size"));
        }
        c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
        if (j.contains("detector")) {
            c.detector = binding_from_json(j.at("detector"), c.detector);
        }
        if (j.contains("segmenter")) {
            c.segmenter = binding_from_json(j.at("segmenter"), c.segmenter);
        }
        c.equalize_patches = j.value("equalize_patches", c.equalize_patches);
        c.jobs = j.value("jobs", c.jobs);
    } catch (json::exception const & e) {
        throw ValidationError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

PipelineConfig load_config(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string config_json(PipelineConfig const & c) {
    ordered_json scales = ordered_json::array();
    for (auto const & s : c.scales) {
        scales.push_back(to_string(s));
    }
    ordered_json j;
    j["scales"] = std::move(scales);
    j["lambda"] = c.lambda;
    j["patch_size"] = to_string(c.patch_size);
    j["iou_threshold"] = c.iou_threshold;
    j["detector"] = binding_json(c.detector);
    j["segmenter"] = binding_json(c.segmenter);
    j["equalize_patches"] = c.equalize_patches;
    j["jobs"] = c.jobs;
    return j.dump(2) + "\n";
}

std::optional<int> otsu_threshold(GrayImage const & image, double min_separation) {
    std::array<std::int64_t, 256> hist{};
    for (auto v : image.data()) {
        ++hist[v];
    }
    auto const total = static_cast<double>(image.data().size());
    double sum_all = 0.0;
    for (int v = 0; v < 256; ++v) {
        sum_all += static_cast<double>(v) * static_cast<double>(hist[v]);
    }
    double weight0 = 0.0;
    double sum0 = 0.0;
    double best_var = -1.0;
    int best = -1;
    double best_gap = 0.0;
    for (int t = 0; t < 255; ++t) {
        weight0 += static_cast<double>(hist[t]);
        sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
        double const weight1 = total - weight0;
        if (weight0 == 0.0 || weight1 == 0.0) {
            continue;
        }
        double const mean0 = sum0 / weight0;
        double const mean1 = (sum_all - sum0) / weight1;
        double const between = weight0 * weight1 * (mean1 - mean0) * (mean1 - mean0);
        if (between > best_var) {
            best_var = between;
            best = t;
            best_gap = mean1 - mean0;
        }
    }
    if (best < 0 || best_gap < min_separation) {
        return std::nullopt;
    }
    return best;
}

GrayImage resample_area(GrayImage const & image, ImageSize size) {
    if (image.size() == size) {
        return image;
    }
    auto const sw = static_cast<std::int64_t>(image.width());
    auto const sh = static_cast<std::int64_t>(image.height());
    GrayImage out(size);
    for (int y = 0; y < size.height; ++y) {
        auto const y0 = y * sh / size.height;
        auto const y1 = std::max(y0 + 1, (y + 1) * sh / size.height);
        for (int x = 0; x < size.width; ++x) {
            auto const x0 = x * sw / size.width;
            auto const x1 = std::max(x0 + 1, (x + 1) * sw / size.width);
            std::int64_t sum = 0;
            for (auto yy = y0; yy < y1; ++yy) {
                for (auto xx = x0; xx < x1; ++xx) {
                    sum += image.at(static_cast<int>(xx), static_cast<int>(yy));
                }
            }
            auto const n = (x1 - x0) * (y1 - y0);
            out.at(x, y) = static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
        }
    }
    return out;
}

ScaleDetectionSet detect_blobs(GrayImage const & image, ImageSize scale, ProviderBinding const & params) {
    ScaleDetectionSet out{scale, {}};
    auto const small = resample_area(image, scale);
    auto const threshold = otsu_threshold(small, params.min_separation);
    if (!threshold) {
        return out;
    }
    BinaryMask core(scale);
    double bg_sum = 0.0;
    double bg_sq = 0.0;
    std::int64_t bg_count = 0;
    for (std::size_t i = 0; i < small.data().size(); ++i) {
        double const v = small.data()[i];
        if (small.data()[i] > *threshold) {
            core.data()[i] = 1;
        } else {
            bg_sum += v;
            bg_sq += v * v;
            ++bg_count;
        }
    }
    double const bg_mean = bg_count > 0 ? bg_sum / static_cast<double>(bg_count) : 0.0;
    double const bg_var =
        bg_count > 0 ? std::max(0.0, bg_sq / static_cast<double>(bg_count) - bg_mean * bg_mean) : 0.0;

    // Otsu splits partial-volume edge pixels down the middle. Grow each blob
    // into connected pixels that stand clear of the background (3 sigma) so
    // the box covers the whole blob.
    double const low = bg_mean + 3.0 * std::sqrt(bg_var);
    BinaryMask grown = core;
    std::vector<std::pair<int, int>> frontier;
    for (int y = 0; y < scale.height; ++y) {
        for (int x = 0; x < scale.width; ++x) {
            if (core.at(x, y) != 0) {
                frontier.emplace_back(x, y);
            }
        }
    }
    while (!frontier.empty()) {
        auto const [cx, cy] = frontier.back();
        frontier.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                int const nx = cx + dx;
                int const ny = cy + dy;
                if (nx < 0 || ny < 0 || nx >= scale.width || ny >= scale.height || grown.at(nx, ny) != 0) {
                    continue;
                }
                if (small.at(nx, ny) > low) {
                    grown.at(nx, ny) = 1;
                    frontier.emplace_back(nx, ny);
                }
            }
        }
    }

    auto const labels = label_components(grown);
    struct Blob {
        BoundingBox box{};
        bool seen = false;
        std::int64_t core_area = 0;
        double core_sum = 0.0;
    };
    std::vector<Blob> blobs(static_cast<std::size_t>(labels.count));
    for (int y = 0; y < scale.height; ++y) {
        for (int x = 0; x < scale.width; ++x) {
            int const l = labels.labels.at(x, y);
            if (l == 0) {
                continue;
            }
            auto & b = blobs[static_cast<std::size_t>(l - 1)];
            if (!b.seen) {
                b.box = {x, y, x + 1, y + 1};
                b.seen = true;
            } else {
                b.box.min_x = std::min(b.box.min_x, x);
                b.box.max_x = std::max(b.box.max_x, x + 1);
                b.box.max_y = y + 1;
            }
            if (core.at(x, y) != 0) {
                ++b.core_area;
                b.core_sum += small.at(x, y);
            }
        }
    }
    for (auto const & b : blobs) {
        if (b.core_area < params.min_area) {
            continue;
        }
        double const mean_in = b.core_sum / static_cast<double>(b.core_area);
        double const headroom = 255.0 - bg_mean;
        double const contrast = headroom > 0.0 ? (mean_in - bg_mean) / headroom : 0.0;
        out.detections.push_back({b.box, std::clamp(contrast, 0.0, 1.0)});
    }
    return out;
}

BinaryMask segment_otsu(GrayImage const & patch, ProviderBinding const & params) {
    BinaryMask out(patch.size());
    auto const threshold = otsu_threshold(patch, params.min_separation);
    if (!threshold) {
        return out;
    }
    BinaryMask fg(patch.size());
    for (std::size_t i = 0; i < patch.data().size(); ++i) {
        fg.data()[i] = patch.data()[i] > *threshold ? 1 : 0;
    }
    auto const labels = label_components(fg);
    if (labels.count == 0) {
        return out;
    }
    std::vector<std::int64_t> area(static_cast<std::size_t>(labels.count) + 1, 0);
    for (int l : labels.labels.data()) {
        ++area[static_cast<std::size_t>(l)];
    }
    // Largest component; lowest label wins ties.
    int keep = 1;
    for (int l = 2; l <= labels.count; ++l) {
        if (area[l] > area[keep]) {
            keep = l;
        }
    }
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = labels.labels.data()[i] == keep ? 1 : 0;
    }
    return out;
}

Providers::Providers(PipelineConfig const & config) : config_(config) {
    config_.validate();
    if (config_.detector.kind == ProviderKind::external_files) {
        external_detections_ = index_detections(read_detections_jsonl(config_.detector.path));
    }
    if (config_.segmenter.kind == ProviderKind::external_files &&
        !std::filesystem::is_directory(config_.segmenter.path)) {
        throw ValidationError("external mask directory " + config_.segmenter.path.string() +
                              " does not exist");
    }
}

bool Providers::needs_image() const {
    return config_.detector.kind == ProviderKind::builtin_blob_detector ||
           config_.segmenter.kind == ProviderKind::builtin_threshold_segmenter;
}

std::vector<ScaleDetectionSet> Providers::detect(std::string const & image_id, GrayImage const * image,
                                                 std::vector<ImageSize> const & scales) const {
    std::vector<ScaleDetectionSet> sets;
    if (config_.detector.kind == ProviderKind::builtin_blob_detector) {
        if (image == nullptr) {
            throw ValidationError("builtin detector needs image pixels for '" + image_id + "'");
        }
        for (auto const & s : scales) {
            sets.push_back(detect_blobs(*image, s, config_.detector));
        }
        return sets;
    }
    auto const it = external_detections_.find(image_id);
    for (auto const & s : scales) {
        ScaleDetectionSet const * found = nullptr;
        if (it != external_detections_.end()) {
            for (auto const & set : it->second) {
                if (set.scale == s) {
                    found = &set;
                }
            }
        }
        if (found == nullptr) {
            throw ValidationError("no external detections for image '" + image_id + "' at scale " +
                                  to_string(s));
        }
        sets.push_back(*found);
    }
    return sets;
}

std::string external_mask_name(std::string const & image_id, std::size_t index) {
    return image_id + "_cand" + std::to_string(index) + ".pgm";
}

std::vector<BinaryMask> Providers::segment(std::string const & image_id,
                                           std::vector<GrayImage> const & patches,
                                           std::size_t count) const {
    std::vector<BinaryMask> masks;
    if (config_.segmenter.kind == ProviderKind::builtin_threshold_segmenter) {
        if (patches.size() != count) {
            throw ValidationError("builtin segmenter needs patch pixels for '" + image_id + "'");
        }
        for (auto const & p : patches) {
            if (p.size() != config_.patch_size) {
                throw ValidationError("patch size " + to_string(p.size()) + " differs from config");
            }
            masks.push_back(segment_otsu(p, config_.segmenter));
        }
        return masks;
    }
    for (std::size_t i = 0; i < count; ++i) {
        auto const path = config_.segmenter.path / external_mask_name(image_id, i);
        if (!std::filesystem::exists(path)) {
            throw ValidationError("missing external mask " + path.string());
        }
        auto mask = read_mask_pgm(path);
        if (mask.size() != config_.patch_size) {
            throw ValidationError("external mask " + path.string() + " is " + to_string(mask.size()) +
                                  ", expected " + to_string(config_.patch_size));
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

std::vector<ScaleDetectionSet> detect_stage(std::string const & image_id, GrayImage const * image,
                                            std::vector<ImageSize> const & scales,
                                            Providers const & providers) {
    return providers.detect(image_id, image, scales);
}

std::vector<BinaryMask> segment_stage(std::string const & image_id,
                                      std::vector<GrayImage> const & patches, std::size_t count,
                                      Providers const & providers) {
    return providers.segment(image_id, patches, count);
}

std::vector<ImageInput> pipeline_inputs(DatasetManifest const & manifest) {
    std::vector<ImageInput> inputs;
    inputs.reserve(manifest.entries.size());
    for (auto const & e : manifest.entries) {
        inputs.push_back({e.image_id, e.native,
                          e.image_path.empty() ? std::filesystem::path{} : manifest.resolve(e.image_path)});
    }
    return inputs;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::optional<GrayImage> load_input_image(ImageInput const & input, bool required) {
    if (!required) {
        return std::nullopt;
    }
    if (input.image_path.empty()) {
        throw ValidationError("image '" + input.image_id + "' has no image path");
    }
    auto image = read_pgm(input.image_path);
    if (image.size() != input.native) {
        throw ValidationError("image '" + input.image_id + "' is " + to_string(image.size()) +
                              " but the manifest says " + to_string(input.native));
    }
    return image;
}

} // namespace

ImageResult process_image(ImageInput const & input, PipelineConfig const & config,
                          Providers const & providers, ProcessOptions const & options) {
    ImageResult result;
    result.image_id = input.image_id;
    result.native = input.native;

    auto const image = load_input_image(input, providers.needs_image() || options.patch_dir.has_value());
    GrayImage const * pixels = image ? &*image : nullptr;

    auto t0 = Clock::now();
    auto const sets = detect_stage(input.image_id, pixels, config.scales, providers);
    result.timings.detect_ms = elapsed_ms(t0);

    t0 = Clock::now();
    result.candidates = candidates_at(build_fused_mask(sets, input.native), config.lambda);
    result.timings.fuse_ms = elapsed_ms(t0);

    t0 = Clock::now();
    std::vector<GrayImage> patches;
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        auto const window = *clip_box(result.candidates[i].box, input.native);
        if (pixels == nullptr) {
            result.transforms.push_back({window, config.patch_size, Resampling::nearest});
            continue;
        }
        auto patch = extract_patch(*pixels, window, config.patch_size);
        if (config.equalize_patches) {
            patch.pixels = hist_equalize(patch.pixels);
        }
        if (options.patch_dir) {
            write_pgm(*options.patch_dir / external_mask_name(input.image_id, i), patch.pixels);
        }
        result.transforms.push_back(patch.transform);
        patches.push_back(std::move(patch.pixels));
    }
    auto const masks = segment_stage(input.image_id, patches, result.candidates.size(), providers);

    // Fragments from overlapping windows are OR-ed together.
    result.full_mask = BinaryMask(input.native);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        reconstruct_into(result.full_mask, masks[i], result.transforms[i]);
    }
    result.timings.segment_ms = elapsed_ms(t0);
    return result;
}

EvalReport evaluate_results(DatasetManifest const & manifest, std::vector<ImageResult> const & results,
                            double iou_threshold) {
    std::vector<std::string> ids;
    std::vector<DetectionSample> samples;
    std::vector<ConfusionCounts> counts;
    for (auto const & r : results) {
        auto const it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                     [&](ManifestEntry const & e) { return e.image_id == r.image_id; });
        if (it == manifest.entries.end()) {
            throw ValidationError("result for unknown image '" + r.image_id + "'");
        }
        auto const truth = rasterize_truth(*it, manifest.base_dir);
        DetectionSample sample;
        for (auto const & c : r.candidates) {
            sample.predictions.push_back({c.box, c.peak});
        }
        sample.truths = truth.boxes;
        ids.push_back(r.image_id);
        samples.push_back(std::move(sample));
        counts.push_back(confusion(r.full_mask, truth.mask));
    }
    return evaluate(ids, samples, counts, iou_threshold);
}

PipelineRun run_pipeline(DatasetManifest const & manifest, PipelineConfig const & config,
                         ProcessOptions const & options) {
    config.validate();
    manifest.validate();
    Providers const providers(config);
    auto const inputs = pipeline_inputs(manifest);

    std::vector<std::optional<ImageResult>> slots(inputs.size());
    std::vector<std::optional<std::string>> errors(inputs.size());
    detail::parallel_for(inputs.size(), config.jobs, [&](std::size_t i) {
        try {
            slots[i] = process_image(inputs[i], config, providers, options);
        } catch (std::exception const & e) {
            errors[i] = e.what();
        }
    });

    PipelineRun run;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (slots[i]) {
            run.results.push_back(std::move(*slots[i]));
        } else {
            run.failures.push_back({inputs[i].image_id, errors[i].value_or("unknown error")});
        }
    }
    run.report = evaluate_results(manifest, run.results, config.iou_threshold);
    for (auto const & f : run.failures) {
        run.report.failed_images.push_back(f.image_id);
    }
    return run;
}

std::vector<SweepRow> sweep_lambda(DatasetManifest const & manifest, PipelineConfig const & config,
                                   std::vector<double> lambdas) {
    if (lambdas.empty()) {
        throw ValidationError("lambda list is empty");
    }
    for (double l : lambdas) {
        quantize_lambda(l);
    }
    std::sort(lambdas.begin(), lambdas.end());
    lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

    config.validate();
    manifest.validate();
    Providers const providers(config);
    auto const inputs = pipeline_inputs(manifest);

    // predictions[image][lambda]
    std::vector<std::vector<std::vector<ScoredBox>>> predictions(inputs.size());
    std::vector<std::optional<std::string>> errors(inputs.size());
    detail::parallel_for(inputs.size(), config.jobs, [&](std::size_t i) {
        try {
            auto const image = load_input_image(inputs[i], providers.needs_image());
            auto const sets = detect_stage(inputs[i].image_id, image ? &*image : nullptr, config.scales,
                                           providers);
            auto const fused = build_fused_mask(sets, inputs[i].native);
            for (double l : lambdas) {
                std::vector<ScoredBox> boxes;
                for (auto const & c : candidates_at(fused, l)) {
                    boxes.push_back({c.box, c.peak});
                }
                predictions[i].push_back(std::move(boxes));
            }
        } catch (std::exception const & e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (errors[i]) {
            throw Error("image '" + inputs[i].image_id + "': " + *errors[i]);
        }
    }

    std::vector<std::vector<BoundingBox>> truths;
    for (auto const & e : manifest.entries) {
        truths.push_back(rasterize_truth(e, manifest.base_dir).boxes);
    }
    std::vector<SweepRow> rows;
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        std::vector<DetectionSample> samples;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            samples.push_back({predictions[i][li], truths[i]});
        }
        rows.push_back({lambdas[li], operating_point(samples, config.iou_threshold)});
    }
    return rows;
}

std::string sweep_json(std::vector<SweepRow> const & rows) {
    ordered_json arr = ordered_json::array();
    for (auto const & r : rows) {
        arr.push_back({{"lambda", r.lambda}, {"tpr", r.point.tpr}, {"fp_avg", r.point.fp_avg}});
    }
    return arr.dump(2) + "\n";
}

} // namespace msseg
