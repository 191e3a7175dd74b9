#pragma once

// End-to-end orchestration: multi-scale detection -> fusion -> patch
// extraction -> patch segmentation -> full-image reconstruction -> evaluation.
//
// Processing never sees ground truth. Truth is rasterised only inside
// evaluation, after every image has been processed.

#include "msseg/detections_io.hpp"
#include "msseg/fusion.hpp"
#include "msseg/geometry.hpp"
#include "msseg/ingest.hpp"
#include "msseg/metrics.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace msseg {

enum class ProviderKind { builtin_blob_detector, builtin_threshold_segmenter, external_files };

ProviderKind parse_provider_kind(std::string const & text);
std::string to_string(ProviderKind kind);

struct ProviderBinding {
    ProviderBinding() = default;
    explicit ProviderBinding(ProviderKind k) : kind(k) {}

    ProviderKind kind = ProviderKind::builtin_blob_detector;
    /// external_files: JSONL detections (detector) or mask directory (segmenter).
    std::filesystem::path path;
    /// Builtin detector: components smaller than this (in scale pixels) are dropped.
    int min_area = 4;
    /// Builtin providers: minimum gap between the Otsu class means, in gray
    /// levels, below which the input is treated as having no foreground.
    double min_separation = 32.0;
};

std::vector<ImageSize> default_scales();

struct PipelineConfig {
    std::vector<ImageSize> scales = default_scales();
    double lambda = 0.6;
    ImageSize patch_size{256, 256};
    double iou_threshold = 0.5;
    ProviderBinding detector{ProviderKind::builtin_blob_detector};
    ProviderBinding segmenter{ProviderKind::builtin_threshold_segmenter};
    bool equalize_patches = true;
    int jobs = 1;

    void validate() const;
};

PipelineConfig parse_config(std::string const & json_text);
PipelineConfig load_config(std::filesystem::path const & path);
std::string config_json(PipelineConfig const & config);

/// Otsu threshold over the histogram; pixels strictly above it are foreground.
/// Returns nullopt when the image is constant or the class means are closer
/// than `min_separation`.
std::optional<int> otsu_threshold(GrayImage const & image, double min_separation = 0.0);

/// Area-average resample of the whole image to `size`.
GrayImage resample_area(GrayImage const & image, ImageSize size);

/// Classical stand-in for the stage-1 detector at one scale: area-average
/// downsample, Otsu, grow blobs over pixels 3 sigma above background, one box
/// per blob. Confidence is the Otsu core's contrast over the background.
ScaleDetectionSet detect_blobs(GrayImage const & image, ImageSize scale, ProviderBinding const & params);

/// Classical stand-in for the stage-2 segmenter: Otsu inside the patch, keep
/// the largest 8-connected component.
BinaryMask segment_otsu(GrayImage const & patch, ProviderBinding const & params);

/// Shared, read-only provider state (external detections are loaded once).
class Providers {
public:
    Providers(PipelineConfig const & config);

    std::vector<ScaleDetectionSet> detect(std::string const & image_id, GrayImage const * image,
                                          std::vector<ImageSize> const & scales) const;
    /// `patches` may be empty for external segmenters that never see pixels;
    /// `count` is the number of candidates either way.
    std::vector<BinaryMask> segment(std::string const & image_id,
                                    std::vector<GrayImage> const & patches, std::size_t count) const;

    [[nodiscard]] bool needs_image() const;

private:
    PipelineConfig config_;
    DetectionIndex external_detections_;
};

std::vector<ScaleDetectionSet> detect_stage(std::string const & image_id, GrayImage const * image,
                                            std::vector<ImageSize> const & scales,
                                            Providers const & providers);
std::vector<BinaryMask> segment_stage(std::string const & image_id,
                                      std::vector<GrayImage> const & patches, std::size_t count,
                                      Providers const & providers);

/// External segmenter file for candidate `index` of an image.
std::string external_mask_name(std::string const & image_id, std::size_t index);

struct StageTimings {
    double detect_ms = 0.0;
    double fuse_ms = 0.0;
    double segment_ms = 0.0;
};

struct ImageResult {
    std::string image_id;
    ImageSize native;
    std::vector<FusedCandidate> candidates;
    std::vector<PatchTransform> transforms;
    BinaryMask full_mask;
    StageTimings timings;
};

struct ImageFailure {
    std::string image_id;
    std::string message;
};

/// What processing may know about an image: no truth.
struct ImageInput {
    std::string image_id;
    ImageSize native;
    std::filesystem::path image_path;
};

std::vector<ImageInput> pipeline_inputs(DatasetManifest const & manifest);

struct ProcessOptions {
    /// When set, every extracted patch is written to <dir>/<external_mask_name>.
    std::optional<std::filesystem::path> patch_dir;
};

ImageResult process_image(ImageInput const & input, PipelineConfig const & config,
                          Providers const & providers, ProcessOptions const & options = {});

struct PipelineRun {
    std::vector<ImageResult> results; // manifest order, failures omitted
    std::vector<ImageFailure> failures;
    EvalReport report;
};

/// Processes every image on `config.jobs` workers, then evaluates in manifest order.
PipelineRun run_pipeline(DatasetManifest const & manifest, PipelineConfig const & config,
                         ProcessOptions const & options = {});

/// Evaluation of processed images against the manifest truth.
EvalReport evaluate_results(DatasetManifest const & manifest, std::vector<ImageResult> const & results,
                            double iou_threshold);

struct SweepRow {
    double lambda = 0.0;
    FrocPoint point;
};

/// One operating point per distinct lambda (ascending). Fused masks are built
/// once per image and re-thresholded for each lambda.
std::vector<SweepRow> sweep_lambda(DatasetManifest const & manifest, PipelineConfig const & config,
                                   std::vector<double> lambdas);

std::string sweep_json(std::vector<SweepRow> const & rows);

} // namespace msseg
