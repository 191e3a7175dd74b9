#pragma once

#include "msseg/geometry.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace msseg {

struct ScoredBox {
    BoundingBox box;
    double score = 0.0;
};

struct MatchPair {
    int prediction = 0;
    int truth = 0;
    double iou = 0.0;
};

struct MatchResult {
    std::vector<MatchPair> pairs;
    std::vector<int> unmatched_predictions;
    std::vector<int> unmatched_truths;
};

/// Greedy matching in descending score (stable for equal scores). Each
/// prediction takes the unmatched truth of highest IoU, provided IoU >= threshold.
MatchResult match_detections(std::span<ScoredBox const> predictions,
                             std::span<BoundingBox const> truths, double iou_threshold);

/// Predictions and ground truth of one image.
struct DetectionSample {
    std::vector<ScoredBox> predictions;
    std::vector<BoundingBox> truths;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
    double score_threshold = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;
};

/// One point per unique score, swept from high to low.
PrCurve pr_curve(std::span<DetectionSample const> samples, double iou_threshold);

/// All-point interpolated area under the precision envelope. Empty curve -> 0.
double average_precision(PrCurve const & curve);

struct FrocPoint {
    double tpr = 0.0;
    double fp_avg = 0.0;
    double score_threshold = 0.0;
};

std::vector<FrocPoint> froc(std::span<DetectionSample const> samples, double iou_threshold);

/// TPR and FP per image of the whole prediction set, without a score sweep.
FrocPoint operating_point(std::span<DetectionSample const> samples, double iou_threshold);

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    ConfusionCounts & operator+=(ConfusionCounts const & o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(ConfusionCounts const &, ConfusionCounts const &) = default;
};

ConfusionCounts confusion(BinaryMask const & prediction, BinaryMask const & truth);

/// 2TP / (2TP + FP + FN); 1 when both masks are empty.
double dice(ConfusionCounts const & counts);
double dice(BinaryMask const & prediction, BinaryMask const & truth);

struct ImageEvaluation {
    std::string image_id;
    std::optional<double> dice; // absent when no masks were evaluated
    int tp_boxes = 0;
    int fp_boxes = 0;
    int fn_boxes = 0;
};

struct EvalReport {
    double ap = 0.0;
    PrCurve pr;
    std::vector<FrocPoint> froc_points;
    FrocPoint operating;
    std::vector<ImageEvaluation> per_image;
    std::optional<double> mean_dice;
    std::optional<double> pooled_dice;
    std::vector<std::string> failed_images;
};

/// Box-level and (optionally) mask-level evaluation of a batch of images.
/// `mask_counts` holds the pixel confusion of each image in `samples` order,
/// or is empty when no masks are evaluated.
EvalReport evaluate(std::vector<std::string> const & image_ids,
                    std::span<DetectionSample const> samples,
                    std::span<ConfusionCounts const> mask_counts, double iou_threshold);

/// Canonical JSON text of the report (stable key order and formatting).
std::string report_json(EvalReport const & report);

/// Two-column CSV exports of the curves.
std::string pr_csv(PrCurve const & curve);
std::string froc_csv(std::span<FrocPoint const> points);

} // namespace msseg
