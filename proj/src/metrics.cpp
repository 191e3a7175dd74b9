#include "msseg/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace msseg {

namespace {

void check_threshold(double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
        throw ValidationError("IoU threshold must be in (0,1]");
    }
}

std::size_t total_truths(std::span<DetectionSample const> samples) {
    std::size_t n = 0;
    for (auto const & s : samples) {
        n += s.truths.size();
    }
    return n;
}

struct RankedPrediction {
    double score;
    bool true_positive;
};

// Every prediction of the batch with its match outcome, best score first.
std::vector<RankedPrediction> rank_predictions(std::span<DetectionSample const> samples,
                                               double iou_threshold) {
    std::vector<RankedPrediction> ranked;
    for (auto const & s : samples) {
        for (auto const & p : s.predictions) {
            if (!std::isfinite(p.score)) {
                throw ValidationError("prediction scores must be finite");
            }
        }
        auto const m = match_detections(s.predictions, s.truths, iou_threshold);
        std::vector<bool> tp(s.predictions.size(), false);
        for (auto const & pair : m.pairs) {
            tp[static_cast<std::size_t>(pair.prediction)] = true;
        }
        for (std::size_t i = 0; i < s.predictions.size(); ++i) {
            ranked.push_back({s.predictions[i].score, tp[i]});
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](RankedPrediction const & a, RankedPrediction const & b) {
                         return a.score > b.score;
                     });
    return ranked;
}

// Calls emit(tp, fp, threshold) after each group of equal scores.
template <typename Emit>
void sweep(std::vector<RankedPrediction> const & ranked, Emit emit) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        (ranked[i].true_positive ? tp : fp) += 1;
        if (i + 1 == ranked.size() || ranked[i + 1].score != ranked[i].score) {
            emit(tp, fp, ranked[i].score);
        }
    }
}

} // namespace

MatchResult match_detections(std::span<ScoredBox const> predictions,
                             std::span<BoundingBox const> truths, double iou_threshold) {
    check_threshold(iou_threshold);
    std::vector<int> order(predictions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return predictions[a].score > predictions[b].score;
    });

    MatchResult result;
    std::vector<bool> truth_taken(truths.size(), false);
    for (int p : order) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t t = 0; t < truths.size(); ++t) {
            if (truth_taken[t]) {
                continue;
            }
            double const v = iou(predictions[p].box, truths[t]);
            if (v >= iou_threshold && v > best_iou) {
                best = static_cast<int>(t);
                best_iou = v;
            }
        }
        if (best >= 0) {
            truth_taken[best] = true;
            result.pairs.push_back({p, best, best_iou});
        } else {
            result.unmatched_predictions.push_back(p);
        }
    }
    std::sort(result.unmatched_predictions.begin(), result.unmatched_predictions.end());
    for (std::size_t t = 0; t < truths.size(); ++t) {
        if (!truth_taken[t]) {
            result.unmatched_truths.push_back(static_cast<int>(t));
        }
    }
    return result;
}

PrCurve pr_curve(std::span<DetectionSample const> samples, double iou_threshold) {
    auto const truths = total_truths(samples);
    if (truths == 0) {
        throw ValidationError("precision-recall needs at least one ground-truth box");
    }
    PrCurve curve;
    sweep(rank_predictions(samples, iou_threshold), [&](std::size_t tp, std::size_t fp, double t) {
        curve.points.push_back({static_cast<double>(tp) / static_cast<double>(truths),
                                static_cast<double>(tp) / static_cast<double>(tp + fp), t});
    });
    return curve;
}

double average_precision(PrCurve const & curve) {
    auto const & pts = curve.points;
    if (pts.empty()) {
        return 0.0;
    }
    // Envelope: best precision at this recall or beyond.
    std::vector<double> envelope(pts.size());
    double best = 0.0;
    for (std::size_t i = pts.size(); i-- > 0;) {
        best = std::max(best, pts[i].precision);
        envelope[i] = best;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        ap += (pts[i].recall - prev_recall) * envelope[i];
        prev_recall = pts[i].recall;
    }
    return ap;
}

std::vector<FrocPoint> froc(std::span<DetectionSample const> samples, double iou_threshold) {
    if (samples.empty()) {
        throw ValidationError("FROC needs at least one image");
    }
    auto const truths = total_truths(samples);
    if (truths == 0) {
        throw ValidationError("FROC needs at least one ground-truth box");
    }
    auto const images = static_cast<double>(samples.size());
    std::vector<FrocPoint> points;
    sweep(rank_predictions(samples, iou_threshold), [&](std::size_t tp, std::size_t fp, double t) {
        points.push_back({static_cast<double>(tp) / static_cast<double>(truths),
                          static_cast<double>(fp) / images, t});
    });
    if (points.empty()) {
        points.push_back({0.0, 0.0, 0.0});
    }
    return points;
}

FrocPoint operating_point(std::span<DetectionSample const> samples, double iou_threshold) {
    if (samples.empty()) {
        throw ValidationError("operating point needs at least one image");
    }
    auto const truths = total_truths(samples);
    if (truths == 0) {
        throw ValidationError("operating point needs at least one ground-truth box");
    }
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (auto const & s : samples) {
        auto const m = match_detections(s.predictions, s.truths, iou_threshold);
        tp += m.pairs.size();
        fp += m.unmatched_predictions.size();
    }
    return {static_cast<double>(tp) / static_cast<double>(truths),
            static_cast<double>(fp) / static_cast<double>(samples.size()), 0.0};
}

ConfusionCounts confusion(BinaryMask const & prediction, BinaryMask const & truth) {
    if (prediction.size() != truth.size()) {
        throw ValidationError("confusion: mask sizes differ (" + to_string(prediction.size()) +
                              " vs " + to_string(truth.size()) + ")");
    }
    ConfusionCounts c;
    auto const & p = prediction.data();
    auto const & t = truth.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        bool const pp = p[i] != 0;
        bool const tt = t[i] != 0;
        if (pp && tt) {
            ++c.tp;
        } else if (pp) {
            ++c.fp;
        } else if (tt) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

double dice(ConfusionCounts const & c) {
    auto const denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) {
        return 1.0;
    }
    return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

double dice(BinaryMask const & prediction, BinaryMask const & truth) {
    return dice(confusion(prediction, truth));
}

EvalReport evaluate(std::vector<std::string> const & image_ids,
                    std::span<DetectionSample const> samples,
                    std::span<ConfusionCounts const> mask_counts, double iou_threshold) {
    check_threshold(iou_threshold);
    if (image_ids.size() != samples.size() || (!mask_counts.empty() && mask_counts.size() != samples.size())) {
        throw ValidationError("evaluate: per-image inputs differ in length");
    }
    EvalReport report;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto const m = match_detections(samples[i].predictions, samples[i].truths, iou_threshold);
        ImageEvaluation e;
        e.image_id = image_ids[i];
        e.tp_boxes = static_cast<int>(m.pairs.size());
        e.fp_boxes = static_cast<int>(m.unmatched_predictions.size());
        e.fn_boxes = static_cast<int>(m.unmatched_truths.size());
        report.per_image.push_back(std::move(e));
    }

    if (total_truths(samples) > 0) {
        report.pr = pr_curve(samples, iou_threshold);
        report.ap = average_precision(report.pr);
        report.froc_points = froc(samples, iou_threshold);
        report.operating = operating_point(samples, iou_threshold);
    } else if (!samples.empty()) {
        std::size_t fp = 0;
        for (auto const & e : report.per_image) {
            fp += static_cast<std::size_t>(e.fp_boxes);
        }
        report.operating = {0.0, static_cast<double>(fp) / static_cast<double>(samples.size()), 0.0};
    }

    if (!mask_counts.empty()) {
        ConfusionCounts pooled;
        double sum = 0.0;
        for (std::size_t i = 0; i < mask_counts.size(); ++i) {
            auto const & c = mask_counts[i];
            pooled += c;
            report.per_image[i].dice = dice(c);
            sum += *report.per_image[i].dice;
        }
        report.mean_dice = sum / static_cast<double>(mask_counts.size());
        report.pooled_dice = dice(pooled);
    }
    return report;
}

std::string report_json(EvalReport const & report) {
    using nlohmann::ordered_json;
    auto opt = [](std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); };

    ordered_json pr = ordered_json::array();
    for (auto const & p : report.pr.points) {
        pr.push_back({{"recall", p.recall}, {"precision", p.precision}, {"threshold", p.score_threshold}});
    }
    ordered_json fr = ordered_json::array();
    for (auto const & p : report.froc_points) {
        fr.push_back({{"tpr", p.tpr}, {"fp_avg", p.fp_avg}, {"threshold", p.score_threshold}});
    }
    ordered_json per = ordered_json::array();
    for (auto const & e : report.per_image) {
        per.push_back({{"image_id", e.image_id},
                       {"dice", opt(e.dice)},
                       {"tp_boxes", e.tp_boxes},
                       {"fp_boxes", e.fp_boxes},
                       {"fn_boxes", e.fn_boxes}});
    }
    ordered_json j;
    j["ap"] = report.ap;
    j["pr_points"] = std::move(pr);
    j["froc_points"] = std::move(fr);
    j["operating_point"] = {{"tpr", report.operating.tpr}, {"fp_avg", report.operating.fp_avg}};
    j["per_image"] = std::move(per);
    j["mean_dice"] = opt(report.mean_dice);
    j["pooled_dice"] = opt(report.pooled_dice);
    j["failed_images"] = report.failed_images;
    return j.dump(2) + "\n";
}

std::string pr_csv(PrCurve const & curve) {
    std::ostringstream out;
    out.precision(17);
    out << "recall,precision,threshold\n";
    for (auto const & p : curve.points) {
        out << p.recall << ',' << p.precision << ',' << p.score_threshold << '\n';
    }
    return out.str();
}

std::string froc_csv(std::span<FrocPoint const> points) {
    std::ostringstream out;
    out.precision(17);
    out << "fp_avg,tpr,threshold\n";
    for (auto const & p : points) {
        out << p.fp_avg << ',' << p.tpr << ',' << p.score_threshold << '\n';
    }
    return out.str();
}

} // namespace msseg
