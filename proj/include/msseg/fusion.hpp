#pragma once

// Multi-scale fusion (MSF) of detection boxes.
//
// Each detection paints its confidence over its box (mapped to the native
// frame); the painted layers are summed and normalised by
// N * max(confidence), where N is the number of prediction scales. Pixels at
// or above the voting threshold lambda are kept, grouped into 8-connected
// components, and each component's tight box becomes a fused candidate.
//
// Arithmetic is exact: confidences are quantised to 1e-9 and lambda to 1e-6,
// and the threshold test is carried out on integers. The fused values are
// therefore independent of the order of scales and detections, and unanimous
// agreement at equal confidence lands on exactly 1.

#include "msseg/geometry.hpp"

#include <cstdint>
#include <vector>

namespace msseg {

struct Detection {
    BoundingBox box;
    double confidence = 0.0;
};

/// Boxes predicted at one scale; boxes are in that scale's pixel frame.
struct ScaleDetectionSet {
    ImageSize scale;
    std::vector<Detection> detections;

    /// Throws ValidationError unless every box lies in `scale` and every
    /// confidence is in [0,1].
    void validate() const;
};

inline constexpr std::int64_t kConfidenceUnits = 1'000'000'000;
inline constexpr std::int64_t kLambdaUnits = 1'000'000;

std::int64_t quantize_confidence(double confidence);
std::int64_t quantize_lambda(double lambda);

/// Fused confidence grid in the native frame, stored as exact rationals
/// sum(pixel) / denominator.
class FusionMask {
public:
    FusionMask() = default;
    explicit FusionMask(ImageSize size);
    FusionMask(ImageSize size, std::vector<std::int64_t> sums, std::int64_t denominator);

    [[nodiscard]] ImageSize size() const { return sums_.size(); }
    [[nodiscard]] std::int64_t sum(int x, int y) const { return sums_.at(x, y); }
    [[nodiscard]] std::int64_t denominator() const { return denominator_; }
    [[nodiscard]] double value(int x, int y) const;
    [[nodiscard]] double value_of(std::int64_t sum) const;
    /// sum >= lambda * denominator, evaluated exactly. Zero-valued pixels never
    /// pass: lambda = 0 keeps exactly the pixels covered by some detection.
    [[nodiscard]] bool passes(std::int64_t sum, std::int64_t lambda_units) const;
    [[nodiscard]] bool all_zero() const;

    friend bool operator==(FusionMask const &, FusionMask const &) = default;

private:
    Grid<std::int64_t> sums_;
    std::int64_t denominator_ = 0;
};

struct FusedCandidate {
    BoundingBox box;
    double peak = 0.0;
    std::int64_t peak_sum = 0;
    int component_id = 0;

    friend bool operator==(FusedCandidate const &, FusedCandidate const &) = default;
};

struct ComponentLabels {
    Grid<int> labels; // 0 = background, 1..count
    int count = 0;
};

FusionMask build_fused_mask(std::vector<ScaleDetectionSet> const & sets, ImageSize native);

BinaryMask threshold_mask(FusionMask const & mask, double lambda);

/// 8-connected labelling; labels follow raster-scan discovery order.
ComponentLabels label_components(BinaryMask const & mask);

/// One candidate per label, ordered by peak descending, then (min_y, min_x).
std::vector<FusedCandidate> components_to_candidates(ComponentLabels const & labels,
                                                     FusionMask const & mask);

/// Threshold, label and extract from an already fused mask.
std::vector<FusedCandidate> candidates_at(FusionMask const & mask, double lambda);

std::vector<FusedCandidate> msf(std::vector<ScaleDetectionSet> const & sets, ImageSize native,
                                double lambda);

} // namespace msseg
