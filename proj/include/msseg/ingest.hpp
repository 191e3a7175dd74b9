#pragma once

#include "msseg/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace msseg {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(Point2 const &, Point2 const &) = default;
};

using Polygon = std::vector<Point2>;
/// A ground-truth contour (pixel-corner coordinates) or an annotated box.
using TruthGeometry = std::variant<Polygon, BoundingBox>;

struct ManifestEntry {
    std::string image_id;
    std::string image_path; // relative to the manifest directory unless absolute
    ImageSize native;
    std::vector<TruthGeometry> truth;
    std::string truth_mask; // optional PGM; each 8-connected component is one truth

    friend bool operator==(ManifestEntry const &, ManifestEntry const &) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir; // not serialised

    [[nodiscard]] std::filesystem::path resolve(std::string const & relative) const;
    /// Throws ValidationError on duplicate ids, bad sizes or out-of-frame geometry.
    void validate() const;
};

DatasetManifest parse_manifest(std::string const & json_text,
                               std::filesystem::path const & base_dir = {});
DatasetManifest load_manifest(std::filesystem::path const & path);
std::string manifest_json(DatasetManifest const & manifest);
void save_manifest(std::filesystem::path const & path, DatasetManifest const & manifest);

struct TruthRaster {
    BinaryMask mask;
    std::vector<BoundingBox> boxes; // one per contour, tight on its filled pixels
};

/// Even-odd fill with the pixel-centre rule; centres on an edge count as inside.
BinaryMask fill_polygon(Polygon const & polygon, ImageSize frame);

/// Fills every contour and box and ORs in the truth mask file, if any
/// (resolved against `base_dir`).
TruthRaster rasterize_truth(ManifestEntry const & entry, std::filesystem::path const & base_dir = {});

/// CDF remap to the full 0..255 range. Constant images are returned unchanged.
GrayImage hist_equalize(GrayImage const & image);

struct AnchorBox {
    double width = 0.0;
    double height = 0.0;
};

/// IoU of two boxes sharing a centre.
double centered_iou(AnchorBox const & a, AnchorBox const & b);

struct AnchorFit {
    std::vector<AnchorBox> anchors;     // sorted by area, then width
    std::vector<double> objective_trace; // winning run: mean (1 - IoU) to nearest anchor per iteration
    int iterations = 0;
};

inline constexpr int kAnchorCount = 9;
inline constexpr int kAnchorMaxIterations = 300;
inline constexpr double kAnchorTolerance = 1e-6;
inline constexpr int kAnchorRestarts = 10;

/// k-means on (w,h) under d = 1 - centred IoU, k-means++ seeding. A cluster's
/// centre moves to its member mean only when that lowers the cluster's
/// distance sum, so the objective never increases. The best of
/// kAnchorRestarts seeded runs is returned, with that run's trace.
AnchorFit kmeans_anchors(std::vector<AnchorBox> const & boxes, int k, std::uint64_t seed);

/// YOLO cfg text: "w,h,  w,h,  ..." with rounded integer sizes.
std::string format_anchors(std::vector<AnchorBox> const & anchors);

} // namespace msseg
