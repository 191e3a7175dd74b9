#pragma once

// JSON Lines detection interchange. One record per (image_id, scale):
//   {"image_id":..., "scale_w":W, "scale_h":H,
//    "boxes":[{"min_x":..,"min_y":..,"max_x":..,"max_y":..,"score":..}, ...]}
// Fused output uses the same schema at native scale; each box also carries
// "peak" (equal to "score").

#include "msseg/fusion.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace msseg {

struct DetectionRecord {
    std::string image_id;
    ScaleDetectionSet set;
};

std::vector<DetectionRecord> parse_detections_jsonl(std::istream & in);
std::vector<DetectionRecord> read_detections_jsonl(std::filesystem::path const & path);

std::string detection_record_line(DetectionRecord const & record);
std::string fused_record_line(std::string const & image_id, ImageSize native,
                              std::vector<FusedCandidate> const & candidates);

void write_detections_jsonl(std::filesystem::path const & path,
                            std::vector<DetectionRecord> const & records);

/// Groups records by image, then by scale. Duplicate (image, scale) pairs are rejected.
using DetectionIndex = std::map<std::string, std::vector<ScaleDetectionSet>>;
DetectionIndex index_detections(std::vector<DetectionRecord> const & records);

} // namespace msseg
