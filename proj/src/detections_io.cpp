#include "msseg/detections_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <istream>

namespace msseg {

using nlohmann::json;

namespace {

DetectionRecord parse_record(json const & j) {
    DetectionRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.set.scale = {j.at("scale_w").get<int>(), j.at("scale_h").get<int>()};
    for (auto const & b : j.at("boxes")) {
        Detection d;
        d.box = {b.at("min_x").get<int>(), b.at("min_y").get<int>(), b.at("max_x").get<int>(),
                 b.at("max_y").get<int>()};
        d.confidence = b.at("score").get<double>();
        r.set.detections.push_back(d);
    }
    // Fused peaks may exceed 1, so only the fusion input check enforces [0,1].
    if (!r.set.scale.valid()) {
        throw ValidationError("detection set has empty scale " + to_string(r.set.scale));
    }
    for (auto const & d : r.set.detections) {
        if (!d.box.within(r.set.scale)) {
            throw ValidationError("detection box " + to_string(d.box) + " outside scale " +
                                  to_string(r.set.scale));
        }
        if (!(d.confidence >= 0.0) || !std::isfinite(d.confidence)) {
            throw ValidationError("detection score must be finite and non-negative");
        }
    }
    return r;
}

json box_json(BoundingBox const & b, double score) {
    return json{{"min_x", b.min_x}, {"min_y", b.min_y}, {"max_x", b.max_x}, {"max_y", b.max_y},
                {"score", score}};
}

} // namespace

std::vector<DetectionRecord> parse_detections_jsonl(std::istream & in) {
    std::vector<DetectionRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(parse_record(json::parse(line)));
        } catch (json::exception const & e) {
            throw ValidationError("detections line " + std::to_string(line_no) + ": " + e.what());
        } catch (ValidationError const & e) {
            throw ValidationError("detections line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<DetectionRecord> read_detections_jsonl(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open detections file " + path.string());
    }
    return parse_detections_jsonl(in);
}

std::string detection_record_line(DetectionRecord const & record) {
    json boxes = json::array();
    for (auto const & d : record.set.detections) {
        boxes.push_back(box_json(d.box, d.confidence));
    }
    json j{{"image_id", record.image_id},
           {"scale_w", record.set.scale.width},
           {"scale_h", record.set.scale.height},
           {"boxes", std::move(boxes)}};
    return j.dump();
}

std::string fused_record_line(std::string const & image_id, ImageSize native,
                              std::vector<FusedCandidate> const & candidates) {
    json boxes = json::array();
    for (auto const & c : candidates) {
        auto b = box_json(c.box, c.peak);
        b["peak"] = c.peak;
        boxes.push_back(std::move(b));
    }
    json j{{"image_id", image_id},
           {"scale_w", native.width},
           {"scale_h", native.height},
           {"boxes", std::move(boxes)}};
    return j.dump();
}

void write_detections_jsonl(std::filesystem::path const & path,
                            std::vector<DetectionRecord> const & records) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (auto const & r : records) {
        out << detection_record_line(r) << '\n';
    }
}

DetectionIndex index_detections(std::vector<DetectionRecord> const & records) {
    DetectionIndex index;
    for (auto const & r : records) {
        auto & sets = index[r.image_id];
        for (auto const & s : sets) {
            if (s.scale == r.set.scale) {
                throw ValidationError("duplicate detections for image '" + r.image_id +
                                      "' at scale " + to_string(r.set.scale));
            }
        }
        sets.push_back(r.set);
    }
    return index;
}

} // namespace msseg
