#include "msseg/ingest.hpp"

#include "msseg/fusion.hpp"
#include "msseg/pgm.hpp"
#include "msseg/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace msseg {

using nlohmann::json;
using nlohmann::ordered_json;

std::filesystem::path DatasetManifest::resolve(std::string const & relative) const {
    std::filesystem::path p(relative);
    if (p.is_absolute() || base_dir.empty()) {
        return p;
    }
    return base_dir / p;
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (auto const & e : entries) {
        if (e.image_id.empty()) {
            throw ValidationError("manifest entry with empty image_id");
        }
        if (!ids.insert(e.image_id).second) {
            throw ValidationError("duplicate image_id '" + e.image_id + "'");
        }
        if (!e.native.valid()) {
            throw ValidationError("entry '" + e.image_id + "' has invalid size");
        }
        for (auto const & g : e.truth) {
            if (auto const * box = std::get_if<BoundingBox>(&g)) {
                if (!box->within(e.native)) {
                    throw ValidationError("entry '" + e.image_id + "': truth box " +
                                          to_string(*box) + " outside image");
                }
                continue;
            }
            auto const & poly = std::get<Polygon>(g);
            if (poly.size() < 3) {
                throw ValidationError("entry '" + e.image_id + "': polygon needs >= 3 vertices");
            }
            for (auto const & p : poly) {
                if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= e.native.width &&
                      p.y <= e.native.height)) {
                    throw ValidationError("entry '" + e.image_id + "': polygon vertex outside image");
                }
            }
        }
    }
}

DatasetManifest parse_manifest(std::string const & json_text, std::filesystem::path const & base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        auto const j = json::parse(json_text);
        for (auto const & je : j.at("entries")) {
            ManifestEntry e;
            e.image_id = je.at("image_id").get<std::string>();
            e.image_path = je.value("image", std::string{});
            e.native = {je.at("width").get<int>(), je.at("height").get<int>()};
            e.truth_mask = je.value("truth_mask", std::string{});
            for (auto const & jt : je.value("truth", json::array())) {
                if (jt.contains("polygon")) {
                    Polygon poly;
                    for (auto const & v : jt.at("polygon")) {
                        poly.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
                    }
                    e.truth.emplace_back(std::move(poly));
                } else if (jt.contains("box")) {
                    auto const & b = jt.at("box");
                    e.truth.emplace_back(BoundingBox{b.at(0).get<int>(), b.at(1).get<int>(),
                                                     b.at(2).get<int>(), b.at(3).get<int>()});
                } else {
                    throw ValidationError("entry '" + e.image_id +
                                          "': truth item needs 'polygon' or 'box'");
                }
            }
            m.entries.push_back(std::move(e));
        }
    } catch (json::exception const & e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
}

DatasetManifest load_manifest(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_manifest(buffer.str(), path.parent_path());
}

std::string manifest_json(DatasetManifest const & manifest) {
    ordered_json entries = ordered_json::array();
    for (auto const & e : manifest.entries) {
        ordered_json truth = ordered_json::array();
        for (auto const & g : e.truth) {
            if (auto const * box = std::get_if<BoundingBox>(&g)) {
                truth.push_back({{"box", {box->min_x, box->min_y, box->max_x, box->max_y}}});
            } else {
                ordered_json pts = ordered_json::array();
                for (auto const & p : std::get<Polygon>(g)) {
                    pts.push_back({p.x, p.y});
                }
                truth.push_back({{"polygon", std::move(pts)}});
            }
        }
        entries.push_back({{"image_id", e.image_id},
                           {"image", e.image_path},
                           {"width", e.native.width},
                           {"height", e.native.height},
                           {"truth", std::move(truth)}});
        if (!e.truth_mask.empty()) {
            entries.back()["truth_mask"] = e.truth_mask;
        }
    }
    ordered_json j;
    j["entries"] = std::move(entries);
    return j.dump(2) + "\n";
}

void save_manifest(std::filesystem::path const & path, DatasetManifest const & manifest) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
    out << manifest_json(manifest);
}

namespace {

// Exact for the integer and half-integer coordinates produced by pixel centres
// and integer vertices.
bool on_segment(Point2 a, Point2 b, double px, double py) {
    double const cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
    if (cross != 0.0) {
        return false;
    }
    return px >= std::min(a.x, b.x) && px <= std::max(a.x, b.x) && py >= std::min(a.y, b.y) &&
           py <= std::max(a.y, b.y);
}

} // namespace

BinaryMask fill_polygon(Polygon const & polygon, ImageSize frame) {
    if (polygon.size() < 3) {
        throw ValidationError("degenerate polygon: fewer than 3 vertices");
    }
    BinaryMask mask(frame);
    auto const n = polygon.size();
    std::vector<double> crossings;

    for (int y = 0; y < frame.height; ++y) {
        double const yc = y + 0.5;
        crossings.clear();
        for (std::size_t i = 0; i < n; ++i) {
            auto const & a = polygon[i];
            auto const & b = polygon[(i + 1) % n];
            if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y)) {
                crossings.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t i = 0; i + 1 < crossings.size(); i += 2) {
            int const x0 = std::max(0, static_cast<int>(std::ceil(crossings[i] - 0.5)));
            int const x1 = std::min(frame.width - 1, static_cast<int>(std::floor(crossings[i + 1] - 0.5)));
            for (int x = x0; x <= x1; ++x) {
                mask.at(x, y) = 1;
            }
        }
    }

    // Centres lying exactly on an edge are inside; the half-open crossing rule
    // above misses some of them (bottom vertices, horizontal edges).
    for (std::size_t i = 0; i < n; ++i) {
        auto const & a = polygon[i];
        auto const & b = polygon[(i + 1) % n];
        int const ylo = std::max(0, static_cast<int>(std::ceil(std::min(a.y, b.y) - 0.5)));
        int const yhi = std::min(frame.height - 1, static_cast<int>(std::floor(std::max(a.y, b.y) - 0.5)));
        for (int y = ylo; y <= yhi; ++y) {
            double const yc = y + 0.5;
            double lo = std::min(a.x, b.x);
            double hi = std::max(a.x, b.x);
            if (a.y != b.y) {
                double const x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
                lo = x - 1.0;
                hi = x + 1.0;
            }
            int const xlo = std::max(0, static_cast<int>(std::ceil(lo - 0.5)));
            int const xhi = std::min(frame.width - 1, static_cast<int>(std::floor(hi - 0.5)));
            for (int x = xlo; x <= xhi; ++x) {
                if (on_segment(a, b, x + 0.5, yc)) {
                    mask.at(x, y) = 1;
                }
            }
        }
    }
    return mask;
}

TruthRaster rasterize_truth(ManifestEntry const & entry, std::filesystem::path const & base_dir) {
    TruthRaster out{BinaryMask(entry.native), {}};
    if (!entry.truth_mask.empty()) {
        std::filesystem::path path(entry.truth_mask);
        if (path.is_relative() && !base_dir.empty()) {
            path = base_dir / path;
        }
        auto const loaded = read_mask_pgm(path);
        if (loaded.size() != entry.native) {
            throw ValidationError("truth mask of '" + entry.image_id + "' is " +
                                  to_string(loaded.size()) + ", expected " + to_string(entry.native));
        }
        out.mask = loaded;
        auto const labels = label_components(loaded);
        std::vector<BoundingBox> bounds(static_cast<std::size_t>(labels.count));
        std::vector<bool> seen(bounds.size(), false);
        for (int y = 0; y < loaded.height(); ++y) {
            for (int x = 0; x < loaded.width(); ++x) {
                int const l = labels.labels.at(x, y);
                if (l == 0) {
                    continue;
                }
                auto & b = bounds[static_cast<std::size_t>(l - 1)];
                if (!seen[l - 1]) {
                    seen[l - 1] = true;
                    b = {x, y, x + 1, y + 1};
                } else {
                    b.min_x = std::min(b.min_x, x);
                    b.max_x = std::max(b.max_x, x + 1);
                    b.max_y = y + 1;
                }
            }
        }
        out.boxes = std::move(bounds);
    }
    for (auto const & g : entry.truth) {
        if (auto const * box = std::get_if<BoundingBox>(&g)) {
            if (!box->within(entry.native)) {
                throw ValidationError("truth box outside image in '" + entry.image_id + "'");
            }
            for (int y = box->min_y; y < box->max_y; ++y) {
                for (int x = box->min_x; x < box->max_x; ++x) {
                    out.mask.at(x, y) = 1;
                }
            }
            out.boxes.push_back(*box);
            continue;
        }
        auto const filled = fill_polygon(std::get<Polygon>(g), entry.native);
        auto const bounds = mask_bounds(filled);
        if (!bounds) {
            throw ValidationError("degenerate polygon in '" + entry.image_id + "': covers no pixel centre");
        }
        for (std::size_t i = 0; i < filled.data().size(); ++i) {
            out.mask.data()[i] |= filled.data()[i];
        }
        out.boxes.push_back(*bounds);
    }
    return out;
}

GrayImage hist_equalize(GrayImage const & image) {
    std::array<std::int64_t, 256> hist{};
    for (auto v : image.data()) {
        ++hist[v];
    }
    std::array<std::int64_t, 256> cdf{};
    std::partial_sum(hist.begin(), hist.end(), cdf.begin());
    auto const total = cdf[255];
    std::int64_t cdf_min = 0;
    for (auto c : cdf) {
        if (c > 0) {
            cdf_min = c;
            break;
        }
    }
    auto const range = total - cdf_min;
    if (range == 0) {
        return image;
    }
    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) {
        auto const num = std::max<std::int64_t>(cdf[v] - cdf_min, 0) * 255;
        lut[v] = static_cast<std::uint8_t>((2 * num + range) / (2 * range));
    }
    GrayImage out = image;
    for (auto & v : out.data()) {
        v = lut[v];
    }
    return out;
}

double centered_iou(AnchorBox const & a, AnchorBox const & b) {
    double const inter = std::min(a.width, b.width) * std::min(a.height, b.height);
    double const uni = a.width * a.height + b.width * b.height - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

double anchor_distance(AnchorBox const & a, AnchorBox const & b) { return 1.0 - centered_iou(a, b); }

std::size_t nearest(std::vector<AnchorBox> const & centers, AnchorBox const & box, double & dist) {
    std::size_t best = 0;
    dist = anchor_distance(box, centers[0]);
    for (std::size_t j = 1; j < centers.size(); ++j) {
        double const d = anchor_distance(box, centers[j]);
        if (d < dist) {
            dist = d;
            best = j;
        }
    }
    return best;
}

} // namespace

namespace {

// One k-means++ seeded Lloyd run; anchors are left unsorted.
AnchorFit lloyd_run(std::vector<AnchorBox> const & boxes, int k, Rng & rng) {
    auto const n = boxes.size();

    // k-means++ seeding with D^2 weights.
    std::vector<AnchorBox> centers;
    centers.push_back(boxes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
    std::vector<double> weight(n);
    while (centers.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            nearest(centers, boxes[i], d);
            weight[i] = d * d;
            total += weight[i];
        }
        std::size_t pick = n - 1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (weight[i] > 0.0 && target < weight[i]) {
                    pick = i;
                    break;
                }
                target -= weight[i];
            }
            while (weight[pick] == 0.0) { // rounding fell off the end
                --pick;
            }
        } else {
            pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        }
        centers.push_back(boxes[pick]);
    }

    AnchorFit fit;
    std::vector<std::size_t> assign(n);
    auto assign_all = [&] {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            assign[i] = nearest(centers, boxes[i], d);
            sum += d;
        }
        return sum / static_cast<double>(n);
    };
    fit.objective_trace.push_back(assign_all());

    for (int iter = 1; iter <= kAnchorMaxIterations; ++iter) {
        for (std::size_t j = 0; j < centers.size(); ++j) {
            double sw = 0.0;
            double sh = 0.0;
            std::size_t members = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] == j) {
                    sw += boxes[i].width;
                    sh += boxes[i].height;
                    ++members;
                }
            }
            if (members == 0) {
                continue;
            }
            AnchorBox const mean{sw / static_cast<double>(members), sh / static_cast<double>(members)};
            double cost_old = 0.0;
            double cost_new = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] == j) {
                    cost_old += anchor_distance(boxes[i], centers[j]);
                    cost_new += anchor_distance(boxes[i], mean);
                }
            }
            if (cost_new <= cost_old) {
                centers[j] = mean;
            }
        }
        double const objective = assign_all();
        double const previous = fit.objective_trace.back();
        fit.objective_trace.push_back(objective);
        fit.iterations = iter;
        if (previous - objective < kAnchorTolerance) {
            break;
        }
    }

    fit.anchors = std::move(centers);
    return fit;
}

} // namespace

AnchorFit kmeans_anchors(std::vector<AnchorBox> const & boxes, int k, std::uint64_t seed) {
    if (k < 1) {
        throw ValidationError("anchor count must be positive");
    }
    if (boxes.size() < static_cast<std::size_t>(k)) {
        throw ValidationError("need at least " + std::to_string(k) + " boxes, got " +
                              std::to_string(boxes.size()));
    }
    for (auto const & b : boxes) {
        if (!(b.width > 0.0 && b.height > 0.0)) {
            throw ValidationError("anchor boxes must have positive size");
        }
    }
    // Independent restarts guard against two seeds landing in one cluster;
    // the run with the lowest final objective wins (earliest on ties).
    AnchorFit best;
    for (int r = 0; r < kAnchorRestarts; ++r) {
        Rng rng = Rng::substream(seed, {0x616e63686f72ULL, static_cast<std::uint64_t>(r)});
        auto fit = lloyd_run(boxes, k, rng);
        if (r == 0 || fit.objective_trace.back() < best.objective_trace.back()) {
            best = std::move(fit);
        }
    }
    auto & centers = best.anchors;
    std::sort(centers.begin(), centers.end(), [](AnchorBox const & a, AnchorBox const & b) {
        double const aa = a.width * a.height;
        double const ab = b.width * b.height;
        return aa != ab ? aa < ab : a.width < b.width;
    });
    return best;
}

std::string format_anchors(std::vector<AnchorBox> const & anchors) {
    std::string out;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (i > 0) {
            out += ",  ";
        }
        out += std::to_string(std::lround(anchors[i].width)) + "," +
               std::to_string(std::lround(anchors[i].height));
    }
    return out;
}

} // namespace msseg
