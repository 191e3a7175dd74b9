#include "msseg/synth.hpp"

#include "msseg/detections_io.hpp"
#include "msseg/ingest.hpp"
#include "msseg/pgm.hpp"
#include "msseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace msseg {

namespace {

constexpr int kPlacementAttempts = 1000;
constexpr int kFalsePositiveAttempts = 100;

// Stream ids keep the phantom geometry, pixel noise and detections independent.
constexpr std::uint64_t kStreamGeometry = 1;
constexpr std::uint64_t kStreamPixels = 2;
constexpr std::uint64_t kStreamDetections = 3;

BoundingBox dilate(BoundingBox const & b, int margin) {
    return {b.min_x - margin, b.min_y - margin, b.max_x + margin, b.max_y + margin};
}

bool overlaps(BoundingBox const & a, BoundingBox const & b) { return intersect(a, b).has_value(); }

} // namespace

void PhantomSpec::validate() const {
    if (!native.valid()) {
        throw ValidationError("phantom size must be positive");
    }
    if (mass_count_min < 0 || mass_count_max < mass_count_min) {
        throw ValidationError("invalid mass count range");
    }
    if (mass_radius_min < 1 || mass_radius_max < mass_radius_min) {
        throw ValidationError("invalid mass radius range");
    }
    if (!(boundary_irregularity >= 0.0 && boundary_irregularity < 1.0)) {
        throw ValidationError("boundary irregularity must be in [0,1)");
    }
    if (!(background_noise_sigma >= 0.0)) {
        throw ValidationError("noise sigma must be non-negative");
    }
    double const reach = mass_radius_max * (1.0 + boundary_irregularity) + min_gap;
    if (mass_count_max > 0 && (2.0 * reach >= native.width || 2.0 * reach >= native.height)) {
        throw ValidationError("mass radii do not fit inside the phantom");
    }
}

bool MassShape::covers(int x, int y) const {
    double const u = (x + 0.5 - center_x) / semi_x;
    double const v = (y + 0.5 - center_y) / semi_y;
    double const rho2 = u * u + v * v;
    if (rho2 == 0.0) {
        return true;
    }
    double radius = 1.0;
    if (irregularity > 0.0) {
        double const rho = std::sqrt(rho2);
        double const c1 = u / rho;
        double const s1 = v / rho;
        // (c,s) walks cos/sin of k.theta for k = 2..kHarmonics+1.
        double c = c1 * c1 - s1 * s1;
        double s = 2.0 * c1 * s1;
        double perturb = 0.0;
        for (int k = 0; k < kHarmonics; ++k) {
            perturb += cos_coef[k] * c + sin_coef[k] * s;
            double const nc = c * c1 - s * s1;
            double const ns = s * c1 + c * s1;
            c = nc;
            s = ns;
        }
        radius += irregularity * perturb / kHarmonics;
    }
    return rho2 <= radius * radius;
}

BoundingBox MassShape::extent() const {
    double const reach = 1.0 + irregularity;
    return {static_cast<int>(std::floor(center_x - semi_x * reach)) - 1,
            static_cast<int>(std::floor(center_y - semi_y * reach)) - 1,
            static_cast<int>(std::ceil(center_x + semi_x * reach)) + 1,
            static_cast<int>(std::ceil(center_y + semi_y * reach)) + 1};
}

BoundingBox tight_box(MassShape const & mass, ImageSize native) {
    auto const ext = clip_box(mass.extent(), native);
    if (!ext) {
        throw Error("mass lies outside the phantom");
    }
    int min_x = ext->max_x;
    int min_y = ext->max_y;
    int max_x = ext->min_x - 1;
    int max_y = ext->min_y - 1;
    for (int y = ext->min_y; y < ext->max_y; ++y) {
        for (int x = ext->min_x; x < ext->max_x; ++x) {
            if (mass.covers(x, y)) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
        }
    }
    return {min_x, min_y, max_x + 1, max_y + 1};
}

std::vector<MassShape> place_masses(PhantomSpec const & spec, std::uint64_t index) {
    spec.validate();
    Rng rng = Rng::substream(spec.seed, {index, kStreamGeometry});
    auto const count = static_cast<int>(rng.uniform_int(spec.mass_count_min, spec.mass_count_max));

    std::vector<MassShape> masses;
    std::vector<BoundingBox> occupied;
    int attempts = 0;
    while (static_cast<int>(masses.size()) < count) {
        if (++attempts > kPlacementAttempts) {
            throw Error("could not place " + std::to_string(count) + " masses in " +
                        to_string(spec.native) + " after " + std::to_string(kPlacementAttempts) +
                        " attempts");
        }
        MassShape m;
        m.semi_x = static_cast<double>(rng.uniform_int(spec.mass_radius_min, spec.mass_radius_max));
        m.semi_y = static_cast<double>(rng.uniform_int(spec.mass_radius_min, spec.mass_radius_max));
        m.irregularity = spec.boundary_irregularity;
        for (int k = 0; k < kHarmonics; ++k) {
            m.cos_coef[k] = rng.uniform(-1.0, 1.0);
            m.sin_coef[k] = rng.uniform(-1.0, 1.0);
        }
        double const reach_x = m.semi_x * (1.0 + m.irregularity) + 2 + spec.min_gap;
        double const reach_y = m.semi_y * (1.0 + m.irregularity) + 2 + spec.min_gap;
        m.center_x = static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(reach_x)),
                                                         static_cast<std::int64_t>(spec.native.width - reach_x)));
        m.center_y = static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(reach_y)),
                                                         static_cast<std::int64_t>(spec.native.height - reach_y)));
        auto const claim = dilate(m.extent(), spec.min_gap);
        if (std::any_of(occupied.begin(), occupied.end(),
                        [&](BoundingBox const & o) { return overlaps(o, claim); })) {
            continue;
        }
        occupied.push_back(m.extent());
        masses.push_back(m);
    }
    return masses;
}

Phantom generate_phantom(PhantomSpec const & spec, std::uint64_t index) {
    Phantom p;
    p.masses = place_masses(spec, index);
    p.truth_mask = BinaryMask(spec.native);
    for (auto const & m : p.masses) {
        auto const ext = *clip_box(m.extent(), spec.native);
        for (int y = ext.min_y; y < ext.max_y; ++y) {
            for (int x = ext.min_x; x < ext.max_x; ++x) {
                if (m.covers(x, y)) {
                    p.truth_mask.at(x, y) = 1;
                }
            }
        }
        p.truth_boxes.push_back(tight_box(m, spec.native));
    }

    // Intensities: flat background plus a flat mass bump plus noise, rounded
    // half away from zero and clamped to 0..255.
    Rng rng = Rng::substream(spec.seed, {index, kStreamPixels});
    p.image = GrayImage(spec.native);
    auto const & mask = p.truth_mask.data();
    auto & pixels = p.image.data();
    bool const noisy = spec.background_noise_sigma > 0.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        double v = spec.background_level + (mask[i] != 0 ? spec.mass_contrast : 0.0);
        if (noisy) {
            v += spec.background_noise_sigma * rng.normal();
        }
        pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
    }
    return p;
}

void DetectionNoiseSpec::validate() const {
    if (!(detection_probability >= 0.0 && detection_probability <= 1.0)) {
        throw ValidationError("detection probability must be in [0,1]");
    }
    if (!(center_jitter_sigma >= 0.0 && size_jitter_sigma >= 0.0 && confidence_sigma >= 0.0)) {
        throw ValidationError("noise sigmas must be non-negative");
    }
    if (!(false_positive_rate >= 0.0)) {
        throw ValidationError("false positive rate must be non-negative");
    }
    if (fp_size_min < 1 || fp_size_max < fp_size_min) {
        throw ValidationError("invalid false positive size range");
    }
}

ScaleDetectionSet simulate_detections(std::vector<BoundingBox> const & truth_boxes, ImageSize native,
                                      ImageSize scale, DetectionNoiseSpec const & noise,
                                      std::uint64_t image_index, std::uint64_t scale_index) {
    noise.validate();
    Rng rng = Rng::substream(noise.seed, {image_index, kStreamDetections, scale_index});
    auto draw_confidence = [&] {
        return std::clamp(rng.normal(noise.confidence_mean, noise.confidence_sigma), 0.0, 1.0);
    };

    ScaleDetectionSet out{scale, {}};
    for (auto const & t : truth_boxes) {
        // Draw everything up front so the stream does not depend on outcomes.
        bool const detected = rng.bernoulli(noise.detection_probability);
        double const jx = rng.normal();
        double const jy = rng.normal();
        double const jw = rng.normal();
        double const jh = rng.normal();
        double const conf = draw_confidence();
        if (!detected) {
            continue;
        }
        double const w = t.width() * (1.0 + noise.size_jitter_sigma * jw);
        double const h = t.height() * (1.0 + noise.size_jitter_sigma * jh);
        double const cx = 0.5 * (t.min_x + t.max_x) + noise.center_jitter_sigma * t.width() * jx;
        double const cy = 0.5 * (t.min_y + t.max_y) + noise.center_jitter_sigma * t.height() * jy;
        BoundingBox const raw{static_cast<int>(std::lround(cx - 0.5 * w)),
                              static_cast<int>(std::lround(cy - 0.5 * h)),
                              static_cast<int>(std::lround(cx + 0.5 * w)),
                              static_cast<int>(std::lround(cy + 0.5 * h))};
        auto const clipped = clip_box(raw, native);
        if (!clipped) {
            continue;
        }
        out.detections.push_back({scale_box(*clipped, native, scale), conf});
    }

    int const fp_count =
        noise.false_positive_rate > 0.0 ? rng.poisson(std::exp(-noise.false_positive_rate)) : 0;
    for (int i = 0; i < fp_count; ++i) {
        double const conf = draw_confidence();
        for (int attempt = 0; attempt < kFalsePositiveAttempts; ++attempt) {
            int const w = static_cast<int>(rng.uniform_int(noise.fp_size_min, std::min(noise.fp_size_max, native.width)));
            int const h = static_cast<int>(rng.uniform_int(noise.fp_size_min, std::min(noise.fp_size_max, native.height)));
            int const x = static_cast<int>(rng.uniform_int(0, native.width - w));
            int const y = static_cast<int>(rng.uniform_int(0, native.height - h));
            BoundingBox const box{x, y, x + w, y + h};
            bool const clear = std::none_of(truth_boxes.begin(), truth_boxes.end(), [&](BoundingBox const & t) {
                return overlaps(dilate(t, std::max(t.width(), t.height()) / 2), box);
            });
            if (clear) {
                out.detections.push_back({scale_box(box, native, scale), conf});
                break;
            }
        }
    }
    return out;
}

std::string synthetic_image_id(std::uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%05llu", static_cast<unsigned long long>(index));
    return buf;
}

void write_synthetic_dataset(std::filesystem::path const & out_dir,
                             SyntheticDatasetOptions const & options) {
    if (options.count < 0) {
        throw ValidationError("image count must be non-negative");
    }
    if (options.scales.empty()) {
        throw ValidationError("at least one detection scale is required");
    }
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "masks");

    DatasetManifest manifest;
    std::vector<DetectionRecord> records;
    for (int i = 0; i < options.count; ++i) {
        auto const index = static_cast<std::uint64_t>(i);
        auto const id = synthetic_image_id(index);
        auto const phantom = generate_phantom(options.phantom, index);
        write_pgm(out_dir / "images" / (id + ".pgm"), phantom.image);
        write_mask_pgm(out_dir / "masks" / (id + ".pgm"), phantom.truth_mask);

        ManifestEntry entry;
        entry.image_id = id;
        entry.image_path = "images/" + id + ".pgm";
        entry.native = options.phantom.native;
        entry.truth_mask = "masks/" + id + ".pgm";
        manifest.entries.push_back(std::move(entry));

        for (std::size_t s = 0; s < options.scales.size(); ++s) {
            records.push_back({id, simulate_detections(phantom.truth_boxes, options.phantom.native,
                                                        options.scales[s], options.noise, index, s)});
        }
    }
    save_manifest(out_dir / "manifest.json", manifest);
    write_detections_jsonl(out_dir / "detections.jsonl", records);
}

} // namespace msseg
