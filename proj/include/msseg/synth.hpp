#pragma once

// Seeded synthetic phantoms and detector-noise simulation.
//
// Masses are radially perturbed ellipses:
//   inside(x,y) <=> u^2 + v^2 <= r(theta)^2,  u = dx/a, v = dy/b,
//   r(theta) = 1 + irregularity * sum_k (p_k cos k.theta + q_k sin k.theta) / H
// with harmonics k = 2..H+1 and |p_k|,|q_k| <= 1, evaluated at pixel centres.
// cos/sin of k.theta come from powers of (u + iv)/rho, so mass geometry needs
// only sqrt and the four basic operations.

#include "msseg/fusion.hpp"
#include "msseg/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace msseg {

struct PhantomSpec {
    ImageSize native{1024, 2048};
    int mass_count_min = 1;
    int mass_count_max = 3;
    int mass_radius_min = 40;
    int mass_radius_max = 120;
    double boundary_irregularity = 0.15;
    double background_noise_sigma = 8.0;
    double background_level = 70.0;
    double mass_contrast = 90.0;
    int min_gap = 32; // clearance between mass boxes and from the border
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr int kHarmonics = 4;

struct MassShape {
    double center_x = 0.0;
    double center_y = 0.0;
    double semi_x = 0.0;
    double semi_y = 0.0;
    double irregularity = 0.0;
    std::array<double, kHarmonics> cos_coef{};
    std::array<double, kHarmonics> sin_coef{};

    /// Point-in-shape test for pixel (x,y), using its centre.
    [[nodiscard]] bool covers(int x, int y) const;
    /// Box guaranteed to contain every covered pixel.
    [[nodiscard]] BoundingBox extent() const;
};

struct Phantom {
    GrayImage image;
    BinaryMask truth_mask;
    std::vector<MassShape> masses;
    std::vector<BoundingBox> truth_boxes; // tight, one per mass
};

/// Deterministic in (spec.seed, index). Throws Error when the masses cannot be
/// placed after a bounded number of attempts.
Phantom generate_phantom(PhantomSpec const & spec, std::uint64_t index = 0);

/// Only the mass geometry (no intensities): the same masses and boxes as
/// generate_phantom for the same (spec, index), far cheaper.
std::vector<MassShape> place_masses(PhantomSpec const & spec, std::uint64_t index = 0);
BoundingBox tight_box(MassShape const & mass, ImageSize native);

struct DetectionNoiseSpec {
    double detection_probability = 0.8;
    double center_jitter_sigma = 0.05; // fraction of box size
    double size_jitter_sigma = 0.05;   // fraction of box size
    double confidence_mean = 0.8;
    double confidence_sigma = 0.05;
    double false_positive_rate = 1.5; // expected per image
    int fp_size_min = 60;             // native pixels
    int fp_size_max = 240;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Noisy detector output for one image at one scale. Truth boxes are in the
/// native frame. (image_index, scale_index) select an independent substream.
ScaleDetectionSet simulate_detections(std::vector<BoundingBox> const & truth_boxes, ImageSize native,
                                      ImageSize scale, DetectionNoiseSpec const & noise,
                                      std::uint64_t image_index = 0, std::uint64_t scale_index = 0);

struct SyntheticDatasetOptions {
    PhantomSpec phantom;
    DetectionNoiseSpec noise;
    std::vector<ImageSize> scales;
    int count = 10;
};

/// Writes manifest.json, images/<id>.pgm, masks/<id>.pgm and detections.jsonl.
void write_synthetic_dataset(std::filesystem::path const & out_dir,
                             SyntheticDatasetOptions const & options);

std::string synthetic_image_id(std::uint64_t index);

} // namespace msseg
