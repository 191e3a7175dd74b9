#pragma once

#include "msseg/error.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msseg {

struct ImageSize {
    int width = 0;
    int height = 0;

    [[nodiscard]] std::int64_t pixel_count() const {
        return static_cast<std::int64_t>(width) * height;
    }
    [[nodiscard]] bool valid() const { return width >= 1 && height >= 1; }

    friend bool operator==(ImageSize const &, ImageSize const &) = default;
};

/// Parses "WxH" (e.g. "160x320").
ImageSize parse_image_size(std::string const & text);
std::string to_string(ImageSize const & size);

/// Half-open pixel rectangle: pixel (x,y) is inside iff
/// min_x <= x < max_x and min_y <= y < max_y.
struct BoundingBox {
    int min_x = 0;
    int min_y = 0;
    int max_x = 0;
    int max_y = 0;

    [[nodiscard]] int width() const { return max_x - min_x; }
    [[nodiscard]] int height() const { return max_y - min_y; }
    [[nodiscard]] bool valid() const {
        return min_x >= 0 && min_y >= 0 && min_x < max_x && min_y < max_y;
    }
    [[nodiscard]] bool contains(int x, int y) const {
        return x >= min_x && x < max_x && y >= min_y && y < max_y;
    }
    [[nodiscard]] bool contains(BoundingBox const & other) const {
        return other.min_x >= min_x && other.max_x <= max_x &&
               other.min_y >= min_y && other.max_y <= max_y;
    }
    [[nodiscard]] bool within(ImageSize const & frame) const {
        return valid() && max_x <= frame.width && max_y <= frame.height;
    }

    friend bool operator==(BoundingBox const &, BoundingBox const &) = default;
};

std::string to_string(BoundingBox const & box);

/// Row-major 2-D raster.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(ImageSize size, T fill = T{})
        : size_(size), data_(static_cast<std::size_t>(size.pixel_count()), fill) {
        if (!size.valid()) {
            throw ValidationError("grid size must be positive, got " + to_string(size));
        }
    }

    [[nodiscard]] ImageSize size() const { return size_; }
    [[nodiscard]] int width() const { return size_.width; }
    [[nodiscard]] int height() const { return size_.height; }

    T & at(int x, int y) { return data_[index(x, y)]; }
    T const & at(int x, int y) const { return data_[index(x, y)]; }

    std::vector<T> & data() { return data_; }
    std::vector<T> const & data() const { return data_; }

    friend bool operator==(Grid const &, Grid const &) = default;

private:
    [[nodiscard]] std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(size_.width) +
               static_cast<std::size_t>(x);
    }

    ImageSize size_{};
    std::vector<T> data_;
};

/// 8-bit grayscale image.
using GrayImage = Grid<std::uint8_t>;
/// Binary mask; any non-zero value is foreground. Library code writes 0/1.
using BinaryMask = Grid<std::uint8_t>;

std::int64_t box_area(BoundingBox const & box);

/// Intersection of two boxes, empty optional when they do not overlap.
std::optional<BoundingBox> intersect(BoundingBox const & a, BoundingBox const & b);

double iou(BoundingBox const & a, BoundingBox const & b);

/// Maps a box between frames. Min corners round down and max corners round
/// up, so the mapped box always covers the source region.
BoundingBox scale_box(BoundingBox const & box, ImageSize from, ImageSize to);

/// Clips to the frame; empty optional when nothing remains.
std::optional<BoundingBox> clip_box(BoundingBox const & box, ImageSize frame);

/// Tight half-open bound of the foreground pixels, empty when there are none.
std::optional<BoundingBox> mask_bounds(BinaryMask const & mask);

std::int64_t count_foreground(BinaryMask const & mask);

enum class Resampling { nearest };

/// Exact description of how a patch was cut from a native image.
/// Scale factors are the rationals patch_size / source_window per axis.
struct PatchTransform {
    BoundingBox source_window;
    ImageSize patch_size;
    Resampling resampling = Resampling::nearest;

    [[nodiscard]] std::pair<int, int> scale_x() const {
        return {patch_size.width, source_window.width()};
    }
    [[nodiscard]] std::pair<int, int> scale_y() const {
        return {patch_size.height, source_window.height()};
    }
    /// Source column sampled by patch column px.
    [[nodiscard]] int source_x(int px) const;
    [[nodiscard]] int source_y(int py) const;
    /// Patch column holding the center of source column sx.
    [[nodiscard]] int patch_x(int sx) const;
    [[nodiscard]] int patch_y(int sy) const;

    friend bool operator==(PatchTransform const &, PatchTransform const &) = default;
};

struct Patch {
    GrayImage pixels;
    PatchTransform transform;
};

/// Nearest-neighbour resample of `window` to `out`. The window must already be
/// clipped to the image; patch pixel (x,y) samples
/// (min_x + floor(x*w/out_w), min_y + floor(y*h/out_h)).
Patch extract_patch(GrayImage const & image, BoundingBox const & window, ImageSize out);

/// Inverse of extract_patch on pixel centres: each window pixel takes the
/// patch pixel containing its centre. Pixels outside the window stay zero.
BinaryMask reconstruct_mask(BinaryMask const & patch_mask, PatchTransform const & transform,
                            ImageSize canvas);

/// Same as reconstruct_mask but ORs into an existing canvas.
void reconstruct_into(BinaryMask & canvas, BinaryMask const & patch_mask,
                      PatchTransform const & transform);

} // namespace msseg
