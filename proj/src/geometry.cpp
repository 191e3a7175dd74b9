#include "msseg/geometry.hpp"

#include <algorithm>
#include <charconv>

namespace msseg {

namespace {

std::int64_t floor_div(std::int64_t num, std::int64_t den) {
    std::int64_t q = num / den;
    if ((num % den != 0) && ((num < 0) != (den < 0))) {
        --q;
    }
    return q;
}

std::int64_t ceil_div(std::int64_t num, std::int64_t den) {
    return -floor_div(-num, den);
}

int parse_positive(std::string_view text, std::string const & whole) {
    int value = 0;
    auto const * end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || value < 1) {
        throw ValidationError("invalid image size '" + whole + "', expected WxH");
    }
    return value;
}

} // namespace

ImageSize parse_image_size(std::string const & text) {
    auto const sep = text.find_first_of("xX");
    if (sep == std::string::npos) {
        throw ValidationError("invalid image size '" + text + "', expected WxH");
    }
    std::string_view view(text);
    return {parse_positive(view.substr(0, sep), text), parse_positive(view.substr(sep + 1), text)};
}

std::string to_string(ImageSize const & size) {
    return std::to_string(size.width) + "x" + std::to_string(size.height);
}

std::string to_string(BoundingBox const & box) {
    return "(" + std::to_string(box.min_x) + "," + std::to_string(box.min_y) + "," +
           std::to_string(box.max_x) + "," + std::to_string(box.max_y) + ")";
}

std::int64_t box_area(BoundingBox const & box) {
    return static_cast<std::int64_t>(box.width()) * box.height();
}

std::optional<BoundingBox> intersect(BoundingBox const & a, BoundingBox const & b) {
    BoundingBox r{std::max(a.min_x, b.min_x), std::max(a.min_y, b.min_y),
                  std::min(a.max_x, b.max_x), std::min(a.max_y, b.max_y)};
    if (r.min_x >= r.max_x || r.min_y >= r.max_y) {
        return std::nullopt;
    }
    return r;
}

double iou(BoundingBox const & a, BoundingBox const & b) {
    auto const inter = intersect(a, b);
    if (!inter) {
        return 0.0;
    }
    auto const i = box_area(*inter);
    auto const u = box_area(a) + box_area(b) - i;
    return static_cast<double>(i) / static_cast<double>(u);
}

BoundingBox scale_box(BoundingBox const & box, ImageSize from, ImageSize to) {
    if (!from.valid() || !to.valid()) {
        throw ValidationError("scale_box: frames must be non-empty");
    }
    if (!box.within(from)) {
        throw ValidationError("scale_box: box " + to_string(box) + " outside frame " +
                              to_string(from));
    }
    if (from == to) {
        return box;
    }
    auto const fx = static_cast<std::int64_t>(from.width);
    auto const fy = static_cast<std::int64_t>(from.height);
    auto const tx = static_cast<std::int64_t>(to.width);
    auto const ty = static_cast<std::int64_t>(to.height);
    return {static_cast<int>(floor_div(box.min_x * tx, fx)),
            static_cast<int>(floor_div(box.min_y * ty, fy)),
            static_cast<int>(ceil_div(box.max_x * tx, fx)),
            static_cast<int>(ceil_div(box.max_y * ty, fy))};
}

std::optional<BoundingBox> clip_box(BoundingBox const & box, ImageSize frame) {
    BoundingBox r{std::max(box.min_x, 0), std::max(box.min_y, 0),
                  std::min(box.max_x, frame.width), std::min(box.max_y, frame.height)};
    if (r.min_x >= r.max_x || r.min_y >= r.max_y) {
        return std::nullopt;
    }
    return r;
}

std::optional<BoundingBox> mask_bounds(BinaryMask const & mask) {
    int min_x = mask.width();
    int min_y = mask.height();
    int max_x = -1;
    int max_y = -1;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.at(x, y) != 0) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0) {
        return std::nullopt;
    }
    return BoundingBox{min_x, min_y, max_x + 1, max_y + 1};
}

std::int64_t count_foreground(BinaryMask const & mask) {
    return std::count_if(mask.data().begin(), mask.data().end(),
                         [](std::uint8_t v) { return v != 0; });
}

int PatchTransform::source_x(int px) const {
    return source_window.min_x +
           static_cast<int>(static_cast<std::int64_t>(px) * source_window.width() / patch_size.width);
}

int PatchTransform::source_y(int py) const {
    return source_window.min_y +
           static_cast<int>(static_cast<std::int64_t>(py) * source_window.height() /
                            patch_size.height);
}

int PatchTransform::patch_x(int sx) const {
    auto const local = static_cast<std::int64_t>(sx - source_window.min_x);
    return static_cast<int>((2 * local + 1) * patch_size.width / (2 * source_window.width()));
}

int PatchTransform::patch_y(int sy) const {
    auto const local = static_cast<std::int64_t>(sy - source_window.min_y);
    return static_cast<int>((2 * local + 1) * patch_size.height / (2 * source_window.height()));
}

Patch extract_patch(GrayImage const & image, BoundingBox const & window, ImageSize out) {
    if (!out.valid()) {
        throw ValidationError("extract_patch: output size must be positive");
    }
    if (!window.within(image.size())) {
        throw ValidationError("extract_patch: window " + to_string(window) +
                              " empty or outside image " + to_string(image.size()));
    }
    PatchTransform transform{window, out, Resampling::nearest};
    GrayImage pixels(out);
    for (int py = 0; py < out.height; ++py) {
        int const sy = transform.source_y(py);
        for (int px = 0; px < out.width; ++px) {
            pixels.at(px, py) = image.at(transform.source_x(px), sy);
        }
    }
    return {std::move(pixels), transform};
}

void reconstruct_into(BinaryMask & canvas, BinaryMask const & patch_mask,
                      PatchTransform const & transform) {
    if (patch_mask.size() != transform.patch_size) {
        throw ValidationError("reconstruct_mask: patch mask is " + to_string(patch_mask.size()) +
                              " but transform expects " + to_string(transform.patch_size));
    }
    if (!transform.source_window.within(canvas.size())) {
        throw ValidationError("reconstruct_mask: window " + to_string(transform.source_window) +
                              " does not fit canvas " + to_string(canvas.size()));
    }
    auto const & w = transform.source_window;
    for (int sy = w.min_y; sy < w.max_y; ++sy) {
        int const py = transform.patch_y(sy);
        for (int sx = w.min_x; sx < w.max_x; ++sx) {
            if (patch_mask.at(transform.patch_x(sx), py) != 0) {
                canvas.at(sx, sy) = 1;
            }
        }
    }
}

BinaryMask reconstruct_mask(BinaryMask const & patch_mask, PatchTransform const & transform,
                            ImageSize canvas) {
    BinaryMask out(canvas);
    reconstruct_into(out, patch_mask, transform);
    return out;
}

} // namespace msseg
