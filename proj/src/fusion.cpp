#include "msseg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msseg {

void ScaleDetectionSet::validate() const {
    if (!scale.valid()) {
        throw ValidationError("detection set has empty scale " + to_string(scale));
    }
    for (auto const & d : detections) {
        if (!d.box.within(scale)) {
            throw ValidationError("detection box " + to_string(d.box) + " outside scale " +
                                  to_string(scale));
        }
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
            throw ValidationError("detection confidence " + std::to_string(d.confidence) +
                                  " outside [0,1]");
        }
    }
}

std::int64_t quantize_confidence(double confidence) {
    return std::llround(confidence * static_cast<double>(kConfidenceUnits));
}

std::int64_t quantize_lambda(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ValidationError("lambda must be a finite non-negative number");
    }
    return std::llround(lambda * static_cast<double>(kLambdaUnits));
}

FusionMask::FusionMask(ImageSize size) : sums_(size, 0) {}

FusionMask::FusionMask(ImageSize size, std::vector<std::int64_t> sums, std::int64_t denominator)
    : sums_(size, 0), denominator_(denominator) {
    if (sums.size() != sums_.data().size()) {
        throw ValidationError("fusion mask data does not match its size");
    }
    sums_.data() = std::move(sums);
}

double FusionMask::value_of(std::int64_t sum) const {
    if (denominator_ == 0) {
        return 0.0;
    }
    return static_cast<double>(sum) / static_cast<double>(denominator_);
}

double FusionMask::value(int x, int y) const { return value_of(sums_.at(x, y)); }

bool FusionMask::passes(std::int64_t sum, std::int64_t lambda_units) const {
    if (sum <= 0) {
        return false;
    }
    auto const lhs = static_cast<__int128>(sum) * kLambdaUnits;
    auto const rhs = static_cast<__int128>(lambda_units) * denominator_;
    return lhs >= rhs;
}

bool FusionMask::all_zero() const {
    return std::all_of(sums_.data().begin(), sums_.data().end(),
                       [](std::int64_t v) { return v == 0; });
}

FusionMask build_fused_mask(std::vector<ScaleDetectionSet> const & sets, ImageSize native) {
    if (!native.valid()) {
        throw ValidationError("native frame must be non-empty");
    }
    if (sets.empty()) {
        throw ValidationError("fusion needs at least one scale set");
    }
    for (auto const & s : sets) {
        s.validate();
    }

    // Boxes are painted through a 2-D difference table and integrated once.
    int const w = native.width;
    int const h = native.height;
    std::vector<std::int64_t> diff(static_cast<std::size_t>(w + 1) * (h + 1), 0);
    auto cell = [&](int x, int y) -> std::int64_t & {
        return diff[static_cast<std::size_t>(y) * (w + 1) + x];
    };
    std::int64_t max_conf = 0;
    for (auto const & s : sets) {
        for (auto const & d : s.detections) {
            auto const c = quantize_confidence(d.confidence);
            max_conf = std::max(max_conf, c);
            auto const b = scale_box(d.box, s.scale, native);
            cell(b.min_x, b.min_y) += c;
            cell(b.max_x, b.min_y) -= c;
            cell(b.min_x, b.max_y) -= c;
            cell(b.max_x, b.max_y) += c;
        }
    }
    if (max_conf == 0) {
        return FusionMask(native);
    }

    std::vector<std::int64_t> sums(static_cast<std::size_t>(native.pixel_count()), 0);
    std::vector<std::int64_t> column(static_cast<std::size_t>(w), 0);
    for (int y = 0; y < h; ++y) {
        std::int64_t running = 0;
        for (int x = 0; x < w; ++x) {
            column[x] += cell(x, y);
            running += column[x];
            sums[static_cast<std::size_t>(y) * w + x] = running;
        }
    }
    auto const n = static_cast<std::int64_t>(sets.size());
    return FusionMask(native, std::move(sums), n * max_conf);
}

BinaryMask threshold_mask(FusionMask const & mask, double lambda) {
    auto const units = quantize_lambda(lambda);
    BinaryMask out(mask.size());
    for (int y = 0; y < mask.size().height; ++y) {
        for (int x = 0; x < mask.size().width; ++x) {
            out.at(x, y) = mask.passes(mask.sum(x, y), units) ? 1 : 0;
        }
    }
    return out;
}

namespace {

int find_root(std::vector<int> & parent, int i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

void unite(std::vector<int> & parent, int a, int b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a != b) {
        parent[std::max(a, b)] = std::min(a, b);
    }
}

} // namespace

ComponentLabels label_components(BinaryMask const & mask) {
    ComponentLabels result{Grid<int>(mask.size(), 0), 0};
    auto & labels = result.labels;
    std::vector<int> parent{0};
    int const w = mask.width();
    int const h = mask.height();

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask.at(x, y) == 0) {
                continue;
            }
            // Already-visited 8-neighbours: W, NW, N, NE.
            int current = 0;
            auto const visit = [&](int nx, int ny) {
                if (nx < 0 || nx >= w || ny < 0) {
                    return;
                }
                int const l = labels.at(nx, ny);
                if (l == 0) {
                    return;
                }
                if (current == 0) {
                    current = l;
                } else {
                    unite(parent, current, l);
                }
            };
            visit(x - 1, y);
            visit(x - 1, y - 1);
            visit(x, y - 1);
            visit(x + 1, y - 1);
            if (current == 0) {
                current = static_cast<int>(parent.size());
                parent.push_back(current);
            }
            labels.at(x, y) = current;
        }
    }

    // Renumber in raster order of first appearance.
    std::vector<int> final_label(parent.size(), 0);
    for (auto & l : labels.data()) {
        if (l == 0) {
            continue;
        }
        int const root = find_root(parent, l);
        if (final_label[root] == 0) {
            final_label[root] = ++result.count;
        }
        l = final_label[root];
    }
    return result;
}

std::vector<FusedCandidate> components_to_candidates(ComponentLabels const & labels,
                                                     FusionMask const & mask) {
    if (labels.labels.size() != mask.size()) {
        throw ValidationError("label grid and fusion mask differ in size");
    }
    std::vector<FusedCandidate> out(static_cast<std::size_t>(labels.count));
    std::vector<bool> seen(out.size(), false);
    for (int y = 0; y < mask.size().height; ++y) {
        for (int x = 0; x < mask.size().width; ++x) {
            int const l = labels.labels.at(x, y);
            if (l == 0) {
                continue;
            }
            auto & c = out[static_cast<std::size_t>(l - 1)];
            auto const s = mask.sum(x, y);
            if (!seen[l - 1]) {
                seen[l - 1] = true;
                c.component_id = l;
                c.box = {x, y, x + 1, y + 1};
                c.peak_sum = s;
                continue;
            }
            c.box.min_x = std::min(c.box.min_x, x);
            c.box.max_x = std::max(c.box.max_x, x + 1);
            c.box.max_y = y + 1;
            c.peak_sum = std::max(c.peak_sum, s);
        }
    }
    for (auto & c : out) {
        c.peak = mask.value_of(c.peak_sum);
    }
    std::sort(out.begin(), out.end(), [](FusedCandidate const & a, FusedCandidate const & b) {
        if (a.peak_sum != b.peak_sum) {
            return a.peak_sum > b.peak_sum;
        }
        if (a.box.min_y != b.box.min_y) {
            return a.box.min_y < b.box.min_y;
        }
        if (a.box.min_x != b.box.min_x) {
            return a.box.min_x < b.box.min_x;
        }
        return a.component_id < b.component_id;
    });
    return out;
}

std::vector<FusedCandidate> candidates_at(FusionMask const & mask, double lambda) {
    return components_to_candidates(label_components(threshold_mask(mask, lambda)), mask);
}

std::vector<FusedCandidate> msf(std::vector<ScaleDetectionSet> const & sets, ImageSize native,
                                double lambda) {
    return candidates_at(build_fused_mask(sets, native), lambda);
}

} // namespace msseg
