#include "msseg/detections_io.hpp"
#include "msseg/fusion.hpp"
#include "msseg/rng.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace msseg;

namespace {

std::vector<ImageSize> const kFiveScales{{160, 320}, {256, 512}, {320, 640}, {416, 832}, {480, 960}};
ImageSize const kNative{1024, 2048};

// A native box aligned to multiples of 32 maps exactly onto every default scale.
BoundingBox at_scale(BoundingBox native_box, ImageSize scale) {
    return scale_box(native_box, kNative, scale);
}

std::vector<ScaleDetectionSet> agreeing_sets(BoundingBox native_box, double c, int present) {
    std::vector<ScaleDetectionSet> sets;
    for (std::size_t i = 0; i < kFiveScales.size(); ++i) {
        ScaleDetectionSet s{kFiveScales[i], {}};
        if (static_cast<int>(i) < present) {
            s.detections.push_back({at_scale(native_box, kFiveScales[i]), c});
        }
        sets.push_back(s);
    }
    return sets;
}

std::vector<ScaleDetectionSet> random_instance(Rng & rng, ImageSize & native) {
    native = {static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64))};
    auto const n_scales = rng.uniform_int(1, 4);
    std::vector<ScaleDetectionSet> sets;
    for (std::int64_t s = 0; s < n_scales; ++s) {
        ImageSize const sz{static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64))};
        ScaleDetectionSet set{sz, {}};
        auto const n_boxes = rng.uniform_int(0, 3);
        for (std::int64_t b = 0; b < n_boxes; ++b) {
            int const x0 = static_cast<int>(rng.uniform_int(0, sz.width - 1));
            int const y0 = static_cast<int>(rng.uniform_int(0, sz.height - 1));
            BoundingBox const box{x0, y0, static_cast<int>(rng.uniform_int(x0 + 1, sz.width)),
                                  static_cast<int>(rng.uniform_int(y0 + 1, sz.height))};
            // Coarse confidences make exact ties common.
            double const c = rng.bernoulli(0.5) ? static_cast<double>(rng.uniform_int(0, 10)) / 10.0
                                                : rng.uniform();
            set.detections.push_back({box, c});
        }
        sets.push_back(set);
    }
    return sets;
}

} // namespace

TEST(BuildFusedMask, ConsensusIsExactlyOne) {
    BoundingBox const box{320, 640, 512, 896};
    auto const mask = build_fused_mask(agreeing_sets(box, 0.73, 5), kNative);
    EXPECT_EQ(mask.value(400, 700), 1.0);
    EXPECT_EQ(mask.value(319, 700), 0.0);
    EXPECT_EQ(mask.value(512, 700), 0.0);
    EXPECT_EQ(mask.sum(320, 640), mask.denominator());
}

TEST(BuildFusedMask, SingleScaleGivesOneFifth) {
    BoundingBox const box{320, 640, 512, 896};
    auto const mask = build_fused_mask(agreeing_sets(box, 0.9, 1), kNative);
    EXPECT_DOUBLE_EQ(mask.value(400, 700), 0.2);
}

TEST(BuildFusedMask, NoDetectionsIsAllZero) {
    std::vector<ScaleDetectionSet> sets;
    for (auto const & s : kFiveScales) {
        sets.push_back({s, {}});
    }
    auto const mask = build_fused_mask(sets, kNative);
    EXPECT_TRUE(mask.all_zero());
    EXPECT_TRUE(msf(sets, kNative, 0.0).empty());
}

TEST(BuildFusedMask, ZeroConfidenceDetectionsAreAllZero) {
    std::vector<ScaleDetectionSet> sets{{{10, 10}, {{{0, 0, 5, 5}, 0.0}}}};
    auto const mask = build_fused_mask(sets, {10, 10});
    EXPECT_TRUE(mask.all_zero());
    EXPECT_TRUE(msf(sets, {10, 10}, 0.0).empty());
}

TEST(BuildFusedMask, RejectsInvalidInput) {
    EXPECT_THROW(build_fused_mask({}, {10, 10}), ValidationError);
    std::vector<ScaleDetectionSet> outside{{{10, 10}, {{{0, 0, 11, 5}, 0.5}}}};
    EXPECT_THROW(build_fused_mask(outside, {10, 10}), ValidationError);
    std::vector<ScaleDetectionSet> bad_conf{{{10, 10}, {{{0, 0, 5, 5}, 1.5}}}};
    EXPECT_THROW(build_fused_mask(bad_conf, {10, 10}), ValidationError);
}

TEST(BuildFusedMask, OverlapsMayExceedOne) {
    std::vector<ScaleDetectionSet> sets{{{10, 10}, {{{0, 0, 6, 6}, 1.0}, {{3, 3, 9, 9}, 1.0}}}};
    auto const mask = build_fused_mask(sets, {10, 10});
    EXPECT_EQ(mask.value(4, 4), 2.0);
    EXPECT_EQ(msf(sets, {10, 10}, 1.5).size(), 1u);
}

TEST(ThresholdMask, Examples) {
    BoundingBox const box{320, 640, 512, 896};
    auto const single = build_fused_mask(agreeing_sets(box, 0.9, 1), kNative);
    EXPECT_EQ(count_foreground(threshold_mask(single, 0.6)), 0);

    auto const all = build_fused_mask(agreeing_sets(box, 0.9, 5), kNative);
    auto const kept = threshold_mask(all, 0.6);
    EXPECT_EQ(count_foreground(kept), box_area(box));
    EXPECT_EQ(*mask_bounds(kept), box);
}

TEST(ThresholdMask, LambdaZeroKeepsUnionOfBoxes) {
    std::vector<ScaleDetectionSet> sets{{{20, 20}, {{{0, 0, 4, 4}, 0.1}}},
                                        {{20, 20}, {{{10, 10, 20, 12}, 0.9}}}};
    auto const kept = threshold_mask(build_fused_mask(sets, {20, 20}), 0.0);
    EXPECT_EQ(count_foreground(kept), 16 + 20);
    EXPECT_THROW(threshold_mask(build_fused_mask(sets, {20, 20}), -0.1), ValidationError);
}

TEST(LabelComponents, Examples) {
    BinaryMask empty({8, 8});
    EXPECT_EQ(label_components(empty).count, 0);

    BinaryMask two({12, 12});
    for (int y = 1; y < 4; ++y) {
        for (int x = 1; x < 4; ++x) {
            two.at(x, y) = 1;
            two.at(x + 6, y + 6) = 1;
        }
    }
    auto const l2 = label_components(two);
    EXPECT_EQ(l2.count, 2);
    EXPECT_EQ(l2.labels.at(1, 1), 1);
    EXPECT_EQ(l2.labels.at(7, 7), 2);

    BinaryMask corner({6, 6});
    corner.at(0, 0) = corner.at(1, 0) = corner.at(0, 1) = corner.at(1, 1) = 1;
    corner.at(2, 2) = corner.at(3, 2) = corner.at(2, 3) = corner.at(3, 3) = 1;
    EXPECT_EQ(label_components(corner).count, 1);
}

TEST(LabelComponents, UShapeMergesLabels) {
    // Two arms discovered separately on the first row, joined at the bottom.
    BinaryMask u({5, 4});
    for (int y = 0; y < 4; ++y) {
        u.at(0, y) = u.at(4, y) = 1;
    }
    for (int x = 0; x < 5; ++x) {
        u.at(x, 3) = 1;
    }
    auto const l = label_components(u);
    EXPECT_EQ(l.count, 1);
    EXPECT_EQ(l.labels.at(4, 0), 1);
}

TEST(ComponentsToCandidates, Examples) {
    FusionMask const zero({30, 30});
    EXPECT_TRUE(components_to_candidates(label_components(BinaryMask({30, 30})), zero).empty());

    // Peaks 0.7 (top-left) and 0.9 (bottom-right): ordered by peak.
    std::vector<ScaleDetectionSet> sets{
        {{40, 40}, {{{20, 20, 30, 30}, 0.7}, {{32, 32, 36, 36}, 0.9}}}};
    auto const cands = msf(sets, {40, 40}, 0.0);
    ASSERT_EQ(cands.size(), 2u);
    EXPECT_EQ(cands[0].box, (BoundingBox{32, 32, 36, 36}));
    EXPECT_DOUBLE_EQ(cands[0].peak, 0.9 / 0.9);
    EXPECT_EQ(cands[1].box, (BoundingBox{20, 20, 30, 30}));
    EXPECT_DOUBLE_EQ(cands[1].peak, 0.7 / 0.9);
}

TEST(Msf, MajorityVotingExamples) {
    BoundingBox const box{320, 640, 512, 896};
    auto const five = msf(agreeing_sets(box, 0.8, 5), kNative, 0.6);
    ASSERT_EQ(five.size(), 1u);
    EXPECT_EQ(five[0].box, box);
    EXPECT_EQ(five[0].peak, 1.0);

    EXPECT_TRUE(msf(agreeing_sets(box, 0.8, 2), kNative, 0.6).empty());

    // 3 of 5 lands exactly on the threshold and must be kept.
    for (double c : {0.7, 0.3, 0.9, 0.1, 1.0}) {
        auto const three = msf(agreeing_sets(box, c, 3), kNative, 0.6);
        ASSERT_EQ(three.size(), 1u) << c;
        EXPECT_EQ(three[0].box, box);
    }
}

TEST(Msf, MatchesBruteForceOracle) {
    Rng rng(2024);
    for (int i = 0; i < 300; ++i) {
        ImageSize native;
        auto const sets = random_instance(rng, native);
        double const lambda = rng.bernoulli(0.3) ? static_cast<double>(rng.uniform_int(0, 10)) / 10.0
                                                 : rng.uniform(0.0, 1.2);
        auto const got = msf(sets, native, lambda);
        auto const want = oracle::brute_force_msf(sets, native, lambda);
        ASSERT_EQ(got.size(), want.size()) << "instance " << i;
        for (std::size_t k = 0; k < got.size(); ++k) {
            EXPECT_EQ(got[k].box, want[k].box) << "instance " << i;
            auto const & p = want[k].peak;
            EXPECT_DOUBLE_EQ(got[k].peak, static_cast<double>(p.numerator()) /
                                              static_cast<double>(p.denominator()));
        }
    }
}

TEST(Msf, LambdaMonotonicity) {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        ImageSize native;
        auto const sets = random_instance(rng, native);
        auto const mask = build_fused_mask(sets, native);
        double const l1 = rng.uniform(0.0, 1.0);
        double const l2 = l1 + rng.uniform(0.0, 0.5);
        auto const k1 = threshold_mask(mask, l1);
        auto const k2 = threshold_mask(mask, l2);
        for (std::size_t p = 0; p < k1.data().size(); ++p) {
            ASSERT_LE(k2.data()[p], k1.data()[p]);
        }
        auto const c1 = candidates_at(mask, l1);
        for (auto const & c : candidates_at(mask, l2)) {
            EXPECT_TRUE(std::any_of(c1.begin(), c1.end(),
                                    [&](FusedCandidate const & o) { return o.box.contains(c.box); }));
        }
    }
}

TEST(Msf, PermutationInvariance) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        ImageSize native;
        auto sets = random_instance(rng, native);
        auto const base = build_fused_mask(sets, native);
        std::reverse(sets.begin(), sets.end());
        for (auto & s : sets) {
            std::reverse(s.detections.begin(), s.detections.end());
        }
        EXPECT_EQ(build_fused_mask(sets, native), base);
    }
}

TEST(Msf, ConsensusNormalisesToOneForAnyScaleCount) {
    Rng rng(8);
    for (int n = 1; n <= 6; ++n) {
        double const c = rng.uniform(0.01, 1.0);
        std::vector<ScaleDetectionSet> sets;
        for (int i = 0; i < n; ++i) {
            ImageSize const s{32 * (i + 1), 32 * (i + 1)};
            sets.push_back({s, {{scale_box({64, 32, 160, 128}, {256, 256}, s), c}}});
        }
        auto const mask = build_fused_mask(sets, {256, 256});
        EXPECT_EQ(mask.value(100, 100), 1.0) << n;
    }
}

TEST(Msf, PerPixelBoundWithOneBoxPerScale) {
    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
        ImageSize native;
        auto sets = random_instance(rng, native);
        for (auto & s : sets) {
            if (s.detections.size() > 1) {
                s.detections.resize(1);
            }
        }
        auto const mask = build_fused_mask(sets, native);
        for (int y = 0; y < native.height; ++y) {
            for (int x = 0; x < native.width; ++x) {
                ASSERT_LE(mask.value(x, y), 1.0);
            }
        }
    }
}

TEST(DetectionsJsonl, RoundTripAndDuplicates) {
    std::vector<DetectionRecord> records{
        {"a", {{160, 320}, {{{1, 2, 3, 4}, 0.25}, {{5, 6, 7, 8}, 0.5}}}},
        {"a", {{256, 512}, {}}},
        {"b", {{160, 320}, {{{0, 0, 160, 320}, 1.0}}}},
    };
    std::ostringstream out;
    for (auto const & r : records) {
        out << detection_record_line(r) << '\n';
    }
    std::istringstream in(out.str());
    auto const parsed = parse_detections_jsonl(in);
    ASSERT_EQ(parsed.size(), records.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        EXPECT_EQ(parsed[i].image_id, records[i].image_id);
        EXPECT_EQ(parsed[i].set.scale, records[i].set.scale);
        ASSERT_EQ(parsed[i].set.detections.size(), records[i].set.detections.size());
        for (std::size_t k = 0; k < parsed[i].set.detections.size(); ++k) {
            EXPECT_EQ(parsed[i].set.detections[k].box, records[i].set.detections[k].box);
            EXPECT_EQ(parsed[i].set.detections[k].confidence, records[i].set.detections[k].confidence);
        }
    }
    auto const index = index_detections(parsed);
    EXPECT_EQ(index.at("a").size(), 2u);

    auto dup = parsed;
    dup.push_back(parsed[0]);
    EXPECT_THROW(index_detections(dup), ValidationError);

    std::istringstream bad(R"({"image_id":"x","scale_w":10,"scale_h":10,"boxes":[{"min_x":0}]})");
    EXPECT_THROW(parse_detections_jsonl(bad), ValidationError);
}

TEST(DetectionsJsonl, FusedScoresAboveOneAreReadable) {
    std::istringstream fused(
        R"({"image_id":"x","scale_w":10,"scale_h":10,"boxes":[{"min_x":0,"min_y":0,"max_x":4,"max_y":4,"score":1.2}]})");
    auto const parsed = parse_detections_jsonl(fused);
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0].set.detections[0].confidence, 1.2);
    // Fusion itself still insists on [0,1].
    EXPECT_THROW(msf({parsed[0].set}, {10, 10}, 0.5), ValidationError);

    std::istringstream negative(
        R"({"image_id":"x","scale_w":10,"scale_h":10,"boxes":[{"min_x":0,"min_y":0,"max_x":4,"max_y":4,"score":-0.1}]})");
    EXPECT_THROW(parse_detections_jsonl(negative), ValidationError);
    std::istringstream outside(
        R"({"image_id":"x","scale_w":10,"scale_h":10,"boxes":[{"min_x":0,"min_y":0,"max_x":11,"max_y":4,"score":0.5}]})");
    EXPECT_THROW(parse_detections_jsonl(outside), ValidationError);
}
