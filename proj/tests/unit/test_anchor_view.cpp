// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/anchor_view.hpp"
#include "splatedit/error.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace splatedit;

namespace {

Image halves(int size, double left, double right) {
    Image v(1, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            v.at(0, y, x) = x < size / 2 ? left : right;
        }
    }
    return v;
}

Image gray_rgb(const Image &v) {
    Image rgb(3, v.height(), v.width());
    for (int c = 0; c < 3; ++c) {
        std::copy(v.plane(0).begin(), v.plane(0).end(), rgb.plane(c).begin());
    }
    return rgb;
}

AnchorCandidate candidate(const Image &v) { return {Camera{}, gray_rgb(v), Image{}}; }

} // namespace

TEST(SampleRing, FourViewsAtQuarterTurns) {
    AzimuthRing ring;
    ring.count = 4;
    ring.radius = 2.0;
    ring.intrinsics = Intrinsics::from_fov(16, 16, 60.0);
    const auto cams = sample_ring(ring);
    ASSERT_EQ(cams.size(), 4u);
    const OrbitFrame frame = ring.frame();
    for (int k = 0; k < 4; ++k) {
        const auto coords = frame.coordinates(cams[k].center());
        EXPECT_NEAR(wrap_degrees(coords.azimuth_deg - 90.0 * k), 0.0, 1e-9);
        EXPECT_NEAR(coords.elevation_deg, 0.0, 1e-9);
        const Vec3 to_center = (ring.center - cams[k].center()).normalized();
        EXPECT_NEAR(cams[k].forward().dot(to_center), 1.0, 1e-6);
    }
}

TEST(SampleRing, HundredViewsSpacing) {
    AzimuthRing ring;
    ring.count = 100;
    ring.radius = 3.0;
    ring.elevation_deg = 20.0;
    ring.center = Vec3(0.5, -1.0, 0.2);
    ring.intrinsics = Intrinsics::from_fov(8, 8, 50.0);
    const auto cams = sample_ring(ring);
    const OrbitFrame frame = ring.frame();
    for (int k = 1; k < 100; ++k) {
        const double a = frame.coordinates(cams[k - 1].center()).azimuth_deg;
        const double b = frame.coordinates(cams[k].center()).azimuth_deg;
        EXPECT_NEAR(wrap_degrees(b - a), 3.6, 1e-9);
        const Vec3 to_center = (ring.center - cams[k].center()).normalized();
        EXPECT_NEAR(cams[k].forward().dot(to_center), 1.0, 1e-6);
    }
}

TEST(SampleRing, RejectsBrokenRings) {
    AzimuthRing ring;
    ring.intrinsics = Intrinsics::from_fov(8, 8, 50.0);
    ring.count = 1;
    EXPECT_THROW(sample_ring(ring), InvalidParameterError);
    ring.count = 4;
    ring.radius = 0.0;
    EXPECT_THROW(sample_ring(ring), InvalidParameterError);
    ring.radius = 1.0;
    ring.elevation_deg = 90.0; // looking straight down the up axis
    EXPECT_THROW(sample_ring(ring), InvalidParameterError);
}

TEST(ValueChannel, MaxRule) {
    Image rgb(3, 1, 2);
    rgb.at(0, 0, 0) = 0.2;
    rgb.at(1, 0, 0) = 0.8;
    rgb.at(2, 0, 0) = 0.5;
    const Image v = value_channel(rgb);
    EXPECT_EQ(v.at(0, 0, 0), 0.8);
    EXPECT_EQ(v.at(0, 0, 1), 0.0);

    std::mt19937_64 rng(3);
    const Image gray = splatedit::testing::random_image(rng, 1, 5, 7, 0.0, 1.0);
    EXPECT_EQ(value_channel(gray_rgb(gray)), gray);
    EXPECT_THROW(value_channel(gray), InvalidParameterError);
}

TEST(BrightnessRatio, Examples) {
    for (double r : default_rotation_set()) {
        EXPECT_DOUBLE_EQ(brightness_ratio(Image(1, 12, 12, 0.4), r), 0.5) << r;
    }
    const Image v = halves(12, 0.0, 1.0);
    EXPECT_EQ(brightness_ratio(v, 0.0), 0.0);
    EXPECT_EQ(brightness_ratio(v, 180.0), 1.0);
    EXPECT_EQ(brightness_ratio(Image(1, 6, 6, 0.0), 45.0), 0.5);
}

TEST(BrightnessRatio, CounterClockwiseMovesTopToLeft) {
    Image v(1, 10, 10);
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) {
            v.at(0, y, x) = y < 5 ? 1.0 : 0.0;
        }
    }
    EXPECT_DOUBLE_EQ(brightness_ratio(v, 0.0), 0.5);
    EXPECT_DOUBLE_EQ(brightness_ratio(v, 180.0), 0.5);
    EXPECT_EQ(brightness_ratio(v, 90.0), 1.0);
    EXPECT_EQ(brightness_ratio(v, 270.0), 0.0);
}

TEST(BrightnessRatio, OppositeRotationsComplement) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int size = 8 + 2 * (trial % 5);
        const Image v = splatedit::testing::random_image(rng, 1, size, size, 0.0, 1.0);
        for (double r : {0.0, 45.0, 90.0, 135.0}) {
            EXPECT_NEAR(brightness_ratio(v, r) + brightness_ratio(v, r + 180.0), 1.0, 1e-6)
                << "size " << size << " rotation " << r;
        }
    }
}

TEST(BrightnessRatio, OddWidthCenterColumnExcluded) {
    Image v(1, 3, 3, 0.0);
    for (int y = 0; y < 3; ++y) {
        v.at(0, y, 1) = 1.0; // only the center column is bright
        v.at(0, y, 2) = 0.5;
    }
    EXPECT_EQ(brightness_ratio(v, 0.0), 0.0);
}

TEST(BrightnessRatio, MaskAndDegenerateHalves) {
    const Image v = halves(8, 0.25, 0.75);
    Image mask(1, 8, 8, 0.0);
    EXPECT_THROW(brightness_ratio(v, 0.0, mask), DegenerateInputError);
    for (int y = 0; y < 8; ++y) {
        mask.at(0, y, 0) = 1.0;
    }
    EXPECT_THROW(brightness_ratio(v, 0.0, mask), DegenerateInputError);
    mask.at(0, 0, 7) = 1.0;
    EXPECT_DOUBLE_EQ(brightness_ratio(v, 0.0, mask), 0.25);
    EXPECT_THROW(brightness_ratio(v, 0.0, Image(1, 4, 4, 1.0)), InvalidParameterError);
}

TEST(ProposeAnchor, UniformViewsTieToFirst) {
    std::vector<AnchorCandidate> views(5, candidate(Image(1, 8, 8, 0.5)));
    const ViewScore s = propose_anchor(views);
    EXPECT_EQ(s.view_index, 0);
    EXPECT_EQ(s.contrast, 0.0);
    EXPECT_EQ(s.ratio, 0.5);
}

TEST(ProposeAnchor, PicksContrastedView) {
    std::vector<AnchorCandidate> views = {candidate(Image(1, 8, 8, 0.5)),
                                          candidate(halves(8, 0.0, 1.0))};
    const ViewScore right = propose_anchor(views);
    EXPECT_EQ(right.view_index, 1);
    EXPECT_EQ(right.contrast, 0.5);
    EXPECT_EQ(right.ratio, 0.0);
    EXPECT_EQ(right.best_rotation, 0.0);

    AvpOptions left;
    left.bright_side = BrightSide::Left;
    const ViewScore l = propose_anchor(views, left);
    EXPECT_EQ(l.view_index, 1);
    EXPECT_EQ(l.ratio, 1.0);
    EXPECT_EQ(l.best_rotation, 180.0);
}

TEST(ProposeAnchor, TopBottomLightingNeedsQuarterTurn) {
    Image v(1, 8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            v.at(0, y, x) = 0.1 + 0.1 * y;
        }
    }
    std::vector<AnchorCandidate> views = {candidate(Image(1, 8, 8, 0.3)), candidate(v)};
    const ViewScore s = propose_anchor(views);
    EXPECT_EQ(s.view_index, 1);
    EXPECT_EQ(s.best_rotation, 90.0); // bright bottom moves right
    EXPECT_LT(s.ratio, 0.5);
}

TEST(ProposeAnchor, BrightnessScaleInvariant) {
    std::mt19937_64 rng(5);
    std::vector<AnchorCandidate> views;
    for (int i = 0; i < 12; ++i) {
        views.push_back(candidate(splatedit::testing::random_image(rng, 1, 10, 10, 0.0, 1.0)));
    }
    const ViewScore base = propose_anchor(views);
    for (double k : {1.0, 0.5, 0.125}) {
        auto scaled = views;
        for (auto &c : scaled) {
            for (double &x : c.color.data()) {
                x *= k;
            }
        }
        const ViewScore s = propose_anchor(scaled);
        EXPECT_EQ(s.view_index, base.view_index) << k;
        EXPECT_NEAR(s.ratio, base.ratio, 1e-12);
    }
}

TEST(ProposeAnchor, ParallelMatchesSerial) {
    std::mt19937_64 rng(8);
    std::vector<AnchorCandidate> views;
    for (int i = 0; i < 9; ++i) {
        views.push_back(candidate(splatedit::testing::random_image(rng, 1, 9, 11, 0.0, 1.0)));
    }
    AvpOptions serial;
    serial.threads = 1;
    AvpOptions parallel;
    parallel.threads = 4;
    const AvpReport a = score_views(views, serial);
    const AvpReport b = score_views(views, parallel);
    ASSERT_EQ(a.views.size(), b.views.size());
    for (std::size_t i = 0; i < a.views.size(); ++i) {
        ASSERT_TRUE(a.views[i] && b.views[i]);
        EXPECT_EQ(a.views[i]->ratio, b.views[i]->ratio);
        EXPECT_EQ(a.views[i]->contrast, b.views[i]->contrast);
    }
    EXPECT_EQ(a.anchor.view_index, b.anchor.view_index);
}

TEST(ProposeAnchor, Errors) {
    std::vector<AnchorCandidate> one = {candidate(Image(1, 4, 4, 0.5))};
    EXPECT_THROW(propose_anchor(one), InvalidParameterError);
    std::vector<AnchorCandidate> masked(3, candidate(Image(1, 4, 4, 0.5)));
    for (auto &c : masked) {
        c.region_mask = Image(1, 4, 4, 0.0);
    }
    EXPECT_THROW(propose_anchor(masked), DegenerateInputError);
    masked[2].region_mask = Image(1, 4, 4, 1.0);
    const AvpReport r = score_views(masked);
    EXPECT_FALSE(r.views[0].has_value());
    EXPECT_EQ(r.anchor.view_index, 2);
}
