// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/error.hpp"
#include "splatedit/renderer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace splatedit;
using namespace splatedit::testing;

namespace {

GaussianSplat make_splat(const Vec3 &pos, double scale, double opacity, const Vec3 &color) {
    GaussianSplat s;
    s.position = pos;
    s.log_scale = Vec3::Constant(std::log(scale));
    s.opacity_logit = logit(opacity);
    s.color = color;
    return s;
}

} // namespace

TEST(Footprint, MatchesGaussianInsideAndVanishesAtSupport) {
    for (double m : {0.0, 0.5, 2.0, 6.0, 6.25}) {
        EXPECT_DOUBLE_EQ(footprint(m), std::exp(-0.5 * m));
    }
    EXPECT_EQ(footprint(kSupportRadius2), 0.0);
    EXPECT_EQ(footprint(20.0), 0.0);
    for (double m = 0.05; m < kSupportRadius2; m += 0.1) {
        const double h = 1e-6;
        const double fd = (footprint(m + h) - footprint(m - h)) / (2 * h);
        EXPECT_NEAR(footprint_derivative(m), fd, 1e-7) << "m=" << m;
        EXPECT_LE(footprint(m + 0.1), footprint(m));
    }
}

TEST(Project, OnAxisSplatLandsAtPrincipalPoint) {
    const Camera cam = axis_camera(32, 30.0);
    const auto ps = project(make_splat(Vec3(0, 0, 4), 0.1, 0.5, Vec3(1, 0, 0)), cam);
    ASSERT_TRUE(ps.has_value());
    EXPECT_NEAR(ps->mean2d.x(), 16.0, 1e-12);
    EXPECT_NEAR(ps->mean2d.y(), 16.0, 1e-12);
    EXPECT_DOUBLE_EQ(ps->depth, 4.0);
    // Isotropic: (f s / z)^2 + low-pass on the diagonal.
    const double var = std::pow(30.0 * 0.1 / 4.0, 2) + kLowPassVariance;
    EXPECT_NEAR(ps->cov2d(0, 0), var, 1e-12);
    EXPECT_NEAR(ps->cov2d(1, 1), var, 1e-12);
    EXPECT_NEAR(ps->cov2d(0, 1), 0.0, 1e-12);
}

TEST(Project, OffAxisCovarianceMatchesNumericJacobian) {
    const Camera cam = axis_camera(64, 50.0);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        GaussianSplat s = make_splat(Vec3(0.3 * trial / 20.0, -0.5, 3.0 + 0.1 * trial), 0.2, 0.5,
                                     Vec3::Constant(0.5));
        s.rotation = random_unit_quaternion(rng);
        s.log_scale = Vec3(std::log(0.1), std::log(0.2), std::log(0.05));
        const auto ps = project(s, cam);
        ASSERT_TRUE(ps.has_value());

        // Numeric Jacobian of the pinhole map at the center.
        auto pix = [&](const Vec3 &p) {
            return Vec2(50.0 * p.x() / p.z() + 32.0, 50.0 * p.y() / p.z() + 32.0);
        };
        Eigen::Matrix<double, 2, 3> j;
        for (int a = 0; a < 3; ++a) {
            Vec3 d = Vec3::Zero();
            d[a] = 1e-6;
            j.col(a) = (pix(s.position + d) - pix(s.position - d)) / 2e-6;
        }
        const Mat2 oracle = j * s.covariance() * j.transpose() +
                            kLowPassVariance * Mat2::Identity();
        EXPECT_LT((ps->cov2d - oracle).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_LT((ps->conic * ps->cov2d - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Project, BehindCameraIsCulled) {
    const Camera cam = axis_camera(32, 30.0);
    EXPECT_FALSE(project(make_splat(Vec3(0, 0, -1), 0.1, 0.5, Vec3::Ones()), cam).has_value());
    EXPECT_FALSE(project(make_splat(Vec3(0, 0, 0.05), 0.1, 0.5, Vec3::Ones()), cam).has_value());
    EXPECT_FALSE(project(make_splat(Vec3(100, 0, 1), 0.01, 0.5, Vec3::Ones()), cam).has_value());
}

TEST(Render, EmptySceneIsBackground) {
    const Camera cam = axis_camera(20, 20.0);
    const RenderOutput out = render(std::span<const GaussianSplat>{}, cam, Vec3(0.2, 0.4, 0.6));
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 20; ++x) {
            EXPECT_EQ(out.color.at(0, y, x), 0.2);
            EXPECT_EQ(out.color.at(1, y, x), 0.4);
            EXPECT_EQ(out.color.at(2, y, x), 0.6);
            EXPECT_EQ(out.depth.at(0, y, x), 0.0);
            EXPECT_EQ(out.mask.at(0, y, x), 0.0);
        }
    }
    const Image far = out.normalized_depth(cam.far);
    EXPECT_EQ(far.at(0, 3, 3), cam.far);
}

TEST(Render, LargeOpaqueSplatCoversCenter) {
    const Camera cam = axis_camera(16, 16.0);
    const std::vector<GaussianSplat> splats = {
        make_splat(Vec3(0, 0, 2), 2.0, 0.999999, Vec3(1, 0, 0))};
    const RenderOutput out = render(splats, cam, Vec3(0, 0, 1));
    // sigma clamps to 0.99 at the center.
    EXPECT_NEAR(out.mask.at(0, 8, 8), kMaxSigma, 1e-3);
    EXPECT_NEAR(out.color.at(0, 8, 8), kMaxSigma, 1e-3);
    EXPECT_NEAR(out.color.at(2, 8, 8), 1.0 - kMaxSigma, 1e-3);
    EXPECT_NEAR(out.normalized_depth(cam.far).at(0, 8, 8), 2.0, 1e-9);
}

TEST(Render, TwoSplatCompositingMatchesClosedForm) {
    const Camera cam = axis_camera(16, 16.0);
    const Vec3 c1(0.9, 0.1, 0.2), c2(0.1, 0.8, 0.3);
    const std::vector<GaussianSplat> splats = {make_splat(Vec3(0, 0, 5), 0.5, 0.6, c2),
                                               make_splat(Vec3(0, 0, 3), 0.3, 0.4, c1)};
    const RenderOutput out = render(splats, cam, Vec3::Zero(), {.threads = 1});

    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            double a = 0.0, b = 0.0;
            if (auto p = project(splats[1], cam)) {
                const Vec2 d(x + 0.5 - p->mean2d.x(), y + 0.5 - p->mean2d.y());
                a = std::min(p->opacity * footprint(d.dot(p->conic * d)), kMaxSigma);
            }
            if (auto p = project(splats[0], cam)) {
                const Vec2 d(x + 0.5 - p->mean2d.x(), y + 0.5 - p->mean2d.y());
                b = std::min(p->opacity * footprint(d.dot(p->conic * d)), kMaxSigma);
            }
            for (int c = 0; c < 3; ++c) {
                EXPECT_NEAR(out.color.at(c, y, x), c1[c] * a + c2[c] * b * (1 - a), 1e-12);
            }
            EXPECT_NEAR(out.mask.at(0, y, x), a + b * (1 - a), 1e-12);
            EXPECT_NEAR(out.depth.at(0, y, x), 3.0 * a + 5.0 * b * (1 - a), 1e-12);
        }
    }
}

TEST(Render, MaskIsMonotoneInOpacity) {
    const Camera cam = axis_camera(16, 16.0);
    std::vector<GaussianSplat> splats = {make_splat(Vec3(0.1, 0, 4), 0.4, 0.2, Vec3::Ones()),
                                         make_splat(Vec3(-0.2, 0.1, 5), 0.5, 0.3, Vec3::Ones())};
    const RenderOutput low = render(splats, cam, Vec3::Zero());
    splats[0].opacity_logit = logit(0.5);
    const RenderOutput high = render(splats, cam, Vec3::Zero());
    for (std::size_t i = 0; i < low.mask.size(); ++i) {
        EXPECT_GE(high.mask.data()[i], low.mask.data()[i]);
        EXPECT_GE(low.mask.data()[i], 0.0);
        EXPECT_LE(high.mask.data()[i], 1.0);
    }
}

TEST(Render, SingleDepthLayerGivesDepthTimesMask) {
    const Camera cam = axis_camera(16, 16.0);
    std::vector<GaussianSplat> splats;
    for (int i = 0; i < 5; ++i) {
        // Same camera z for every splat: D = z * m exactly.
        splats.push_back(make_splat(Vec3(0.3 * (i - 2), 0.1 * i, 4.0), 0.3, 0.5, Vec3::Ones()));
    }
    const RenderOutput out = render(splats, cam, Vec3::Zero());
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
        EXPECT_NEAR(out.depth.data()[i], 4.0 * out.mask.data()[i], 1e-12);
    }
}

TEST(Render, ParallelMatchesSerialBitwise) {
    std::mt19937_64 rng(21);
    const auto splats = random_gradient_scene(rng, 60, 0.6);
    Camera cam = axis_camera(70, 70 / 1.2);
    const RenderOutput serial = render(splats, cam, Vec3(0.1, 0.2, 0.3), {.threads = 1});
    const RenderOutput parallel = render(splats, cam, Vec3(0.1, 0.2, 0.3), {.threads = 4});
    EXPECT_EQ(serial.color, parallel.color);
    EXPECT_EQ(serial.depth, parallel.depth);
    EXPECT_EQ(serial.mask, parallel.mask);

    const Image gc = random_image(rng, 3, 70, 70);
    const auto g1 = render_backward(splats, cam, serial, gc, Image{}, Image{}, {.threads = 1});
    const auto g4 = render_backward(splats, cam, parallel, gc, Image{}, Image{}, {.threads = 4});
    for (std::size_t i = 0; i < splats.size(); ++i) {
        for (int k = 0; k < kParamsPerSplat; ++k) {
            EXPECT_EQ(grad_entry(g1[i], k), grad_entry(g4[i], k));
        }
    }
}

TEST(Render, MergedSceneRendersLikeConcatenation) {
    std::mt19937_64 rng(8);
    auto a = random_gradient_scene(rng, 6, 0.5);
    auto b = random_gradient_scene(rng, 4, 0.5);
    const Scene sa = Scene::uniform(a, SplatTag::Background, bounds_of(a));
    const Scene sb = Scene::uniform(b, SplatTag::Object, bounds_of(b));
    std::vector<GaussianSplat> all = a;
    all.insert(all.end(), b.begin(), b.end());
    const Camera cam = axis_camera(24, 24.0);
    EXPECT_EQ(render(merge_scenes(sa, sb), cam, Vec3::Zero()).color,
              render(all, cam, Vec3::Zero()).color);
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradient) {
    std::mt19937_64 rng(2);
    const auto splats = random_gradient_scene(rng, 8, 0.5);
    const Camera cam = axis_camera(16, 16.0);
    const RenderOutput out = render(splats, cam, Vec3::Zero());
    const auto grads = render_backward(splats, cam, out, Image(3, 16, 16), Image(1, 16, 16),
                                       Image(1, 16, 16));
    for (const auto &g : grads) {
        for (int k = 0; k < kParamsPerSplat; ++k) {
            EXPECT_EQ(grad_entry(g, k), 0.0);
        }
    }
}

TEST(RenderBackward, SingleSplatColorGradientIsAlphaSum) {
    const Camera cam = axis_camera(16, 16.0);
    const std::vector<GaussianSplat> splats = {
        make_splat(Vec3(0, 0, 4), 0.4, 0.5, Vec3(0.3, 0.5, 0.7))};
    const RenderOutput out = render(splats, cam, Vec3::Zero());
    Image gc(3, 16, 16);
    for (int x = 0; x < 16; ++x) {
        for (int y = 0; y < 16; ++y) {
            gc.at(1, y, x) = 1.0;
        }
    }
    const auto grads = render_backward(splats, cam, out, gc, Image{}, Image{});
    double mask_sum = 0.0;
    for (double v : out.mask.data()) {
        mask_sum += v;
    }
    EXPECT_NEAR(grads[0].color[1], mask_sum, 1e-10);
    EXPECT_EQ(grads[0].color[0], 0.0);
    EXPECT_EQ(grads[0].color[2], 0.0);
}

TEST(RenderBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(42);
    const int size = 16;
    const Camera cam = axis_camera(size, size / 1.0);
    for (int trial = 0; trial < 3; ++trial) {
        const auto splats = random_gradient_scene(rng, 10, 0.5);
        const Vec3 bg(0.2, 0.3, 0.1);
        const Image gc = random_image(rng, 3, size, size);
        const Image gd = random_image(rng, 1, size, size);
        const Image gm = random_image(rng, 1, size, size);
        const RenderOutput out = render(splats, cam, bg, {.threads = 1});
        const auto analytic = render_backward(splats, cam, out, gc, gd, gm, {.threads = 1});
        const auto numeric = finite_difference_gradient(splats, cam, bg, gc, gd, gm, 1e-6);
        const auto cmp = compare_gradients(analytic, numeric, 1e-3, 1e-6);
        EXPECT_EQ(cmp.failures, 0) << "worst relative error " << cmp.worst_relative;
    }
}

TEST(RenderBackward, ShapeMismatchThrows) {
    const Camera cam = axis_camera(16, 16.0);
    const RenderOutput out = render(std::span<const GaussianSplat>{}, cam, Vec3::Zero());
    EXPECT_THROW(render_backward(std::span<const GaussianSplat>{}, cam, out, Image(3, 8, 8),
                                 Image{}, Image{}),
                 InvalidParameterError);
}

TEST(ProjectBoxMask, CoversProjectedBox) {
    const Camera cam = axis_camera(32, 32.0);
    const Box box = Box::from_center(Vec3(0, 0, 4), Vec3(1, 1, 1));
    const Image mask = project_box_mask(box, cam);
    EXPECT_EQ(mask.at(0, 16, 16), 1.0);
    EXPECT_EQ(mask.at(0, 0, 0), 0.0);
    // Near face spans 32 * 0.5 / 3.5 ~ 4.6 px either side of the center.
    EXPECT_EQ(mask.at(0, 16, 16 + 4), 1.0);
    EXPECT_EQ(mask.at(0, 16, 16 + 6), 0.0);

    const Box around = Box::from_center(Vec3::Zero(), Vec3(2, 2, 2));
    const Image full = project_box_mask(around, cam);
    EXPECT_EQ(mean(full), 1.0);
}
