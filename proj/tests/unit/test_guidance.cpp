// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/error.hpp"
#include "splatedit/guidance.hpp"
#include "splatedit/remote_prior.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <future>
#include <mutex>
#include <random>

using namespace splatedit;
using splatedit::testing::random_image;

namespace {

double cosine(const Image &a, const Image &b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a.data()[i] * b.data()[i];
        aa += a.data()[i] * a.data()[i];
        bb += b.data()[i] * b.data()[i];
    }
    return ab / std::sqrt(aa * bb);
}

Image difference(const Image &a, const Image &b) {
    Image d = a;
    for (std::size_t i = 0; i < d.size(); ++i) {
        d.data()[i] -= b.data()[i];
    }
    return d;
}

double max_abs(const Image &a) {
    double m = 0.0;
    for (double v : a.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

/// Predicts zeros; records what it was called with.
class RecordingPrior final : public DiffusionPrior {
  public:
    explicit RecordingPrior(NoiseSchedule schedule, LatentCodec codec = LatentCodec::identity())
        : schedule_(std::move(schedule)), codec_(std::move(codec)) {}

    const NoiseSchedule &schedule() const override { return schedule_; }
    const LatentCodec &codec() const override { return codec_; }
    Image predict_noise(const Image &x_t, int, const ConditionBundle &cond) const override {
        std::lock_guard lock(mutex_);
        calls.push_back({x_t, cond});
        return Image(codec_.latent_channels(), x_t.height(), x_t.width());
    }

    struct Call {
        Image x_t;
        ConditionBundle cond;
    };
    mutable std::vector<Call> calls;

  private:
    NoiseSchedule schedule_;
    LatentCodec codec_;
    mutable std::mutex mutex_;
};

} // namespace

TEST(NoiseSchedule, ScaledLinearTable) {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    ASSERT_EQ(s.size(), 1000);
    // Independent evaluation of the sqrt-linear beta table.
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) {
        const double r = std::sqrt(0.00085) + (std::sqrt(0.012) - std::sqrt(0.00085)) * t / 999.0;
        prod *= 1.0 - r * r;
        EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12);
    }
    EXPECT_THROW(s.alpha_bar(1000), InvalidParameterError);
    EXPECT_THROW(s.alpha_bar(-1), InvalidParameterError);
    EXPECT_THROW(NoiseSchedule({0.5, 0.0}), InvalidParameterError);
}

TEST(AddNoise, Examples) {
    std::mt19937_64 rng(1);
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const Image x0 = random_image(rng, 3, 4, 5);
    const Image x_t = add_noise(x0, 500, Image(3, 4, 5), s);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        EXPECT_DOUBLE_EQ(x_t.data()[i], std::sqrt(s.alpha_bar(500)) * x0.data()[i]);
    }
    const NoiseSchedule ones({1.0, 1.0});
    EXPECT_EQ(add_noise(x0, 1, random_image(rng, 3, 4, 5), ones), x0);
    EXPECT_THROW(add_noise(x0, 1000, x0, s), InvalidParameterError);
    EXPECT_THROW(add_noise(x0, 3, Image(1, 4, 5), s), InvalidParameterError);
}

TEST(AddNoise, VarianceMatchesSchedule) {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const int t = 400;
    const double a = s.alpha_bar(t);
    std::mt19937_64 rng(42);
    std::normal_distribution<double> n(0.0, 1.0);
    const double sigma0 = 0.7;
    const int samples = 100000;
    Image x0(1, 1, samples);
    Image eps(1, 1, samples);
    for (int i = 0; i < samples; ++i) {
        x0.data()[i] = sigma0 * n(rng);
        eps.data()[i] = n(rng);
    }
    const Image x_t = add_noise(x0, t, eps, s);
    double m = 0.0, sq = 0.0;
    for (double v : x_t.data()) {
        m += v;
        sq += v * v;
    }
    m /= samples;
    const double var = sq / samples - m * m;
    const double expected = a * sigma0 * sigma0 + (1.0 - a);
    EXPECT_NEAR(var / expected, 1.0, 0.01);
}

TEST(CfgCombine, Identities) {
    std::mt19937_64 rng(2);
    const Image a = random_image(rng, 4, 3, 3);
    const Image b = random_image(rng, 4, 3, 3);
    EXPECT_EQ(cfg_combine(a, b, 0.0), a);
    for (double s : {0.5, 7.5, 100.0}) {
        EXPECT_EQ(cfg_combine(a, a, s), a);
    }
    const Image r = cfg_combine(Image(1, 2, 2, 1.0), Image(1, 2, 2, 0.0), 7.5);
    for (double v : r.data()) {
        EXPECT_EQ(v, 8.5);
    }
    EXPECT_THROW(cfg_combine(a, Image(3, 3, 3), 1.0), InvalidParameterError);
}

TEST(InvertDepth, Examples) {
    Image d(1, 1, 2);
    d.data() = {2.0, 6.0};
    const Image mask(1, 1, 2, 1.0);
    const Image inv = invert_depth(d, mask);
    EXPECT_EQ(inv.data()[0], 1.0);
    EXPECT_EQ(inv.data()[1], 0.0);

    const Image c = invert_depth(Image(1, 3, 3, 4.2), Image(1, 3, 3, 1.0));
    for (double v : c.data()) {
        EXPECT_EQ(v, 0.5);
    }
    EXPECT_THROW(invert_depth(d, Image(1, 1, 2, 0.0)), DegenerateInputError);

    std::mt19937_64 rng(3);
    const Image r = invert_depth(random_image(rng, 1, 9, 7, 1.0, 5.0), Image(1, 9, 7, 1.0));
    EXPECT_EQ(*std::min_element(r.data().begin(), r.data().end()), 0.0);
    EXPECT_EQ(*std::max_element(r.data().begin(), r.data().end()), 1.0);

    Image partial(1, 1, 3, 1.0);
    partial.data()[2] = 0.0;
    Image d3(1, 1, 3);
    d3.data() = {1.0, 3.0, 100.0};
    const Image p = invert_depth(d3, partial);
    EXPECT_EQ(p.data()[0], 1.0);
    EXPECT_EQ(p.data()[1], 0.0);
    EXPECT_EQ(p.data()[2], 0.0);
}

TEST(SdsGrad, EchoPriorGivesZero) {
    std::mt19937_64 rng(4);
    const Image x = random_image(rng, 3, 6, 6, 0.0, 1.0);
    // The optimal denoiser for a point mass at x recovers the injected noise.
    const AnalyticGaussianPrior echo(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                     AnalyticGaussianPrior::fixed_mean(x));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SdsConfig cfg;
        cfg.seed = seed;
        ConditionBundle cond;
        cond.text_embedding = "x";
        const SdsSample s = sds_grad(echo, x, cond, cfg);
        EXPECT_TRUE(s.gradient.same_shape(x));
        EXPECT_LT(max_abs(s.gradient), 1e-9);
        const SdsSample s3 = sds_grad_3d(echo, x, x, OrbitCoordinates{}, cfg);
        EXPECT_LT(max_abs(s3.gradient), 1e-9);
    }
}

TEST(SdsGrad, ZeroWeightGivesZero) {
    const RecordingPrior prior(NoiseSchedule(std::vector<double>(50, 1.0)));
    std::mt19937_64 rng(5);
    SdsConfig cfg;
    cfg.t_min = 1;
    cfg.t_max = 40;
    const SdsSample s = sds_grad(prior, random_image(rng, 3, 4, 4, 0.0, 1.0), {}, cfg);
    EXPECT_EQ(s.weight, 0.0);
    EXPECT_EQ(max_abs(s.gradient), 0.0);
}

TEST(SdsGrad, SeededAndInRange) {
    const NoiseSchedule sched = NoiseSchedule::scaled_linear();
    std::mt19937_64 rng(6);
    const Image x = random_image(rng, 3, 5, 5, 0.0, 1.0);
    const AnalyticGaussianPrior prior(sched, LatentCodec::identity(),
                                      AnalyticGaussianPrior::fixed_mean(Image(3, 5, 5, 0.5)));
    SdsConfig cfg;
    cfg.seed = 99;
    const SdsSample a = sds_grad(prior, x, {}, cfg);
    const SdsSample b = sds_grad(prior, x, {}, cfg);
    EXPECT_EQ(a.gradient, b.gradient);
    EXPECT_EQ(a.timestep, b.timestep);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const SdsDraw d = draw_sds_noise(seed, 20, 980, 1, 1, 1);
        EXPECT_GE(d.timestep, 20);
        EXPECT_LE(d.timestep, 980);
    }
    cfg.t_max = 1000;
    EXPECT_THROW(sds_grad(prior, x, {}, cfg), InvalidParameterError);
    cfg.t_max = 10;
    EXPECT_THROW(sds_grad(prior, x, {}, cfg), InvalidParameterError);
}

TEST(SdsGrad, AverageDirectionTowardMean) {
    std::mt19937_64 rng(7);
    const Image x = random_image(rng, 3, 8, 8, 0.0, 1.0);
    const Image mu = random_image(rng, 3, 8, 8, 0.0, 1.0);
    const AnalyticGaussianPrior prior(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                      AnalyticGaussianPrior::fixed_mean(mu), 0.3);
    Image avg(3, 8, 8);
    ConditionBundle cond;
    cond.text_embedding = "mu";
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        SdsConfig cfg;
        cfg.seed = seed;
        const SdsSample s = sds_grad(prior, x, cond, cfg);
        for (std::size_t i = 0; i < avg.size(); ++i) {
            avg.data()[i] += s.gradient.data()[i] / 1000.0;
        }
    }
    EXPECT_GT(cosine(avg, difference(x, mu)), 0.99);
}

TEST(SdsGrad, ReferencePriorPullsTowardReference) {
    std::mt19937_64 rng(8);
    const Image x = random_image(rng, 3, 6, 6, 0.0, 1.0);
    const Image ref = random_image(rng, 3, 6, 6, 0.0, 1.0);
    const AnalyticGaussianPrior prior(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                      AnalyticGaussianPrior::reference_mean());
    Image avg(3, 6, 6);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        SdsConfig cfg;
        cfg.seed = seed;
        const SdsSample s = sds_grad_3d(prior, x, ref, OrbitCoordinates{}, cfg);
        EXPECT_TRUE(s.gradient.same_shape(x));
        for (std::size_t i = 0; i < avg.size(); ++i) {
            avg.data()[i] += s.gradient.data()[i];
        }
    }
    EXPECT_GT(cosine(avg, difference(x, ref)), 0.99);
}

TEST(SdsGrad, GuidanceRunsUnconditionalBranch) {
    const RecordingPrior prior(NoiseSchedule::scaled_linear());
    ConditionBundle cond;
    cond.text_embedding = "a chair";
    SdsConfig cfg;
    cfg.guidance_scale = 7.5;
    sds_grad(prior, Image(3, 4, 4, 0.5), cond, cfg);
    ASSERT_EQ(prior.calls.size(), 2u);
    int unconditional = 0;
    for (const auto &c : prior.calls) {
        unconditional += c.cond.unconditional() ? 1 : 0;
    }
    EXPECT_EQ(unconditional, 1);
}

TEST(LatentCodec, PullbackIsAdjoint) {
    Eigen::MatrixXd m(4, 3);
    m << 0.3, -0.2, 0.5, 0.1, 0.9, -0.4, -0.7, 0.2, 0.2, 0.05, 0.05, 0.6;
    const LatentCodec codec(m, Eigen::VectorXd::Constant(4, 0.1), 2);
    std::mt19937_64 rng(9);
    const Image x = random_image(rng, 3, 6, 8);
    const Image g = random_image(rng, 4, 3, 4);
    const Image zero_image(3, 6, 8);
    Image z = codec.encode(x);
    const Image z0 = codec.encode(zero_image);
    // <g, E(x) - E(0)> = <E^T g, x> for the linear part.
    double lhs = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        lhs += g.data()[i] * (z.data()[i] - z0.data()[i]);
    }
    EXPECT_NEAR(lhs, splatedit::testing::dot(codec.pullback(g), x), 1e-12);

    Image mask(1, 6, 8);
    mask.at(0, 3, 5) = 1.0;
    const Image small = codec.resample_mask(mask);
    EXPECT_EQ(small.at(0, 1, 2), 1.0);
    EXPECT_EQ(std::count(small.data().begin(), small.data().end(), 1.0), 1);
    EXPECT_THROW(codec.encode(Image(3, 5, 8)), InvalidParameterError);
}

TEST(DiSds, ZeroOutsideMaskAndEmptyMask) {
    std::mt19937_64 rng(10);
    const AnalyticGaussianPrior prior(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                      AnalyticGaussianPrior::fixed_mean(Image(3, 8, 8, 0.2)));
    const ZeroControlProvider control;
    const Image rendered = random_image(rng, 3, 8, 8, 0.0, 1.0);
    const Image depth = random_image(rng, 1, 8, 8, 0.5, 3.0);
    SdsConfig cfg;
    cfg.guidance_scale = 5.0;
    const SdsSample none =
        di_sds_grad(prior, control, rendered, depth, Image(1, 8, 8), rendered, {}, cfg);
    EXPECT_EQ(max_abs(none.gradient), 0.0);

    for (int trial = 0; trial < 20; ++trial) {
        const Image mask = random_image(rng, 1, 8, 8, 0.0, 1.0);
        cfg.seed = static_cast<std::uint64_t>(trial);
        const SdsSample s = di_sds_grad(prior, control, rendered, depth, mask, rendered, {}, cfg);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) {
                    if (mask.at(0, y, x) <= 0.5) {
                        EXPECT_EQ(s.gradient.at(c, y, x), 0.0);
                    }
                }
            }
        }
    }
    EXPECT_THROW(di_sds_grad(prior, control, rendered, Image{}, Image(1, 8, 8), rendered, {}, cfg),
                 InvalidParameterError);
    EXPECT_THROW(di_sds_grad(prior, control, rendered, depth, Image{}, rendered, {}, cfg),
                 InvalidParameterError);
}

TEST(DiSds, ZeroControlMatchesMaskedSds) {
    std::mt19937_64 rng(11);
    const AnalyticGaussianPrior prior(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                      AnalyticGaussianPrior::fixed_mean(
                                          random_image(rng, 3, 6, 6, 0.0, 1.0)),
                                      0.2);
    const ZeroControlProvider control;
    const Image rendered = random_image(rng, 3, 6, 6, 0.0, 1.0);
    Image mask(1, 6, 6);
    for (int y = 1; y < 5; ++y) {
        for (int x = 2; x < 6; ++x) {
            mask.at(0, y, x) = 1.0;
        }
    }
    for (double s : {0.0, 3.0}) {
        SdsConfig cfg;
        cfg.seed = 17;
        cfg.guidance_scale = s;
        ConditionBundle cond;
        cond.text_embedding = "a lamp";
        const SdsSample di = di_sds_grad(prior, control, rendered, Image(1, 6, 6, 1.0), mask,
                                         rendered, cond, cfg);
        const SdsSample plain = sds_grad(prior, rendered, cond, cfg);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 6; ++y) {
                for (int x = 0; x < 6; ++x) {
                    const double expect = mask.at(0, y, x) > 0.5 ? plain.gradient.at(c, y, x) : 0.0;
                    EXPECT_EQ(di.gradient.at(c, y, x), expect);
                }
            }
        }
    }
}

TEST(DiSds, ChannelLayoutAndBundles) {
    const RecordingPrior prior(NoiseSchedule::scaled_linear(), LatentCodec::pooling(2));
    const ZeroControlProvider control;
    Image background(3, 8, 8, 0.8);
    Image mask(1, 8, 8);
    mask.at(0, 0, 0) = 1.0;
    ConditionBundle cond;
    cond.text_embedding = "a vase, photorealistic, front view";
    SdsConfig cfg;
    cfg.guidance_scale = 2.0;
    di_sds_grad(prior, control, Image(3, 8, 8, 0.3), Image(1, 8, 8, 2.0), mask, background, cond,
                cfg);
    ASSERT_EQ(prior.calls.size(), 2u);
    for (const auto &c : prior.calls) {
        EXPECT_EQ(c.x_t.channels(), 3 + 1 + 3);
        EXPECT_EQ(c.x_t.height(), 4);
        if (c.cond.unconditional()) {
            for (int ch = 3; ch < 7; ++ch) {
                for (double v : c.x_t.plane(ch)) {
                    EXPECT_EQ(v, 0.0);
                }
            }
        } else {
            EXPECT_EQ(c.x_t.at(3, 0, 0), 1.0); // mask block
            EXPECT_EQ(c.x_t.at(3, 1, 1), 0.0);
            EXPECT_DOUBLE_EQ(c.x_t.at(4, 0, 0), 0.6); // masked 2x2 block: one of four pixels zeroed
            EXPECT_DOUBLE_EQ(c.x_t.at(4, 1, 1), 0.8);
            EXPECT_EQ(*c.cond.text_embedding, *cond.text_embedding);
            const auto keys = c.cond.keys();
            for (const char *k : {"depth", "bbox_mask", "masked_image_latents", "control"}) {
                EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
            }
            for (double v : c.cond.depth->data()) {
                EXPECT_EQ(v, 0.5); // constant depth
            }
        }
    }
}

TEST(ViewPrompt, Bins) {
    const OrbitFrame frame;
    const Intrinsics in = Intrinsics::from_fov(8, 8, 50.0);
    const Camera anchor = frame.camera({30.0, 0.0, 3.0}, in, 0.01, 100.0);
    auto at = [&](double az, double el) {
        return view_conditioned_prompt("a standing pineapple", frame.camera({az, el, 3.0}, in, 0.01, 100.0),
                                       anchor, frame);
    };
    EXPECT_EQ(at(30.0, 0.0), "a standing pineapple, photorealistic, front view");
    EXPECT_EQ(at(210.0, 0.0), "a standing pineapple, photorealistic, back view");
    EXPECT_EQ(at(120.0, 10.0), "a standing pineapple, photorealistic, side view");
    EXPECT_EQ(at(-40.0, 10.0), "a standing pineapple, photorealistic, side view");
    EXPECT_EQ(at(60.0, 10.0), "a standing pineapple, photorealistic, front view");
    EXPECT_EQ(at(30.0, 75.0), "a standing pineapple, photorealistic, overhead view");
}

TEST(Wire, RoundTrip) {
    wire::Frame f;
    f.header["op"] = "predict_noise";
    f.header["t"] = 17;
    std::mt19937_64 rng(12);
    Image img = random_image(rng, 2, 3, 4);
    for (double &v : img.data()) {
        v = static_cast<float>(v);
    }
    f.tensors.push_back({"x_t", img});
    f.tensors.push_back({"empty", Image(1, 0, 0)});
    const wire::Frame g = wire::decode(wire::encode(f));
    EXPECT_EQ(g.header["op"], "predict_noise");
    EXPECT_EQ(g.header["t"], 17);
    EXPECT_EQ(g.tensor("x_t"), img);
    EXPECT_THROW(g.tensor("missing"), FormatError);
    std::string bytes = wire::encode(f);
    EXPECT_THROW(wire::decode(bytes.substr(0, bytes.size() - 1)), FormatError);
    EXPECT_THROW(wire::decode("\x05\x00\x00\x00{bad}"), FormatError);
}

TEST(Wire, BundleRoundTrip) {
    ConditionBundle b;
    b.text_embedding = "emb";
    b.relative_pose = OrbitCoordinates{12.5, -3.0, 0.25};
    b.depth = Image(1, 2, 2, 0.5);
    b.control = ControlFeatures{{Image(2, 2, 2, 0.25), Image(2, 1, 1, -1.0)}, Image(3, 1, 1, 2.0)};
    wire::Frame f;
    append_bundle(f, b);
    const ConditionBundle r = read_bundle(wire::decode(wire::encode(f)));
    EXPECT_EQ(r.keys(), b.keys());
    EXPECT_EQ(*r.text_embedding, "emb");
    EXPECT_EQ(r.relative_pose->azimuth_deg, 12.5);
    EXPECT_EQ(*r.depth, *b.depth);
    ASSERT_EQ(r.control->down.size(), 2u);
    EXPECT_EQ(r.control->down[1], b.control->down[1]);
    EXPECT_EQ(r.control->mid, b.control->mid);
    EXPECT_TRUE(read_bundle(wire::Frame{}).unconditional());
}

TEST(RemotePrior, EndpointParsing) {
    const auto a = RemotePriorConfig::from_endpoint("tcp://localhost:5555");
    EXPECT_EQ(a.host, "localhost");
    EXPECT_EQ(a.port, 5555);
    const auto b = RemotePriorConfig::from_endpoint("10.0.0.2:80");
    EXPECT_EQ(b.host, "10.0.0.2");
    EXPECT_EQ(b.port, 80);
    EXPECT_THROW(RemotePriorConfig::from_endpoint("localhost"), ConfigError);
    EXPECT_THROW(RemotePriorConfig::from_endpoint("host:99999"), ConfigError);
    EXPECT_THROW(RemotePriorConfig::from_endpoint("http://host:80"), ConfigError);
}

TEST(RemotePrior, MatchesLocalPrior) {
    std::mt19937_64 rng(13);
    Eigen::MatrixXd m(4, 3);
    m << 0.5, 0.25, 0.125, -0.5, 0.5, 0.0, 0.0, 0.0, 1.0, 0.25, 0.25, 0.25;
    const LatentCodec codec(m, Eigen::VectorXd::Constant(4, -0.25), 2);
    const AnalyticGaussianPrior local(NoiseSchedule::scaled_linear(), codec,
                                      AnalyticGaussianPrior::reference_mean(), 0.1);
    PriorServer server(local);
    RemotePriorConfig cfg = RemotePriorConfig::from_endpoint(server.endpoint());
    cfg.timeout_ms = 5000;
    const RemotePrior remote(cfg);
    EXPECT_EQ(remote.schedule().size(), 1000);
    EXPECT_NEAR(remote.schedule().alpha_bar(500), local.schedule().alpha_bar(500), 1e-15);
    EXPECT_EQ(remote.codec().latent_channels(), 4);
    EXPECT_EQ(remote.codec().downsample(), 2);

    const Image x = random_image(rng, 3, 8, 8, 0.0, 1.0);
    const Image ref = random_image(rng, 3, 8, 8, 0.0, 1.0);
    SdsConfig sc;
    sc.seed = 5;
    sc.guidance_scale = 1.5;
    const SdsSample a = sds_grad_3d(local, x, ref, {10.0, 0.0, 0.0}, sc);
    const SdsSample b = sds_grad_3d(remote, x, ref, {10.0, 0.0, 0.0}, sc);
    EXPECT_EQ(a.timestep, b.timestep);
    EXPECT_LT(max_abs(difference(a.gradient, b.gradient)), 1e-4);
    EXPECT_GE(server.requests_served(), 3u);
}

TEST(RemotePrior, ConcurrentRequestsAreBounded) {
    const AnalyticGaussianPrior local(NoiseSchedule::scaled_linear(), LatentCodec::identity(),
                                      AnalyticGaussianPrior::fixed_mean(Image(3, 16, 16, 0.5)));
    PriorServer server(local);
    RemotePriorConfig cfg = RemotePriorConfig::from_endpoint(server.endpoint());
    cfg.max_in_flight = 2;
    const RemotePrior remote(cfg);
    std::vector<std::future<Image>> jobs;
    for (int i = 0; i < 8; ++i) {
        jobs.push_back(std::async(std::launch::async, [&remote, i] {
            return remote.predict_noise(Image(3, 16, 16, 0.1 * i), 100 + i, {});
        }));
    }
    for (int i = 0; i < 8; ++i) {
        const Image eps = jobs[static_cast<std::size_t>(i)].get();
        const Image want = local.predict_noise(Image(3, 16, 16, 0.1 * i), 100 + i, {});
        EXPECT_LT(max_abs(difference(eps, want)), 1e-4);
    }
    EXPECT_LE(server.peak_concurrency(), 2u);
}

TEST(RemotePrior, UnreachableAndSilentServers) {
    // Closed port: bind then close to get a port nobody listens on.
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr), 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    ::close(fd);
    RemotePriorConfig cfg;
    cfg.port = port;
    cfg.timeout_ms = 500;
    cfg.retries = 1;
    EXPECT_THROW(RemotePrior{cfg}, GuidanceUnavailableError);

    // Listening socket that never answers: the read times out.
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    addr.sin_port = 0;
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr), 0);
    ASSERT_EQ(::listen(fd, 8), 0);
    ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
    cfg.port = ntohs(addr.sin_port);
    cfg.timeout_ms = 200;
    cfg.retries = 0;
    EXPECT_THROW(RemotePrior{cfg}, GuidanceUnavailableError);
    ::close(fd);
}
