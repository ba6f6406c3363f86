// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/guidance.hpp"

#include "splatedit/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <future>

namespace splatedit {

NoiseSchedule::NoiseSchedule(std::vector<double> alphas_cumprod)
    : alphas_cumprod_(std::move(alphas_cumprod)) {
    if (alphas_cumprod_.empty()) {
        throw InvalidParameterError("noise schedule is empty");
    }
    for (double a : alphas_cumprod_) {
        if (!(a > 0.0 && a <= 1.0)) {
            throw InvalidParameterError(fmt::format("alpha_bar {} outside (0, 1]", a));
        }
    }
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps, double beta_start, double beta_end) {
    if (steps < 2) {
        throw InvalidParameterError(fmt::format("schedule needs >= 2 steps, got {}", steps));
    }
    std::vector<double> table(static_cast<std::size_t>(steps));
    const double lo = std::sqrt(beta_start);
    const double hi = std::sqrt(beta_end);
    double product = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double root = std::lerp(lo, hi, static_cast<double>(i) / (steps - 1));
        product *= 1.0 - root * root;
        table[static_cast<std::size_t>(i)] = product;
    }
    return NoiseSchedule(std::move(table));
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= size()) {
        throw InvalidParameterError(
            fmt::format("timestep {} outside schedule range [0, {})", t, size()));
    }
    return alphas_cumprod_[static_cast<std::size_t>(t)];
}

LatentCodec::LatentCodec(Eigen::MatrixXd matrix, Eigen::VectorXd bias, int downsample)
    : matrix_(std::move(matrix)), bias_(std::move(bias)), downsample_(downsample) {
    if (matrix_.cols() != 3 || matrix_.rows() < 1 || bias_.size() != matrix_.rows()) {
        throw InvalidParameterError(fmt::format(
            "codec matrix must be C x 3 with a length-C bias, got {}x{} and {}", matrix_.rows(),
            matrix_.cols(), bias_.size()));
    }
    if (downsample_ < 1) {
        throw InvalidParameterError(fmt::format("codec downsample must be >= 1, got {}", downsample_));
    }
}

LatentCodec LatentCodec::pooling(int factor) {
    return LatentCodec(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), factor);
}

Image LatentCodec::encode(const Image &rgb) const {
    const int f = downsample_;
    if (rgb.channels() != 3 || rgb.height() % f != 0 || rgb.width() % f != 0 || rgb.empty()) {
        throw InvalidParameterError(fmt::format(
            "codec expects a 3-channel image with extent divisible by {}, got {}x{}x{}", f,
            rgb.channels(), rgb.height(), rgb.width()));
    }
    const int h = rgb.height() / f;
    const int w = rgb.width() / f;
    const double inv_area = 1.0 / (f * f);
    Image out(latent_channels(), h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            Eigen::Vector3d pooled = Eigen::Vector3d::Zero();
            for (int c = 0; c < 3; ++c) {
                for (int dy = 0; dy < f; ++dy) {
                    for (int dx = 0; dx < f; ++dx) {
                        pooled[c] += rgb.at(c, y * f + dy, x * f + dx);
                    }
                }
            }
            pooled *= inv_area;
            const Eigen::VectorXd z = matrix_ * pooled + bias_;
            for (int k = 0; k < latent_channels(); ++k) {
                out.at(k, y, x) = z[k];
            }
        }
    }
    return out;
}

Image LatentCodec::pullback(const Image &grad_latent) const {
    if (grad_latent.channels() != latent_channels()) {
        throw InvalidParameterError(fmt::format("codec pullback expects {} channels, got {}",
                                                latent_channels(), grad_latent.channels()));
    }
    const int f = downsample_;
    const double inv_area = 1.0 / (f * f);
    Image out(3, grad_latent.height() * f, grad_latent.width() * f);
    for (int y = 0; y < grad_latent.height(); ++y) {
        for (int x = 0; x < grad_latent.width(); ++x) {
            Eigen::VectorXd g(latent_channels());
            for (int k = 0; k < latent_channels(); ++k) {
                g[k] = grad_latent.at(k, y, x);
            }
            const Eigen::Vector3d back = matrix_.transpose() * g * inv_area;
            for (int c = 0; c < 3; ++c) {
                for (int dy = 0; dy < f; ++dy) {
                    for (int dx = 0; dx < f; ++dx) {
                        out.at(c, y * f + dy, x * f + dx) = back[c];
                    }
                }
            }
        }
    }
    return out;
}

Image LatentCodec::resample_mask(const Image &mask) const {
    const int f = downsample_;
    if (mask.channels() != 1 || mask.height() % f != 0 || mask.width() % f != 0) {
        throw InvalidParameterError("mask extent must be single-channel and divisible by the codec factor");
    }
    Image out(1, mask.height() / f, mask.width() / f);
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.at(0, y, x) > 0.5) {
                out.at(0, y / f, x / f) = 1.0;
            }
        }
    }
    return out;
}

bool ConditionBundle::unconditional() const { return keys().empty(); }

std::vector<std::string> ConditionBundle::keys() const {
    std::vector<std::string> out;
    if (text_embedding) out.emplace_back("text_embedding");
    if (reference_image) out.emplace_back("reference_image");
    if (relative_pose) out.emplace_back("relative_pose");
    if (depth) out.emplace_back("depth");
    if (bbox_mask) out.emplace_back("bbox_mask");
    if (masked_image_latents) out.emplace_back("masked_image_latents");
    if (control) out.emplace_back("control");
    return out;
}

ControlFeatures ZeroControlProvider::control_features(const Image &, int,
                                                      const ConditionBundle &) const {
    return {};
}

void SdsConfig::validate(int schedule_size) const {
    if (!(0 < t_min && t_min < t_max && t_max < schedule_size)) {
        throw InvalidParameterError(fmt::format(
            "timestep bounds must satisfy 0 < t_min < t_max < {}, got [{}, {}]", schedule_size,
            t_min, t_max));
    }
    if (!std::isfinite(guidance_scale)) {
        throw InvalidParameterError("guidance scale must be finite");
    }
}

double sds_weight(WeightFn fn, double alpha_bar) {
    return fn == WeightFn::Constant ? 1.0 : 1.0 - alpha_bar;
}

Image add_noise(const Image &x0, int t, const Image &noise, const NoiseSchedule &schedule) {
    require_same_shape(x0, noise, "add_noise");
    const double a = schedule.alpha_bar(t);
    const double signal = std::sqrt(a);
    const double sigma = std::sqrt(1.0 - a);
    Image out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = signal * x0.data()[i] + sigma * noise.data()[i];
    }
    return out;
}

Image cfg_combine(const Image &eps_cond, const Image &eps_uncond, double s) {
    require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    Image out = eps_cond;
    if (s == 0.0) {
        return out;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = eps_cond.data()[i] - eps_uncond.data()[i];
        if (diff != 0.0) {
            out.data()[i] = eps_cond.data()[i] + s * diff;
        }
    }
    return out;
}

Image invert_depth(const Image &depth_raw, const Image &mask) {
    if (depth_raw.channels() != 1 || mask.channels() != 1 || !depth_raw.same_extent(mask)) {
        throw InvalidParameterError("invert_depth expects single-channel depth and mask of equal extent");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::size_t count = 0;
    for (std::size_t i = 0; i < depth_raw.size(); ++i) {
        if (mask.data()[i] > 0.5) {
            const double d = depth_raw.data()[i];
            if (!std::isfinite(d)) {
                throw InvalidParameterError(fmt::format("non-finite depth at pixel {}", i));
            }
            lo = std::min(lo, d);
            hi = std::max(hi, d);
            ++count;
        }
    }
    if (count == 0) {
        throw DegenerateInputError("invert_depth: mask is empty");
    }
    Image out(1, depth_raw.height(), depth_raw.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mask.data()[i] > 0.5) {
            out.data()[i] = hi == lo ? 0.5 : 1.0 - (depth_raw.data()[i] - lo) / (hi - lo);
        }
    }
    return out;
}

SdsDraw draw_sds_noise(std::uint64_t seed, int t_min, int t_max, int channels, int height,
                       int width) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> timestep(t_min, t_max);
    SdsDraw draw{timestep(rng), Image(channels, height, width)};
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double &v : draw.noise.data()) {
        v = normal(rng);
    }
    return draw;
}

namespace {

void check_prediction(const Image &eps, const Image &latent, const char *branch) {
    if (!eps.same_shape(latent)) {
        throw GuidanceUnavailableError(fmt::format(
            "{} prediction has shape {}x{}x{}, expected {}x{}x{}", branch, eps.channels(),
            eps.height(), eps.width(), latent.channels(), latent.height(), latent.width()));
    }
}

/// Queries both branches (concurrently when guided) and applies CFG.
Image guided_prediction(const DiffusionPrior &prior, const Image &cond_input,
                        const Image &uncond_input, int t, const ConditionBundle &cond,
                        double scale, const Image &latent) {
    if (scale == 0.0) {
        Image eps = prior.predict_noise(cond_input, t, cond);
        check_prediction(eps, latent, "conditional");
        return eps;
    }
    auto uncond = std::async(std::launch::async, [&] {
        return prior.predict_noise(uncond_input, t, ConditionBundle{});
    });
    Image eps_cond = prior.predict_noise(cond_input, t, cond);
    Image eps_uncond = uncond.get();
    check_prediction(eps_cond, latent, "conditional");
    check_prediction(eps_uncond, latent, "unconditional");
    return cfg_combine(eps_cond, eps_uncond, scale);
}

SdsSample residual(const DiffusionPrior &prior, const Image &eps_hat, const SdsDraw &draw,
                   double weight) {
    Image grad = eps_hat;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad.data()[i] = weight * (eps_hat.data()[i] - draw.noise.data()[i]);
    }
    return {prior.codec().pullback(grad), draw.timestep, weight};
}

} // namespace

SdsSample sds_grad(const DiffusionPrior &prior, const Image &rendered,
                   const ConditionBundle &cond, const SdsConfig &cfg) {
    const NoiseSchedule &schedule = prior.schedule();
    cfg.validate(schedule.size());
    const Image z0 = prior.codec().encode(rendered);
    const SdsDraw draw =
        draw_sds_noise(cfg.seed, cfg.t_min, cfg.t_max, z0.channels(), z0.height(), z0.width());
    const Image x_t = add_noise(z0, draw.timestep, draw.noise, schedule);
    const Image eps_hat =
        guided_prediction(prior, x_t, x_t, draw.timestep, cond, cfg.guidance_scale, z0);
    return residual(prior, eps_hat, draw,
                    sds_weight(cfg.weight, schedule.alpha_bar(draw.timestep)));
}

SdsSample sds_grad_3d(const DiffusionPrior &prior, const Image &rendered, const Image &reference,
                      const OrbitCoordinates &relative_pose, const SdsConfig &cfg) {
    ConditionBundle cond;
    cond.reference_image = reference;
    cond.relative_pose = relative_pose;
    return sds_grad(prior, rendered, cond, cfg);
}

SdsSample di_sds_grad(const DiffusionPrior &base_prior, const ControlProvider &control,
                      const Image &rendered, const Image &depth, const Image &bbox_mask,
                      const Image &background_image, const ConditionBundle &cond,
                      const SdsConfig &cfg) {
    if (depth.empty() || bbox_mask.empty()) {
        throw InvalidParameterError("DI-SDS needs a depth image and a bbox mask");
    }
    if (rendered.channels() != 3 || depth.channels() != 1 || bbox_mask.channels() != 1 ||
        !depth.same_extent(rendered) || !bbox_mask.same_extent(rendered) ||
        !background_image.same_shape(rendered)) {
        throw InvalidParameterError(
            "DI-SDS inputs must share one extent: 3-channel render and background, "
            "single-channel depth and mask");
    }
    const NoiseSchedule &schedule = base_prior.schedule();
    const LatentCodec &codec = base_prior.codec();
    cfg.validate(schedule.size());

    const int height = rendered.height();
    const int width = rendered.width();
    Image binary_mask(1, height, width);
    Image covered(1, height, width);
    bool any_covered = false;
    for (std::size_t i = 0; i < binary_mask.size(); ++i) {
        binary_mask.data()[i] = bbox_mask.data()[i] > 0.5 ? 1.0 : 0.0;
        covered.data()[i] = depth.data()[i] > 0.0 ? 1.0 : 0.0;
        any_covered = any_covered || depth.data()[i] > 0.0;
    }
    const Image inverted = any_covered ? invert_depth(depth, covered) : Image(1, height, width);

    Image masked_image = background_image;
    for (int c = 0; c < 3; ++c) {
        auto plane = masked_image.plane(c);
        for (std::size_t i = 0; i < plane.size(); ++i) {
            plane[i] *= 1.0 - binary_mask.data()[i];
        }
    }

    const Image z0 = codec.encode(rendered);
    const SdsDraw draw =
        draw_sds_noise(cfg.seed, cfg.t_min, cfg.t_max, z0.channels(), z0.height(), z0.width());
    const Image x_t = add_noise(z0, draw.timestep, draw.noise, schedule);
    const Image mask_latent = codec.resample_mask(binary_mask);
    const Image image_latents = codec.encode(masked_image);

    ConditionBundle control_cond;
    control_cond.text_embedding = cond.text_embedding;
    control_cond.depth = inverted;
    ConditionBundle full = cond;
    full.depth = inverted;
    full.bbox_mask = binary_mask;
    full.masked_image_latents = image_latents;
    full.control = control.control_features(x_t, draw.timestep, control_cond);

    const Image *cond_parts[] = {&x_t, &mask_latent, &image_latents};
    const Image zero_mask(1, mask_latent.height(), mask_latent.width());
    const Image zero_latents(image_latents.channels(), image_latents.height(),
                             image_latents.width());
    const Image *uncond_parts[] = {&x_t, &zero_mask, &zero_latents};
    const Image eps_hat = guided_prediction(
        base_prior, Image::concat_channels(cond_parts), Image::concat_channels(uncond_parts),
        draw.timestep, full, cfg.guidance_scale, z0);

    SdsSample sample = residual(base_prior, eps_hat, draw,
                                sds_weight(cfg.weight, schedule.alpha_bar(draw.timestep)));
    for (int c = 0; c < 3; ++c) {
        auto plane = sample.gradient.plane(c);
        for (std::size_t i = 0; i < plane.size(); ++i) {
            if (binary_mask.data()[i] == 0.0) {
                plane[i] = 0.0;
            }
        }
    }
    return sample;
}

std::string view_conditioned_prompt(const std::string &base_prompt, const Camera &camera,
                                    const Camera &anchor, const OrbitFrame &frame) {
    const OrbitCoordinates view = frame.coordinates(camera.center());
    const OrbitCoordinates ref = frame.coordinates(anchor.center());
    const double delta = std::abs(wrap_degrees(view.azimuth_deg - ref.azimuth_deg));
    const char *label = "back";
    if (view.elevation_deg > 60.0) {
        label = "overhead";
    } else if (delta < 45.0) {
        label = "front";
    } else if (delta <= 135.0) {
        label = "side";
    }
    return fmt::format("{}, photorealistic, {} view", base_prompt, label);
}

AnalyticGaussianPrior::AnalyticGaussianPrior(NoiseSchedule schedule, LatentCodec codec,
                                             MeanFn mean, double tau,
                                             double unconditional_level)
    : schedule_(std::move(schedule)), codec_(std::move(codec)), mean_(std::move(mean)),
      tau_(tau), unconditional_level_(unconditional_level) {
    if (!(tau_ >= 0.0) || !std::isfinite(tau_)) {
        throw InvalidParameterError(fmt::format("prior tau must be finite and >= 0, got {}", tau_));
    }
    if (!mean_) {
        throw InvalidParameterError("analytic prior needs a mean function");
    }
}

AnalyticGaussianPrior::MeanFn AnalyticGaussianPrior::fixed_mean(Image mean) {
    return [mean = std::move(mean)](const ConditionBundle &, int height, int width) {
        if (mean.height() != height || mean.width() != width) {
            throw GuidanceUnavailableError(fmt::format(
                "prior mean is {}x{}, query needs {}x{}", mean.height(), mean.width(), height,
                width));
        }
        return mean;
    };
}

AnalyticGaussianPrior::MeanFn AnalyticGaussianPrior::reference_mean() {
    return [](const ConditionBundle &cond, int, int) {
        if (!cond.reference_image) {
            throw GuidanceUnavailableError("reference-mean prior queried without a reference image");
        }
        return *cond.reference_image;
    };
}

Image AnalyticGaussianPrior::latent_mean(const ConditionBundle &cond, int height,
                                         int width) const {
    return codec_.encode(mean_(cond, height, width));
}

Image AnalyticGaussianPrior::predict_noise(const Image &x_t, int t,
                                           const ConditionBundle &cond) const {
    const int channels = codec_.latent_channels();
    if (x_t.channels() < channels) {
        throw GuidanceUnavailableError(fmt::format(
            "analytic prior needs >= {} input channels, got {}", channels, x_t.channels()));
    }
    const Image x = x_t.slice_channels(0, channels);
    const Image mu = cond.unconditional()
                         ? Image(channels, x.height(), x.width(), unconditional_level_)
                         : latent_mean(cond, x.height() * codec_.downsample(),
                                       x.width() * codec_.downsample());
    if (!mu.same_shape(x)) {
        throw GuidanceUnavailableError("analytic prior mean does not match the latent shape");
    }
    const double a = schedule_.alpha_bar(t);
    const double signal = std::sqrt(a);
    const double gain = std::sqrt(1.0 - a) / (a * tau_ * tau_ + 1.0 - a);
    Image eps = x;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        eps.data()[i] = gain * (x.data()[i] - signal * mu.data()[i]);
    }
    return eps;
}

} // namespace splatedit
