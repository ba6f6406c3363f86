// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Score distillation over a pluggable diffusion-prior interface.
#pragma once

#include "splatedit/camera.hpp"
#include "splatedit/image.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace splatedit {

/// Cumulative signal fractions alpha_bar_t, t in [0, size).
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    /// Throws InvalidParameterError unless the table is non-empty and every entry is in (0, 1].
    explicit NoiseSchedule(std::vector<double> alphas_cumprod);

    /// Betas linear in sqrt space between the endpoints (the usual latent-diffusion table).
    static NoiseSchedule scaled_linear(int steps = 1000, double beta_start = 0.00085,
                                       double beta_end = 0.012);

    int size() const noexcept { return static_cast<int>(alphas_cumprod_.size()); }
    /// Throws InvalidParameterError when t is outside [0, size).
    double alpha_bar(int t) const;
    const std::vector<double> &alphas_cumprod() const noexcept { return alphas_cumprod_; }

private:
    std::vector<double> alphas_cumprod_;
};

/// Linear image-to-latent map: z = M * avgpool_f(x) + b, with M of shape C x 3.
/// Covers the identity codec (f = 1, M = I) and pooled latent grids.
class LatentCodec {
public:
    LatentCodec() = default;
    LatentCodec(Eigen::MatrixXd matrix, Eigen::VectorXd bias, int downsample);

    static LatentCodec identity() { return pooling(1); }
    static LatentCodec pooling(int factor);

    int latent_channels() const noexcept { return static_cast<int>(matrix_.rows()); }
    int downsample() const noexcept { return downsample_; }
    const Eigen::MatrixXd &matrix() const noexcept { return matrix_; }
    const Eigen::VectorXd &bias() const noexcept { return bias_; }

    /// Throws InvalidParameterError unless `rgb` has 3 channels and an extent divisible by the factor.
    Image encode(const Image &rgb) const;
    /// Vector-Jacobian product of `encode`: maps a latent-space gradient to image space.
    Image pullback(const Image &grad_latent) const;
    /// Max-pools a binary mask onto the latent grid.
    Image resample_mask(const Image &mask) const;

private:
    Eigen::MatrixXd matrix_ = Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd bias_ = Eigen::VectorXd::Zero(3);
    int downsample_ = 1;
};

/// Residual stacks from a depth control network: down-block samples and a mid-block sample.
struct ControlFeatures {
    std::vector<Image> down;
    Image mid;
};

/// Everything a prior may condition on. Absent entries are std::nullopt.
struct ConditionBundle {
    std::optional<std::string> text_embedding; ///< opaque handle, passed through unchanged
    std::optional<Image> reference_image;
    std::optional<OrbitCoordinates> relative_pose; ///< sample minus anchor orbit coordinates
    std::optional<Image> depth;                    ///< inverted, in [0, 1]
    std::optional<Image> bbox_mask;                ///< binary
    std::optional<Image> masked_image_latents;
    std::optional<ControlFeatures> control;

    /// True when nothing is set (the classifier-free unconditional branch).
    bool unconditional() const;
    /// Names of the present entries, in declaration order.
    std::vector<std::string> keys() const;
};

/// A frozen noise predictor. Implementations must be safe to call concurrently.
class DiffusionPrior {
public:
    virtual ~DiffusionPrior() = default;
    virtual const NoiseSchedule &schedule() const = 0;
    virtual const LatentCodec &codec() const = 0;
    /// Predicted noise for `x_t`; output has the latent channel count of the codec
    /// and the spatial extent of `x_t`. Throws GuidanceUnavailableError on failure.
    virtual Image predict_noise(const Image &x_t, int t, const ConditionBundle &cond) const = 0;
};

/// Produces (D, M) residuals from noisy latents and an inverted depth image.
class ControlProvider {
public:
    virtual ~ControlProvider() = default;
    virtual ControlFeatures control_features(const Image &x_t, int t,
                                             const ConditionBundle &cond) const = 0;
};

/// Returns empty residual stacks.
class ZeroControlProvider final : public ControlProvider {
public:
    ControlFeatures control_features(const Image &x_t, int t,
                                     const ConditionBundle &cond) const override;
};

enum class WeightFn { Constant, OneMinusAlphaBar };

struct SdsConfig {
    int t_min = 20;
    int t_max = 980;
    WeightFn weight = WeightFn::OneMinusAlphaBar;
    double guidance_scale = 0.0;
    std::uint64_t seed = 0;

    /// Throws InvalidParameterError unless 0 < t_min < t_max < schedule_size.
    void validate(int schedule_size) const;
};

double sds_weight(WeightFn fn, double alpha_bar);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
Image add_noise(const Image &x0, int t, const Image &noise, const NoiseSchedule &schedule);

/// eps_cond + s (eps_cond - eps_uncond); exactly eps_cond when s == 0 or the branches agree.
Image cfg_combine(const Image &eps_cond, const Image &eps_uncond, double s);

/// Rescales depth over mask > 0.5 to [0, 1] and returns 1 - scaled there, 0 elsewhere.
/// Constant depth on the mask gives 0.5. Throws DegenerateInputError for an empty mask.
Image invert_depth(const Image &depth_raw, const Image &mask);

/// One score-distillation sample.
struct SdsSample {
    Image gradient; ///< image space, same shape as the rendered input
    int timestep = 0;
    double weight = 0.0;
};

/// Samples t then the noise from `cfg.seed`, queries the prior (twice when the
/// guidance scale is non-zero) and returns w(t) (eps_hat - eps) pulled back to image space.
SdsSample sds_grad(const DiffusionPrior &prior, const Image &rendered,
                   const ConditionBundle &cond, const SdsConfig &cfg);

/// sds_grad conditioned on a reference image and a relative orbit pose.
SdsSample sds_grad_3d(const DiffusionPrior &prior, const Image &rendered, const Image &reference,
                      const OrbitCoordinates &relative_pose, const SdsConfig &cfg);

/// Depth-guided inpainting score distillation.
///
/// The base prior receives [x_t, mask_latent, masked_image_latents] stacked on
/// channels; the unconditional branch receives x_t with zeroed extra channels
/// and an empty bundle. `depth` is a (normalized) depth image where
/// non-positive values mark uncovered pixels. The returned gradient is zero
/// wherever bbox_mask <= 0.5.
SdsSample di_sds_grad(const DiffusionPrior &base_prior, const ControlProvider &control,
                      const Image &rendered, const Image &depth, const Image &bbox_mask,
                      const Image &background_image, const ConditionBundle &cond,
                      const SdsConfig &cfg);

/// base + ", photorealistic, " + {front|side|back|overhead} view, binned by the
/// azimuth difference to the anchor about `frame`.
std::string view_conditioned_prompt(const std::string &base_prompt, const Camera &camera,
                                    const Camera &anchor, const OrbitFrame &frame);

/// Prior whose data distribution is N(mu, tau^2 I) in latent space, so its
/// optimal denoiser is available in closed form:
///   eps_hat = sqrt(1 - a) (x_t - sqrt(a) mu) / (a tau^2 + 1 - a).
/// With tau = 0 this is (x_t - sqrt(a) mu) / sqrt(1 - a). Only the first
/// latent-channel block of x_t is read, so it accepts concatenated inputs.
class AnalyticGaussianPrior final : public DiffusionPrior {
public:
    /// Image-space mean for a conditional query.
    using MeanFn = std::function<Image(const ConditionBundle &, int height, int width)>;

    AnalyticGaussianPrior(NoiseSchedule schedule, LatentCodec codec, MeanFn mean,
                          double tau = 0.0, double unconditional_level = 0.5);

    /// Prior with a fixed image-space mean.
    static MeanFn fixed_mean(Image mean);
    /// Prior whose mean is the conditioning reference image.
    static MeanFn reference_mean();

    const NoiseSchedule &schedule() const override { return schedule_; }
    const LatentCodec &codec() const override { return codec_; }
    Image predict_noise(const Image &x_t, int t, const ConditionBundle &cond) const override;

    /// Latent-space mean used for `cond` at the given image extent.
    Image latent_mean(const ConditionBundle &cond, int height, int width) const;

private:
    NoiseSchedule schedule_;
    LatentCodec codec_;
    MeanFn mean_;
    double tau_;
    double unconditional_level_;
};

/// Draws (t, noise) exactly as sds_grad does for a given seed.
struct SdsDraw {
    int timestep;
    Image noise;
};
SdsDraw draw_sds_noise(std::uint64_t seed, int t_min, int t_max, int channels, int height,
                       int width);

} // namespace splatedit
