// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Coarse lifting and texture enhancement of object splats.
#pragma once

#include "splatedit/camera.hpp"
#include "splatedit/guidance.hpp"
#include "splatedit/renderer.hpp"
#include "splatedit/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace splatedit {

/// Piecewise-linear schedule from `start` (first iteration) to `end` (last iteration).
struct Ramp {
    double start = 0.0;
    double end = 0.0;

    static Ramp constant(double value) { return {value, value}; }
    double at(int iteration, int iterations) const;
};

struct LearningRates {
    double position = 1.6e-3;
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double color = 1e-2;
};

/// Where non-anchor training views come from: a random point on a spherical
/// band around `center`, looking at it.
struct CameraSamplerConfig {
    Vec3 center = Vec3::Zero();
    Vec3 up = Vec3::UnitZ();
    double radius = 3.0;
    double elevation_min_deg = -10.0;
    double elevation_max_deg = 30.0;
    Intrinsics intrinsics;
    double near = 0.01;
    double far = 100.0;
    double p_anchor = 0.25;
};

struct DensifyConfig {
    int interval = 100;           ///< 0 disables densification
    int start = 100;
    int stop = 450;               ///< no densify/prune at or after this iteration
    double grad_threshold = 2e-4; ///< mean accumulated position-gradient norm
    double clone_scale_fraction = 0.05; ///< clone when max scale <= fraction * radius
    int prune_interval = 100;
    double opacity_prune_threshold = 0.005;
    double floater_margin = 1.5; ///< prune beyond margin * radius from the centroid
    double radius = 1.0;         ///< object radius the relative thresholds refer to
    std::size_t max_splats = 20000;
};

struct StageConfig {
    int iterations = 600;
    Ramp lambda_rgb{1000.0, 10000.0};
    Ramp lambda_mask{1000.0, 1000.0};
    Ramp lambda_sds{1.0, 1.0};
    LearningRates lr;
    double geometry_lr_factor = 1.0; ///< scales position, rotation and scale rates
    double opacity_entropy_weight = 0.0;
    DensifyConfig densify;
    CameraSamplerConfig sampler;
    SdsConfig sds;
    int t_max_end = 500; ///< t_max anneals linearly from sds.t_max to this
    Vec3 background = Vec3::Ones();
    std::uint64_t seed = 0;
    int threads = 1;
    int checkpoint_interval = 0; ///< 0 disables checkpoints
    std::filesystem::path checkpoint_dir;

    /// Throws InvalidParameterError on negative weights or rates, or non-positive iterations.
    void validate() const;
};

/// Anchor-view ground truth imported from the inpainting hand-off.
struct AnchorTarget {
    Camera camera;
    Image foreground_rgb;  ///< 3 x H x W
    Image foreground_mask; ///< 1 x H x W, binary

    /// Throws InvalidParameterError on mismatched extents, DegenerateInputError on an empty mask.
    void validate() const;
};

struct LossTerms {
    double rgb = 0.0;
    double mask = 0.0;
    double sds = 0.0;
    double entropy = 0.0;
    double total = 0.0;
};

struct StepResult {
    LossTerms loss;
    std::vector<SplatGradient> gradients; ///< one per object splat
};

/// Anchor-view photometric terms: L_rgb (MSE over the target mask) and L_mask
/// (MSE over the frame), with their image-space gradients.
struct AnchorLoss {
    double rgb = 0.0;
    double mask = 0.0;
    Image grad_color;
    Image grad_mask;
};
AnchorLoss anchor_loss(const RenderOutput &render, const AnchorTarget &target);

/// `count` object splats uniform in the solid ball, dim and mostly transparent,
/// with opacity falling off as a Gaussian of the center distance.
Scene init_sphere(int count, const Vec3 &center, double radius, std::uint64_t seed);

/// Random training view from the sampler band.
Camera sample_camera(const CameraSamplerConfig &sampler, std::mt19937_64 &rng);

/// Stage context passed to the loss evaluation of one iteration.
struct IterationContext {
    int iteration = 0;
    int iterations = 1;
    std::uint64_t seed = 0;
};

/// Evaluates the coarse objective for one iteration: anchor L_rgb and L_mask,
/// and the 3D-aware SDS term at `sample_cam` relative to the anchor.
StepResult coarse_losses(const Scene &object, const AnchorTarget &target,
                         const Camera &sample_cam, const DiffusionPrior &prior_3d,
                         const StageConfig &cfg, const IterationContext &ctx);

/// Per-splat first-order adaptive optimizer with one learning rate per parameter group.
class SplatAdam {
public:
    explicit SplatAdam(LearningRates lr, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-15);
    /// Updates `splats` in place; then renormalizes quaternions (unless the rotation
    /// rate is zero) and clamps colors to [0, 1].
    void step(std::vector<GaussianSplat> &splats, const std::vector<SplatGradient> &grads);
    /// Reorders moment state after densification; `sources[i]` is the old index
    /// that new splat i derives from, or -1 for fresh state.
    void remap(const std::vector<int> &sources);
    void set_learning_rates(const LearningRates &lr) { lr_ = lr; }
    const LearningRates &learning_rates() const noexcept { return lr_; }

private:
    LearningRates lr_;
    double beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<std::array<double, 14>> m_, v_;
};

/// Accumulated positional-gradient statistics since the last densification.
struct DensifyStats {
    std::vector<double> grad_norm_sum;
    std::vector<int> count;

    void reset(std::size_t splats);
    void accumulate(const std::vector<SplatGradient> &grads);
};

struct DensifyResult {
    Scene scene;
    std::vector<int> sources; ///< for each output splat, its input index
    std::vector<bool> fresh;  ///< true for split children and clone copies
    std::size_t split = 0;
    std::size_t cloned = 0;
    std::size_t pruned = 0;
};

/// Splits/clones high-gradient splats and prunes transparent or far-away ones.
/// `densify` and `prune` select which passes run.
DensifyResult densify_and_prune(const Scene &object, const DensifyStats &stats,
                                const DensifyConfig &config, bool densify = true,
                                bool prune = true);

/// Per-iteration loss record.
struct LossRecord {
    int iteration = 0;
    LossTerms loss;
    std::size_t splats = 0;
};

using ProgressFn = std::function<void(const LossRecord &)>;

struct StageResult {
    Scene object;
    std::vector<LossRecord> history;
};

/// Coarse image-to-3D lifting. Throws DivergenceError on a non-finite loss
/// (after writing a state dump when a checkpoint directory is set).
StageResult run_coarse(Scene object, const AnchorTarget &target, const StageConfig &stage,
                       const DiffusionPrior &prior_3d, const ProgressFn &progress = {});

/// Texture enhancement on the merged scene. Only object splats change;
/// `background` is read-only.
StageResult run_enhance(Scene object, const Scene &background, const AnchorTarget &target,
                        const StageConfig &stage, const std::string &prompt,
                        const DiffusionPrior &base_prior, const ControlProvider &control,
                        const ProgressFn &progress = {});

/// Default enhancement settings: fewer iterations and geometry rates x 0.1.
StageConfig default_enhance_config();

/// Writes iteration, splat count and every loss term as CSV.
void write_loss_csv(const std::vector<LossRecord> &history, const std::filesystem::path &path);

/// Analytic-prior mean that renders `target` at the anchor view shifted by the
/// bundle's relative pose (the anchor itself when no pose is given).
AnalyticGaussianPrior::MeanFn scene_view_mean(Scene target, const Camera &anchor,
                                              const OrbitFrame &frame, const Vec3 &background);

/// Orbit coordinates of `camera` minus those of `anchor` (azimuth wrapped).
OrbitCoordinates relative_pose(const Camera &camera, const Camera &anchor, const OrbitFrame &frame);

} // namespace splatedit
