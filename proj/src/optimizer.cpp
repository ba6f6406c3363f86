// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/optimizer.hpp"

#include "splatedit/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace splatedit {

double Ramp::at(int iteration, int iterations) const {
    if (iterations <= 1) {
        return start;
    }
    const double t = std::clamp(static_cast<double>(iteration) / (iterations - 1), 0.0, 1.0);
    return std::lerp(start, end, t);
}

namespace {

bool valid_weight(const Ramp &r) {
    return std::isfinite(r.start) && std::isfinite(r.end) && r.start >= 0.0 && r.end >= 0.0;
}

/// splitmix64 finalizer; decorrelates per-iteration seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

LearningRates scaled_geometry(LearningRates lr, double factor) {
    lr.position *= factor;
    lr.rotation *= factor;
    lr.scale *= factor;
    return lr;
}

RenderOptions render_options(const StageConfig &cfg) { return {.threads = cfg.threads}; }

bool all_finite(const LossTerms &l) {
    return std::isfinite(l.rgb) && std::isfinite(l.mask) && std::isfinite(l.sds) &&
           std::isfinite(l.entropy) && std::isfinite(l.total);
}

void add_into(std::vector<SplatGradient> &acc, const std::vector<SplatGradient> &g,
              std::size_t offset = 0) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += g[offset + i];
    }
}

Image scaled(Image img, double factor) {
    for (double &v : img.data()) {
        v *= factor;
    }
    return img;
}

/// Image-space SDS gradient with mean reduction over elements, and its surrogate loss.
std::pair<Image, double> sds_image_gradient(const SdsSample &sample, double lambda) {
    const double n = static_cast<double>(sample.gradient.size());
    double sq = 0.0;
    for (double v : sample.gradient.data()) {
        sq += v * v;
    }
    return {scaled(sample.gradient, lambda / n), 0.5 * sq / n};
}

int annealed_t_max(const StageConfig &cfg, const IterationContext &ctx) {
    const Ramp ramp{static_cast<double>(cfg.sds.t_max), static_cast<double>(cfg.t_max_end)};
    const int t = static_cast<int>(std::lround(ramp.at(ctx.iteration, ctx.iterations)));
    return std::max(t, cfg.sds.t_min + 1);
}

void checkpoint(const Scene &object, const std::vector<LossRecord> &history,
                const StageConfig &stage, const std::string &name) {
    std::filesystem::create_directories(stage.checkpoint_dir);
    save_scene(object, stage.checkpoint_dir / (name + ".ply"));
    write_loss_csv(history, stage.checkpoint_dir / (name + "_losses.csv"));
}

[[noreturn]] void diverged(const Scene &object, const std::vector<LossRecord> &history,
                           const StageConfig &stage, const LossTerms &loss, int iteration) {
    const std::string message = fmt::format(
        "non-finite loss at iteration {} (rgb {}, mask {}, sds {}, entropy {}) with {} splats",
        iteration, loss.rgb, loss.mask, loss.sds, loss.entropy, object.size());
    if (!stage.checkpoint_dir.empty()) {
        checkpoint(object, history, stage, "diverged");
        spdlog::error("{}; state written to {}", message, stage.checkpoint_dir.string());
    } else {
        spdlog::error("{}", message);
    }
    throw DivergenceError(message, iteration);
}

/// Binary entropy of the anchor mask, pushing accumulated opacity to 0 or 1.
double entropy_term(const Image &mask, Image &grad, double weight) {
    grad = Image(1, mask.height(), mask.width());
    const double n = static_cast<double>(mask.size());
    double h = 0.0;
    const auto m = mask.plane(0);
    auto g = grad.plane(0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double p = std::clamp(m[i], 1e-6, 1.0 - 1e-6);
        h -= (p * std::log(p) + (1.0 - p) * std::log(1.0 - p)) / n;
        g[i] = weight * std::log((1.0 - p) / p) / n;
    }
    return h;
}

/// Anchor-view photometric terms (and the optional entropy term) for the object alone.
StepResult anchor_terms(const Scene &object, const AnchorTarget &target, const StageConfig &cfg,
                        const IterationContext &ctx) {
    const RenderOptions opts = render_options(cfg);
    const double lambda_rgb = cfg.lambda_rgb.at(ctx.iteration, ctx.iterations);
    const double lambda_mask = cfg.lambda_mask.at(ctx.iteration, ctx.iterations);
    StepResult result;
    const RenderOutput anchor = render(object, target.camera, cfg.background, opts);
    const AnchorLoss al = anchor_loss(anchor, target);
    result.loss.rgb = al.rgb;
    result.loss.mask = al.mask;
    Image grad_mask = scaled(al.grad_mask, lambda_mask);
    if (cfg.opacity_entropy_weight > 0.0) {
        Image grad_entropy;
        result.loss.entropy = entropy_term(anchor.mask, grad_entropy, cfg.opacity_entropy_weight);
        for (std::size_t i = 0; i < grad_mask.size(); ++i) {
            grad_mask.data()[i] += grad_entropy.data()[i];
        }
    }
    result.gradients = render_backward(object, target.camera, anchor,
                                       scaled(al.grad_color, lambda_rgb), Image{}, grad_mask, opts);
    result.loss.total = lambda_rgb * result.loss.rgb + lambda_mask * result.loss.mask +
                        cfg.opacity_entropy_weight * result.loss.entropy;
    return result;
}

} // namespace

void StageConfig::validate() const {
    if (iterations < 0) {
        throw InvalidParameterError(fmt::format("iterations must be >= 0, got {}", iterations));
    }
    if (!valid_weight(lambda_rgb) || !valid_weight(lambda_mask) || !valid_weight(lambda_sds)) {
        throw InvalidParameterError("loss weights must be finite and >= 0");
    }
    for (double r : {lr.position, lr.rotation, lr.scale, lr.opacity, lr.color,
                     geometry_lr_factor, opacity_entropy_weight}) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw InvalidParameterError("learning rates and factors must be finite and >= 0");
        }
    }
    if (!(sampler.p_anchor >= 0.0 && sampler.p_anchor <= 1.0)) {
        throw InvalidParameterError("p_anchor must lie in [0, 1]");
    }
    if (t_max_end <= sds.t_min) {
        throw InvalidParameterError("t_max_end must exceed t_min");
    }
}

void AnchorTarget::validate() const {
    camera.validate();
    const int h = camera.intrinsics.height;
    const int w = camera.intrinsics.width;
    if (foreground_rgb.channels() != 3 || foreground_rgb.height() != h ||
        foreground_rgb.width() != w || foreground_mask.channels() != 1 ||
        !foreground_mask.same_extent(foreground_rgb)) {
        throw InvalidParameterError(fmt::format(
            "anchor target images must be 3x{0}x{1} and 1x{0}x{1}", h, w));
    }
    if (std::none_of(foreground_mask.data().begin(), foreground_mask.data().end(),
                     [](double v) { return v > 0.5; })) {
        throw DegenerateInputError("anchor foreground mask is empty");
    }
}

AnchorLoss anchor_loss(const RenderOutput &render, const AnchorTarget &target) {
    require_same_shape(render.color, target.foreground_rgb, "anchor color");
    require_same_shape(render.mask, target.foreground_mask, "anchor mask");
    AnchorLoss loss;
    loss.grad_color = Image(3, render.color.height(), render.color.width());
    loss.grad_mask = Image(1, render.mask.height(), render.mask.width());
    const auto mask = target.foreground_mask.plane(0);
    std::size_t on = 0;
    for (double m : mask) {
        on += m > 0.5 ? 1 : 0;
    }
    if (on > 0) {
        const double norm = 1.0 / (3.0 * static_cast<double>(on));
        for (int c = 0; c < 3; ++c) {
            const auto rendered = render.color.plane(c);
            const auto wanted = target.foreground_rgb.plane(c);
            auto grad = loss.grad_color.plane(c);
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (mask[i] > 0.5) {
                    const double d = rendered[i] - wanted[i];
                    loss.rgb += d * d * norm;
                    grad[i] = 2.0 * d * norm;
                }
            }
        }
    }
    const double norm = 1.0 / static_cast<double>(mask.size());
    const auto rendered = render.mask.plane(0);
    auto grad = loss.grad_mask.plane(0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double d = rendered[i] - mask[i];
        loss.mask += d * d * norm;
        grad[i] = 2.0 * d * norm;
    }
    return loss;
}

Scene init_sphere(int count, const Vec3 &center, double radius, std::uint64_t seed) {
    if (count <= 0 || !(radius > 0.0)) {
        throw InvalidParameterError(
            fmt::format("init_sphere needs count > 0 and radius > 0, got {} and {}", count, radius));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double sigma = radius / 3.0;
    const double log_scale = std::log(radius * std::pow(static_cast<double>(count), -1.0 / 3.0));
    std::vector<GaussianSplat> splats(static_cast<std::size_t>(count));
    for (auto &s : splats) {
        Vec3 dir;
        do {
            dir = Vec3(normal(rng), normal(rng), normal(rng));
        } while (dir.norm() == 0.0);
        const double r = radius * std::cbrt(uniform(rng));
        s.position = center + r * dir.normalized();
        s.rotation = Vec4(1, 0, 0, 0);
        s.log_scale = Vec3::Constant(log_scale);
        s.opacity_logit = logit(0.1 * std::exp(-r * r / (2.0 * sigma * sigma)));
        s.color = Vec3::Constant(0.1);
    }
    return Scene::uniform(std::move(splats), SplatTag::Object,
                          Box::from_center(center, Vec3::Constant(2.0 * radius)));
}

Camera sample_camera(const CameraSamplerConfig &sampler, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> azimuth(0.0, 360.0);
    std::uniform_real_distribution<double> elevation(sampler.elevation_min_deg,
                                                     sampler.elevation_max_deg);
    const double az = azimuth(rng);
    const double el = elevation(rng);
    const OrbitFrame frame{sampler.center, sampler.up};
    return frame.camera({az, el, sampler.radius}, sampler.intrinsics, sampler.near, sampler.far);
}

OrbitCoordinates relative_pose(const Camera &camera, const Camera &anchor, const OrbitFrame &frame) {
    const OrbitCoordinates a = frame.coordinates(camera.center());
    const OrbitCoordinates b = frame.coordinates(anchor.center());
    return {wrap_degrees(a.azimuth_deg - b.azimuth_deg), a.elevation_deg - b.elevation_deg,
            a.radius - b.radius};
}

AnalyticGaussianPrior::MeanFn scene_view_mean(Scene target, const Camera &anchor,
                                              const OrbitFrame &frame, const Vec3 &background) {
    const OrbitCoordinates base = frame.coordinates(anchor.center());
    return [target = std::move(target), anchor, frame, base,
            background](const ConditionBundle &cond, int height, int width) {
        if (anchor.intrinsics.height != height || anchor.intrinsics.width != width) {
            throw GuidanceUnavailableError(fmt::format(
                "scene prior renders {}x{}, query needs {}x{}", anchor.intrinsics.height,
                anchor.intrinsics.width, height, width));
        }
        Camera cam = anchor;
        if (cond.relative_pose) {
            const OrbitCoordinates coords{base.azimuth_deg + cond.relative_pose->azimuth_deg,
                                          base.elevation_deg + cond.relative_pose->elevation_deg,
                                          base.radius + cond.relative_pose->radius};
            cam = frame.camera(coords, anchor.intrinsics, anchor.near, anchor.far);
        }
        return render(target, cam, background, {.threads = 1}).color;
    };
}

StepResult coarse_losses(const Scene &object, const AnchorTarget &target,
                         const Camera &sample_cam, const DiffusionPrior &prior_3d,
                         const StageConfig &cfg, const IterationContext &ctx) {
    if (object.empty()) {
        throw InvalidParameterError("coarse_losses needs a non-empty object");
    }
    StepResult result = anchor_terms(object, target, cfg, ctx);
    const double lambda_sds = cfg.lambda_sds.at(ctx.iteration, ctx.iterations);
    if (lambda_sds > 0.0) {
        const RenderOptions opts = render_options(cfg);
        const RenderOutput view = render(object, sample_cam, cfg.background, opts);
        SdsConfig sds = cfg.sds;
        sds.t_max = annealed_t_max(cfg, ctx);
        sds.seed = mix_seed(ctx.seed, static_cast<std::uint64_t>(ctx.iteration));
        const OrbitFrame frame{cfg.sampler.center, cfg.sampler.up};
        const SdsSample sample =
            sds_grad_3d(prior_3d, view.color, target.foreground_rgb,
                        relative_pose(sample_cam, target.camera, frame), sds);
        auto [grad, surrogate] = sds_image_gradient(sample, lambda_sds);
        result.loss.sds = surrogate;
        result.loss.total += lambda_sds * surrogate;
        add_into(result.gradients,
                 render_backward(object, sample_cam, view, grad, Image{}, Image{}, opts));
    }
    return result;
}

SplatAdam::SplatAdam(LearningRates lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void SplatAdam::step(std::vector<GaussianSplat> &splats, const std::vector<SplatGradient> &grads) {
    if (grads.size() != splats.size()) {
        throw InvalidParameterError(fmt::format("{} gradients for {} splats", grads.size(),
                                                splats.size()));
    }
    m_.resize(splats.size(), {});
    v_.resize(splats.size(), {});
    ++step_count_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < splats.size(); ++i) {
        GaussianSplat &s = splats[i];
        const SplatGradient &g = grads[i];
        std::array<double *, 14> params = {
            &s.position[0],  &s.position[1],  &s.position[2],  &s.rotation[0], &s.rotation[1],
            &s.rotation[2],  &s.rotation[3],  &s.log_scale[0], &s.log_scale[1], &s.log_scale[2],
            &s.opacity_logit, &s.color[0],    &s.color[1],     &s.color[2]};
        const std::array<double, 14> gv = {
            g.position[0],  g.position[1],  g.position[2],  g.rotation[0], g.rotation[1],
            g.rotation[2],  g.rotation[3],  g.log_scale[0], g.log_scale[1], g.log_scale[2],
            g.opacity_logit, g.color[0],    g.color[1],     g.color[2]};
        for (int k = 0; k < 14; ++k) {
            const double rate = k < 3    ? lr_.position
                                : k < 7  ? lr_.rotation
                                : k < 10 ? lr_.scale
                                : k < 11 ? lr_.opacity
                                         : lr_.color;
            double &m = m_[i][static_cast<std::size_t>(k)];
            double &v = v_[i][static_cast<std::size_t>(k)];
            m = beta1_ * m + (1.0 - beta1_) * gv[static_cast<std::size_t>(k)];
            v = beta2_ * v + (1.0 - beta2_) * gv[static_cast<std::size_t>(k)] *
                                 gv[static_cast<std::size_t>(k)];
            if (rate == 0.0) {
                continue;
            }
            *params[static_cast<std::size_t>(k)] -= rate * (m / c1) / (std::sqrt(v / c2) + eps_);
        }
        if (lr_.rotation > 0.0) {
            const double norm = s.rotation.norm();
            s.rotation = norm > 0.0 ? Vec4(s.rotation / norm) : Vec4(1, 0, 0, 0);
        }
        s.color = s.color.cwiseMax(0.0).cwiseMin(1.0);
    }
}

void SplatAdam::remap(const std::vector<int> &sources) {
    std::vector<std::array<double, 14>> m(sources.size()), v(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const int src = sources[i];
        if (src >= 0 && static_cast<std::size_t>(src) < m_.size()) {
            m[i] = m_[static_cast<std::size_t>(src)];
            v[i] = v_[static_cast<std::size_t>(src)];
        }
    }
    m_ = std::move(m);
    v_ = std::move(v);
}

void DensifyStats::reset(std::size_t splats) {
    grad_norm_sum.assign(splats, 0.0);
    count.assign(splats, 0);
}

void DensifyStats::accumulate(const std::vector<SplatGradient> &grads) {
    if (grad_norm_sum.size() != grads.size()) {
        reset(grads.size());
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double n = grads[i].position.norm();
        if (n > 0.0) {
            grad_norm_sum[i] += n;
            ++count[i];
        }
    }
}

DensifyResult densify_and_prune(const Scene &object, const DensifyStats &stats,
                                const DensifyConfig &config, bool densify, bool prune) {
    const std::size_t n = object.size();
    DensifyResult result;
    if (n == 0) {
        result.scene = object;
        return result;
    }
    Vec3 centroid = Vec3::Zero();
    for (const auto &s : object.splats()) {
        centroid += s.position;
    }
    centroid /= static_cast<double>(n);

    std::vector<GaussianSplat> out;
    std::vector<SplatTag> tags;
    out.reserve(n);
    std::size_t budget = config.max_splats > n ? config.max_splats - n : 0;
    const double log_shrink = std::log(1.6);
    for (std::size_t i = 0; i < n; ++i) {
        const GaussianSplat &s = object.splat(i);
        if (prune && (s.opacity() < config.opacity_prune_threshold ||
                      (s.position - centroid).norm() > config.floater_margin * config.radius)) {
            ++result.pruned;
            continue;
        }
        const bool hot = densify && i < stats.count.size() && stats.count[i] > 0 &&
                         stats.grad_norm_sum[i] / stats.count[i] > config.grad_threshold;
        if (!hot || budget == 0) {
            out.push_back(s);
            tags.push_back(object.tag(i));
            result.sources.push_back(static_cast<int>(i));
            result.fresh.push_back(false);
            continue;
        }
        --budget;
        const Vec3 scale = s.scale();
        int axis = 0;
        scale.maxCoeff(&axis);
        if (scale[axis] > config.clone_scale_fraction * config.radius) {
            const Vec3 offset = quaternion_to_matrix(s.rotation).col(axis) * scale[axis];
            for (double sign : {-1.0, 1.0}) {
                GaussianSplat child = s;
                child.position = s.position + sign * offset;
                child.log_scale = s.log_scale - Vec3::Constant(log_shrink);
                out.push_back(child);
                tags.push_back(object.tag(i));
                result.sources.push_back(static_cast<int>(i));
                result.fresh.push_back(true);
            }
            ++result.split;
        } else {
            GaussianSplat copy = s;
            // Two coincident copies composite to the original opacity.
            copy.opacity_logit = logit(1.0 - std::sqrt(1.0 - s.opacity()));
            for (int c = 0; c < 2; ++c) {
                out.push_back(copy);
                tags.push_back(object.tag(i));
                result.sources.push_back(static_cast<int>(i));
                result.fresh.push_back(c == 1);
            }
            ++result.cloned;
        }
    }
    result.scene = Scene(std::move(out), std::move(tags), object.bbox());
    return result;
}

void write_loss_csv(const std::vector<LossRecord> &history, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << "iteration,splats,total,rgb,mask,sds,entropy\n";
    for (const auto &r : history) {
        out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.iteration, r.splats,
                           r.loss.total, r.loss.rgb, r.loss.mask, r.loss.sds, r.loss.entropy);
    }
    if (!out) {
        throw IoError(fmt::format("failed writing '{}'", path.string()));
    }
}

namespace {


Camera training_view(const StageConfig &stage, const AnchorTarget &target, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const bool anchor = coin(rng) < stage.sampler.p_anchor;
    Camera random_view = sample_camera(stage.sampler, rng);
    return anchor ? target.camera : random_view;
}

bool due(int it, int start, int stop, int interval) {
    return interval > 0 && it >= start && it < stop && it > 0 && (it - start) % interval == 0;
}

/// Shared optimization loop; `evaluate(object, camera, ctx)` returns losses and object gradients.
template <typename Evaluate>
StageResult optimize(Scene object, const AnchorTarget &target, const StageConfig &stage,
                     const ProgressFn &progress, const char *name, Evaluate &&evaluate) {
    stage.validate();
    target.validate();
    if (object.empty()) {
        throw InvalidParameterError(fmt::format("{} stage needs a non-empty object", name));
    }
    StageResult result;
    SplatAdam adam(scaled_geometry(stage.lr, stage.geometry_lr_factor));
    DensifyStats stats;
    stats.reset(object.size());
    std::mt19937_64 rng(stage.seed);
    const DensifyConfig &dc = stage.densify;

    for (int it = 0; it < stage.iterations; ++it) {
        const Camera cam = training_view(stage, target, rng);
        const IterationContext ctx{it, stage.iterations, stage.seed};
        StepResult step = evaluate(object, cam, ctx);
        const LossRecord record{it, step.loss, object.size()};
        if (!all_finite(step.loss)) {
            diverged(object, result.history, stage, step.loss, it);
        }
        result.history.push_back(record);
        if (progress) {
            progress(record);
        }
        stats.accumulate(step.gradients);
        adam.step(object.mutable_splats(), step.gradients);

        const bool densify = due(it + 1, dc.start, dc.stop, dc.interval);
        const bool prune = due(it + 1, dc.start, dc.stop, dc.prune_interval) && dc.interval > 0;
        if (densify || prune) {
            DensifyResult d = densify_and_prune(object, stats, dc, densify, prune);
            std::vector<int> sources = d.sources;
            for (std::size_t i = 0; i < sources.size(); ++i) {
                if (d.fresh[i]) {
                    sources[i] = -1;
                }
            }
            adam.remap(sources);
            spdlog::debug("{} it {}: split {}, cloned {}, pruned {} -> {} splats", name, it + 1,
                          d.split, d.cloned, d.pruned, d.scene.size());
            object = std::move(d.scene);
            stats.reset(object.size());
            if (object.empty()) {
                throw DivergenceError(
                    fmt::format("{} stage pruned every splat at iteration {}", name, it + 1),
                    it + 1);
            }
        }
        if (stage.checkpoint_interval > 0 && !stage.checkpoint_dir.empty() &&
            (it + 1) % stage.checkpoint_interval == 0) {
            checkpoint(object, result.history, stage, fmt::format("{}_{:06d}", name, it + 1));
        }
    }
    result.object = std::move(object);
    return result;
}

} // namespace

StageResult run_coarse(Scene object, const AnchorTarget &target, const StageConfig &stage,
                       const DiffusionPrior &prior_3d, const ProgressFn &progress) {
    stage.sds.validate(prior_3d.schedule().size());
    return optimize(std::move(object), target, stage, progress, "coarse",
                    [&](const Scene &obj, const Camera &cam, const IterationContext &ctx) {
                        return coarse_losses(obj, target, cam, prior_3d, stage, ctx);
                    });
}

StageResult run_enhance(Scene object, const Scene &background, const AnchorTarget &target,
                        const StageConfig &stage, const std::string &prompt,
                        const DiffusionPrior &base_prior, const ControlProvider &control,
                        const ProgressFn &progress) {
    stage.sds.validate(base_prior.schedule().size());
    const RenderOptions opts = render_options(stage);
    const OrbitFrame frame{stage.sampler.center, stage.sampler.up};
    const std::size_t offset = background.size();
    auto evaluate = [&](const Scene &obj, const Camera &cam, const IterationContext &ctx) {
        StepResult result = anchor_terms(obj, target, stage, ctx);
        const double lambda_sds = stage.lambda_sds.at(ctx.iteration, ctx.iterations);
        if (lambda_sds <= 0.0) {
            return result;
        }
        const Scene merged = merge_scenes(background, obj);
        const RenderOutput view = render(merged, cam, stage.background, opts);
        const Image background_view = render(background, cam, stage.background, opts).color;
        ConditionBundle cond;
        cond.text_embedding = view_conditioned_prompt(prompt, cam, target.camera, frame);
        cond.relative_pose = relative_pose(cam, target.camera, frame);
        SdsConfig sds = stage.sds;
        sds.t_max = annealed_t_max(stage, ctx);
        sds.seed = mix_seed(ctx.seed, static_cast<std::uint64_t>(ctx.iteration));
        const SdsSample sample =
            di_sds_grad(base_prior, control, view.color, view.normalized_depth(0.0),
                        project_box_mask(obj.bbox(), cam), background_view, cond, sds);
        auto [grad, surrogate] = sds_image_gradient(sample, lambda_sds);
        result.loss.sds = surrogate;
        result.loss.total += lambda_sds * surrogate;
        const auto merged_grads = render_backward(merged, cam, view, grad, Image{}, Image{}, opts);
        add_into(result.gradients, merged_grads, offset);
        return result;
    };
    return optimize(std::move(object), target, stage, progress, "enhance", evaluate);
}

StageConfig default_enhance_config() {
    StageConfig cfg;
    cfg.iterations = 400;
    cfg.geometry_lr_factor = 0.1;
    cfg.densify.interval = 0;
    return cfg;
}

} // namespace splatedit
