// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/pipeline.hpp"

#include "splatedit/error.hpp"
#include "splatedit/plot.hpp"
#include "splatedit/png_io.hpp"
#include "splatedit/remote_prior.hpp"
#include "splatedit/renderer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

namespace splatedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError(fmt::format("cannot write '{}'", path.string()));
    }
}

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot read '{}'", path.string()));
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
    }
}

void prepare_output(const PipelineConfig &config) { fs::create_directories(config.output); }

RenderOptions render_options(const PipelineConfig &config) { return {.threads = config.threads}; }

Image threshold(const Image &mask) {
    Image out(1, mask.height(), mask.width());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out.data()[i] = mask.data()[i] > 0.5 ? 1.0 : 0.0;
    }
    return out;
}

Image as_rgb(const Image &image) {
    if (image.channels() == 3) {
        return image;
    }
    Image rgb(3, image.height(), image.width());
    for (int c = 0; c < 3; ++c) {
        std::copy(image.plane(0).begin(), image.plane(0).end(), rgb.plane(c).begin());
    }
    return rgb;
}

json camera_to_json(const Camera &cam) {
    json rotation = json::array();
    for (int r = 0; r < 3; ++r) {
        rotation.push_back({cam.rotation(r, 0), cam.rotation(r, 1), cam.rotation(r, 2)});
    }
    const Intrinsics &k = cam.intrinsics;
    return {{"intrinsics",
             {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
              {"height", k.height}}},
            {"rotation", rotation},
            {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
            {"near", cam.near},
            {"far", cam.far}};
}

Camera camera_from_json(const json &j) {
    Camera cam;
    const json &k = j.at("intrinsics");
    cam.intrinsics.fx = k.at("fx").get<double>();
    cam.intrinsics.fy = k.at("fy").get<double>();
    cam.intrinsics.cx = k.at("cx").get<double>();
    cam.intrinsics.cy = k.at("cy").get<double>();
    cam.intrinsics.width = k.at("width").get<int>();
    cam.intrinsics.height = k.at("height").get<int>();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            cam.rotation(r, c) = j.at("rotation").at(r).at(c).get<double>();
        }
    }
    for (int i = 0; i < 3; ++i) {
        cam.translation[i] = j.at("translation").at(i).get<double>();
    }
    cam.near = j.at("near").get<double>();
    cam.far = j.at("far").get<double>();
    cam.validate();
    return cam;
}

json loss_curves(const std::vector<LossRecord> &history) {
    json curves = {{"total", json::array()}, {"rgb", json::array()},    {"mask", json::array()},
                   {"sds", json::array()},   {"entropy", json::array()}, {"splats", json::array()}};
    for (const LossRecord &r : history) {
        curves["total"].push_back(r.loss.total);
        curves["rgb"].push_back(r.loss.rgb);
        curves["mask"].push_back(r.loss.mask);
        curves["sds"].push_back(r.loss.sds);
        curves["entropy"].push_back(r.loss.entropy);
        curves["splats"].push_back(r.splats);
    }
    return curves;
}

ProgressFn progress_logger(const char *stage, int iterations) {
    return [stage, iterations](const LossRecord &r) {
        if (r.iteration % 50 == 0 || r.iteration + 1 == iterations) {
            spdlog::info("{} {}/{}: loss {:.6g} (rgb {:.6g}, mask {:.6g}, sds {:.6g}), {} splats",
                         stage, r.iteration + 1, iterations, r.loss.total, r.loss.rgb, r.loss.mask,
                         r.loss.sds, r.splats);
        }
    };
}

/// Prior plus the control provider that goes with it.
struct PriorHandle {
    std::unique_ptr<DiffusionPrior> prior;
    std::unique_ptr<ControlProvider> zero_control;
    const ControlProvider *control = nullptr;
};

/// Analytic prior over `known` (rendered at the anchor, shifted by the relative
/// pose), or a remote prior from the configured endpoint.
PriorHandle make_prior(const PipelineConfig &config, const Camera &anchor, Scene known,
                       const Vec3 &background) {
    PriorHandle h;
    if (config.prior.kind == "remote") {
        std::string endpoint = config.prior.endpoint;
        if (const char *env = std::getenv("SPLATEDIT_PRIOR_ENDPOINT"); env && *env) {
            endpoint = env;
        }
        if (endpoint.empty()) {
            throw ConfigError("prior.kind is remote but no prior.endpoint is set");
        }
        RemotePriorConfig rc = RemotePriorConfig::from_endpoint(endpoint);
        rc.timeout_ms = config.prior.timeout_ms;
        rc.retries = config.prior.retries;
        rc.max_in_flight = config.prior.max_in_flight;
        auto remote = std::make_unique<RemotePrior>(rc);
        h.control = remote.get();
        h.prior = std::move(remote);
        return h;
    }
    h.prior = std::make_unique<AnalyticGaussianPrior>(
        NoiseSchedule::scaled_linear(), LatentCodec::identity(),
        scene_view_mean(std::move(known), anchor, config.ring.frame(), background),
        config.prior.tau);
    h.zero_control = std::make_unique<ZeroControlProvider>();
    h.control = h.zero_control.get();
    return h;
}

Scene analytic_target(const PipelineConfig &config) {
    if (config.prior.kind != "analytic") {
        return {};
    }
    if (config.prior.target_scene.empty()) {
        throw ConfigError("the analytic prior needs prior.target_scene");
    }
    return load_object(config.prior.target_scene, config.bbox);
}

/// `count` cameras evenly spaced in azimuth at the ring elevation, starting at `azimuth0`.
std::vector<Camera> orbit_cameras(const AzimuthRing &ring, int count, double azimuth0 = 0.0,
                                  double elevation = std::nan("")) {
    const OrbitFrame frame = ring.frame();
    const double el = std::isnan(elevation) ? ring.elevation_deg : elevation;
    std::vector<Camera> cams;
    for (int i = 0; i < count; ++i) {
        const double az = wrap_degrees(azimuth0 + i * 360.0 / count);
        cams.push_back(frame.camera({az, el, ring.radius}, ring.intrinsics, ring.near, ring.far));
    }
    return cams;
}

Image gallery(const Scene &scene, const std::vector<Camera> &cams, const Vec3 &background,
              const RenderOptions &opts, int columns) {
    std::vector<Image> frames;
    frames.reserve(cams.size());
    for (const Camera &cam : cams) {
        frames.push_back(render(scene, cam, background, opts).color);
    }
    return tile_images(frames, std::min<int>(columns, static_cast<int>(frames.size())));
}

double anchor_psnr(const Scene &object, const AnchorTarget &target, const Vec3 &background,
                   const RenderOptions &opts) {
    const RenderOutput out = render(object, target.camera, background, opts);
    return masked_psnr(out.color, target.foreground_rgb, target.foreground_mask);
}

InpaintBundle read_bundle(const fs::path &dir) {
    return InpaintBundle::from_json(read_json(dir / "inpaint_bundle.json"));
}

const Vec3 kSceneBackground = Vec3::Zero();

} // namespace

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const GuidanceUnavailableError &e) {
        spdlog::error("prior failure: {}", e.what());
        return kExitPrior;
    } catch (const DegenerateInputError &e) {
        spdlog::error("degenerate input: {}", e.what());
        return kExitDegenerate;
    } catch (const ValidationError &e) {
        spdlog::error("invalid data: {}", e.what());
        return kExitDegenerate;
    } catch (const FormatError &e) {
        spdlog::error("malformed input: {}", e.what());
        return kExitDegenerate;
    } catch (const DivergenceError &e) {
        spdlog::error("optimization diverged: {}", e.what());
        return kExitDegenerate;
    } catch (const std::exception &e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (...) {
        spdlog::error("unknown error");
        return kExitConfig;
    }
}

json InpaintBundle::to_json() const {
    return {{"anchor_index", anchor_index},        {"anchor_camera", camera_to_json(anchor)},
            {"render", render_png},                {"depth", depth_png},
            {"bbox_mask", bbox_mask_png},          {"inpainted", inpainted_png},
            {"foreground_mask", foreground_mask_png}};
}

InpaintBundle InpaintBundle::from_json(const json &j) {
    try {
        InpaintBundle b;
        b.anchor_index = j.at("anchor_index").get<int>();
        b.anchor = camera_from_json(j.at("anchor_camera"));
        b.render_png = j.value("render", b.render_png);
        b.depth_png = j.value("depth", b.depth_png);
        b.bbox_mask_png = j.value("bbox_mask", b.bbox_mask_png);
        b.inpainted_png = j.value("inpainted", b.inpainted_png);
        b.foreground_mask_png = j.value("foreground_mask", b.foreground_mask_png);
        return b;
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("malformed inpaint bundle: {}", e.what()));
    } catch (const InvalidParameterError &e) {
        throw FormatError(fmt::format("malformed inpaint bundle camera: {}", e.what()));
    }
}

Scene load_object(const fs::path &path, const Box &bbox) {
    Scene loaded = load_scene(path);
    return Scene::uniform(loaded.splats(), SplatTag::Object, bbox);
}

Scene background_scene(const Scene &scene, const PipelineConfig &config) {
    if (config.compose_mode == ComposeMode::Insert) {
        return Scene::uniform(scene.splats(), SplatTag::Background, scene.bbox());
    }
    return excise_bbox(scene, config.bbox);
}

double masked_psnr(const Image &a, const Image &b, const Image &mask) {
    require_same_shape(a, b, "masked_psnr");
    if (!mask.same_extent(a) || mask.channels() != 1) {
        throw InvalidParameterError("masked_psnr: mask must be 1 x H x W like the images");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < a.pixels(); ++p) {
        if (mask.data()[p] <= 0.5) {
            continue;
        }
        for (int c = 0; c < a.channels(); ++c) {
            const double d = a.plane(c)[p] - b.plane(c)[p];
            sum += d * d;
        }
        n += static_cast<std::size_t>(a.channels());
    }
    if (n == 0) {
        throw DegenerateInputError("masked_psnr: empty mask");
    }
    return -10.0 * std::log10(std::max(sum / static_cast<double>(n), 1e-10));
}

double mask_mae(const Image &rendered_mask, const Image &target_mask) {
    require_same_shape(rendered_mask, target_mask, "mask_mae");
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered_mask.size(); ++i) {
        sum += std::abs(rendered_mask.data()[i] - target_mask.data()[i]);
    }
    return rendered_mask.empty() ? 0.0 : sum / static_cast<double>(rendered_mask.size());
}

AnchorTarget import_anchor_target(const fs::path &dir, const InpaintBundle &bundle) {
    AnchorTarget target;
    target.camera = bundle.anchor;
    target.foreground_rgb = as_rgb(read_png(dir / bundle.inpainted_png));
    const Image mask = read_png(dir / bundle.foreground_mask_png);
    target.foreground_mask = threshold(mask.channels() == 1 ? mask : value_channel(mask));
    const Intrinsics &k = bundle.anchor.intrinsics;
    for (const Image *img : {&target.foreground_rgb, &target.foreground_mask}) {
        if (img->width() != k.width || img->height() != k.height) {
            throw ValidationError(fmt::format(
                "imported image is {}x{} but the anchor view is {}x{}", img->width(),
                img->height(), k.width, k.height));
        }
    }
    target.validate();
    return target;
}

AvpResult cmd_avp(const PipelineConfig &config) {
    prepare_output(config);
    const Scene scene = load_scene(config.scene);
    const RenderOptions opts = render_options(config);
    const std::vector<Camera> cams = sample_ring(config.ring);
    std::vector<AnchorCandidate> candidates;
    candidates.reserve(cams.size());
    for (const Camera &cam : cams) {
        candidates.push_back(
            {cam, render(scene, cam, kSceneBackground, opts).color, project_box_mask(config.bbox, cam)});
    }
    AvpResult result;
    result.report = score_views(candidates, config.avp);
    const ViewScore &anchor = result.report.anchor;

    std::string csv = "view_index,azimuth_deg,ratio,contrast,best_rotation\n";
    std::vector<double> ratios;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto &v = result.report.views[i];
        const double nan = std::nan("");
        ratios.push_back(v ? v->ratio : nan);
        csv += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", i,
                           config.ring.azimuth_of(static_cast<int>(i)), v ? v->ratio : nan,
                           v ? v->contrast : nan, v ? v->best_rotation : nan);
    }
    write_text(config.output / "avp.csv", csv);
    CurvePlotOptions plot;
    plot.highlight = anchor.view_index;
    write_png(plot_curve(ratios, plot), config.output / "avp_ratio.png");

    InpaintBundle &bundle = result.bundle;
    bundle.anchor_index = anchor.view_index;
    bundle.anchor = cams[static_cast<std::size_t>(anchor.view_index)];
    const RenderOutput view = render(scene, bundle.anchor, kSceneBackground, opts);
    const Image covered = threshold(view.mask);
    const bool any = std::any_of(covered.data().begin(), covered.data().end(),
                                 [](double m) { return m > 0.0; });
    const Image depth =
        any ? invert_depth(view.normalized_depth(0.0), covered) : Image(1, covered.height(), covered.width());
    write_png(view.color, config.output / bundle.render_png);
    write_png(depth, config.output / bundle.depth_png, 16);
    write_png(project_box_mask(config.bbox, bundle.anchor), config.output / bundle.bbox_mask_png);
    write_text(config.output / "inpaint_bundle.json", bundle.to_json().dump(2) + "\n");
    spdlog::info("anchor view {} (azimuth {:.4g}, rotation {:g}, ratio {:.4f})", anchor.view_index,
                 config.ring.azimuth_of(anchor.view_index), anchor.best_rotation, anchor.ratio);
    return result;
}

Scene cmd_lift(const PipelineConfig &config) {
    prepare_output(config);
    const InpaintBundle bundle = read_bundle(config.inpaint_directory());
    const AnchorTarget target = import_anchor_target(config.inpaint_directory(), bundle);
    const StageConfig &stage = config.coarse;
    PriorHandle prior = make_prior(config, target.camera, analytic_target(config), stage.background);

    const double radius =
        config.init_radius > 0.0 ? config.init_radius : 0.5 * config.bbox.extents().maxCoeff();
    Scene object = init_sphere(config.init_count, config.bbox.center(), radius, config.seed);
    object.set_bbox(config.bbox);
    StageResult result = run_coarse(std::move(object), target, stage, *prior.prior,
                                    progress_logger("coarse", stage.iterations));

    save_scene(result.object, config.output / "object.ply");
    write_loss_csv(result.history, config.output / "coarse_losses.csv");
    const RenderOptions opts = render_options(config);
    const OrbitCoordinates anchor_coords = config.ring.frame().coordinates(target.camera.center());
    const auto cams = orbit_cameras(config.ring, config.turntable_frames, anchor_coords.azimuth_deg,
                                    anchor_coords.elevation_deg);
    write_png(gallery(result.object, cams, stage.background, opts, config.turntable_frames),
              config.output / "turntable.png");

    const RenderOutput anchor = render(result.object, target.camera, stage.background, opts);
    const json metrics = {
        {"anchor_psnr", masked_psnr(anchor.color, target.foreground_rgb, target.foreground_mask)},
        {"anchor_mask_mae", mask_mae(anchor.mask, target.foreground_mask)},
        {"splats", result.object.size()},
        {"iterations", stage.iterations},
        {"turntable_frames", config.turntable_frames},
        {"loss_curves", loss_curves(result.history)}};
    write_text(config.output / "metrics_lift.json", metrics.dump(2) + "\n");
    spdlog::info("lift done: {} splats, anchor PSNR {:.2f} dB", result.object.size(),
                 metrics["anchor_psnr"].get<double>());
    return std::move(result.object);
}

Scene cmd_enhance(const PipelineConfig &config, const fs::path &object_path) {
    prepare_output(config);
    const InpaintBundle bundle = read_bundle(config.inpaint_directory());
    const AnchorTarget target = import_anchor_target(config.inpaint_directory(), bundle);
    const StageConfig &stage = config.enhance;
    const Scene background = background_scene(load_scene(config.scene), config);
    const Scene background_before = background;
    Scene object = load_object(object_path, config.bbox);

    Scene known;
    if (config.prior.kind == "analytic") {
        known = merge_scenes(background, analytic_target(config));
    }
    PriorHandle prior = make_prior(config, target.camera, std::move(known), stage.background);

    const RenderOptions opts = render_options(config);
    const double psnr_before = anchor_psnr(object, target, stage.background, opts);
    const Image merged_before =
        render(merge_scenes(background, object), target.camera, stage.background, opts).color;
    StageResult result =
        run_enhance(std::move(object), background, target, stage, config.prompt, *prior.prior,
                    *prior.control, progress_logger("enhance", stage.iterations));
    const double psnr_after = anchor_psnr(result.object, target, stage.background, opts);
    const bool unchanged = background == background_before;

    save_scene(result.object, config.output / "object_enhanced.ply");
    write_loss_csv(result.history, config.output / "enhance_losses.csv");
    const Image merged_after =
        render(merge_scenes(background, result.object), target.camera, stage.background, opts).color;
    write_png(tile_images({target.foreground_rgb, merged_before, merged_after}, 3),
              config.output / "enhance_compare.png");

    const json metrics = {{"anchor_psnr_before", psnr_before},
                          {"anchor_psnr_after", psnr_after},
                          {"background_unchanged", unchanged},
                          {"background_splats", background.size()},
                          {"splats", result.object.size()},
                          {"iterations", stage.iterations},
                          {"loss_curves", loss_curves(result.history)}};
    write_text(config.output / "metrics_enhance.json", metrics.dump(2) + "\n");
    if (!unchanged) {
        throw ValidationError("background splats changed during enhancement");
    }
    spdlog::info("enhance done: anchor PSNR {:.2f} -> {:.2f} dB", psnr_before, psnr_after);
    return std::move(result.object);
}

Scene cmd_compose(const PipelineConfig &config, const fs::path &object_path) {
    prepare_output(config);
    const Scene background = background_scene(load_scene(config.scene), config);
    const Scene object = load_object(object_path, config.bbox);
    Scene final_scene = merge_scenes(background, object);
    save_scene(final_scene, config.output / "edited_scene.ply");
    const auto cams = orbit_cameras(config.ring, config.gallery_views);
    write_png(gallery(final_scene, cams, kSceneBackground, render_options(config), 4),
              config.output / "gallery.png");
    spdlog::info("composed {} background + {} object splats", background.size(), object.size());
    return final_scene;
}

void cmd_render(const PipelineConfig &config, const fs::path &scene_path, int views) {
    if (views <= 0) {
        throw ConfigError("render needs at least one view");
    }
    prepare_output(config);
    const Scene scene = load_scene(scene_path);
    const RenderOptions opts = render_options(config);
    std::vector<Image> frames;
    int index = 0;
    for (const Camera &cam : orbit_cameras(config.ring, views)) {
        frames.push_back(render(scene, cam, kSceneBackground, opts).color);
        write_png(frames.back(), config.output / fmt::format("render_{:02d}.png", index++));
    }
    write_png(tile_images(frames, std::min(views, 4)), config.output / "render_gallery.png");
}

} // namespace splatedit
