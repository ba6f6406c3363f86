// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end editing pipeline: anchor proposal, inpainting hand-off,
// coarse lift, enhancement and composition.
#pragma once

#include "splatedit/anchor_view.hpp"
#include "splatedit/optimizer.hpp"
#include "splatedit/scene.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace splatedit {

enum class ComposeMode { Replace, Insert };

struct PriorSettings {
    std::string kind = "analytic"; ///< "analytic" or "remote"
    std::string endpoint;          ///< remote only; SPLATEDIT_PRIOR_ENDPOINT overrides
    std::filesystem::path target_scene; ///< analytic only: object the prior knows
    double tau = 0.0;
    int timeout_ms = 30000;
    int retries = 2;
    int max_in_flight = 4;
};

/// Parsed pipeline configuration. Relative paths are resolved against the
/// directory of the config file.
struct PipelineConfig {
    std::filesystem::path scene;
    std::filesystem::path output = "out";
    std::filesystem::path inpaint_dir; ///< defaults to `output`
    std::uint64_t seed = 0;
    int threads = 1;
    std::string prompt = "an object";
    Box bbox;
    AzimuthRing ring;
    double fov_deg = 45.0;
    AvpOptions avp;
    PriorSettings prior;
    int init_count = 2000;
    double init_radius = 0.0; ///< 0 = half the largest bbox extent
    StageConfig coarse;
    StageConfig enhance = default_enhance_config();
    ComposeMode compose_mode = ComposeMode::Replace;
    int gallery_views = 8;
    int turntable_frames = 8;

    const std::filesystem::path &inpaint_directory() const {
        return inpaint_dir.empty() ? output : inpaint_dir;
    }

    /// Applies the seed, thread count, ring geometry and bbox to both stages.
    void finalize();
    /// Throws ConfigError on inconsistent values.
    void validate() const;
};

/// Loads a YAML config. Unknown keys, wrong types and missing required keys
/// raise ConfigError naming the offending key.
PipelineConfig load_config(const std::filesystem::path &path);
PipelineConfig parse_config(const std::string &yaml, const std::filesystem::path &base_dir);

/// Exit-code contract of the CLI.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitDegenerate = 2, kExitPrior = 3 };

/// Maps the exception in flight to an exit code and logs it.
int exit_code_for_current_exception();

/// Hand-off record written by `avp` and read by `lift`.
struct InpaintBundle {
    int anchor_index = 0;
    Camera anchor;
    std::string render_png = "anchor_render.png";
    std::string depth_png = "anchor_depth.png";
    std::string bbox_mask_png = "anchor_bbox_mask.png";
    std::string inpainted_png = "inpainted.png";
    std::string foreground_mask_png = "foreground_mask.png";

    nlohmann::json to_json() const;
    static InpaintBundle from_json(const nlohmann::json &j);
};

/// Object splats with the config bbox and Object tags.
Scene load_object(const std::filesystem::path &path, const Box &bbox);
/// The input scene minus the bbox contents (Replace) or the whole scene (Insert).
Scene background_scene(const Scene &scene, const PipelineConfig &config);

/// Mean squared error and PSNR over pixels where mask > 0.5.
double masked_psnr(const Image &a, const Image &b, const Image &mask);
double mask_mae(const Image &rendered_mask, const Image &target_mask);

struct AvpResult {
    AvpReport report;
    InpaintBundle bundle;
};

/// Renders the ring, proposes the anchor and writes avp.csv, avp_ratio.png,
/// the anchor render, inverted 16-bit depth, bbox mask and inpaint_bundle.json.
AvpResult cmd_avp(const PipelineConfig &config);

/// Coarse lift against the imported inpainting; writes object.ply,
/// coarse_losses.csv, turntable.png and metrics_lift.json.
Scene cmd_lift(const PipelineConfig &config);

/// Texture enhancement of `object_path` over the background; writes
/// object_enhanced.ply, enhance_losses.csv, enhance_compare.png and metrics_enhance.json.
Scene cmd_enhance(const PipelineConfig &config, const std::filesystem::path &object_path);

/// Composes the final scene; writes edited_scene.ply and gallery.png.
Scene cmd_compose(const PipelineConfig &config, const std::filesystem::path &object_path);

/// Renders `scene_path` at `views` ring views into render_XX.png plus a gallery.
void cmd_render(const PipelineConfig &config, const std::filesystem::path &scene_path, int views);

/// AnchorTarget from an inpaint bundle directory; thresholds the foreground mask at 0.5.
AnchorTarget import_anchor_target(const std::filesystem::path &dir, const InpaintBundle &bundle);

} // namespace splatedit
