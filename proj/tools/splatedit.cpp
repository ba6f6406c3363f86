// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: avp | lift | enhance | compose | render.
#include "splatedit/error.hpp"
#include "splatedit/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <optional>

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> bright_side;
    std::optional<int> threads;
    bool quiet = false;
};

splatedit::PipelineConfig load(const Overrides &o) {
    splatedit::PipelineConfig cfg = splatedit::load_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.out) {
        cfg.output = std::filesystem::absolute(*o.out);
    }
    if (o.bright_side) {
        cfg.avp.bright_side =
            *o.bright_side == "left" ? splatedit::BrightSide::Left : splatedit::BrightSide::Right;
    }
    if (o.threads) {
        cfg.threads = *o.threads;
    }
    cfg.finalize();
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Gaussian splat scene editing"};
    app.require_subcommand(1);
    Overrides o;
    std::string object;
    std::string scene;
    int views = 0;

    const auto common = [&](CLI::App *cmd) {
        cmd->add_option("--config", o.config, "pipeline config (YAML)")->required();
        cmd->add_option("--seed", o.seed, "override the config seed");
        cmd->add_option("--out", o.out, "override the output directory");
        cmd->add_option("--bright-side", o.bright_side, "preferred lit side of the anchor")
            ->check(CLI::IsMember({"left", "right"}));
        cmd->add_option("--threads", o.threads, "worker threads (0 = all, 1 = deterministic serial)")
            ->check(CLI::NonNegativeNumber);
        cmd->add_flag("-q,--quiet", o.quiet, "only log warnings and errors");
    };
    CLI::App *avp = app.add_subcommand("avp", "propose the anchor view and export the inpainting inputs");
    CLI::App *lift = app.add_subcommand("lift", "coarse lift of the inpainted object");
    CLI::App *enhance = app.add_subcommand("enhance", "texture enhancement over the background");
    CLI::App *compose = app.add_subcommand("compose", "write the edited scene and a gallery");
    CLI::App *render = app.add_subcommand("render", "render a scene around the ring");
    for (CLI::App *cmd : {avp, lift, enhance, compose, render}) {
        common(cmd);
    }
    enhance->add_option("--object", object, "object PLY (default <out>/object.ply)");
    compose->add_option("--object", object, "object PLY (default <out>/object_enhanced.ply)");
    render->add_option("--scene", scene, "scene PLY (default <out>/edited_scene.ply)");
    render->add_option("--views", views, "number of views (default compose.gallery_views)")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return splatedit::kExitConfig;
    }

    spdlog::set_level(o.quiet ? spdlog::level::warn : spdlog::level::info);
    try {
        const splatedit::PipelineConfig cfg = load(o);
        const auto or_default = [&](const std::string &given, const char *name) {
            return given.empty() ? cfg.output / name : std::filesystem::path(given);
        };
        if (*avp) {
            splatedit::cmd_avp(cfg);
        } else if (*lift) {
            splatedit::cmd_lift(cfg);
        } else if (*enhance) {
            splatedit::cmd_enhance(cfg, or_default(object, "object.ply"));
        } else if (*compose) {
            splatedit::cmd_compose(cfg, or_default(object, "object_enhanced.ply"));
        } else {
            splatedit::cmd_render(cfg, or_default(scene, "edited_scene.ply"),
                                  views > 0 ? views : cfg.gallery_views);
        }
    } catch (...) {
        return splatedit::exit_code_for_current_exception();
    }
    return splatedit::kExitOk;
}
