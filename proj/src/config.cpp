// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/error.hpp"
#include "splatedit/pipeline.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace splatedit {

namespace {

/// One YAML mapping; remembers which keys were read so leftovers can be rejected.
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            throw ConfigError(fmt::format("'{}' must be a mapping", display()));
        }
    }

    bool has(const std::string &key) const { return node_.IsMap() && node_[key]; }

    template <typename T>
    void get(const std::string &key, T &out) {
        seen_.insert(key);
        if (!has(key)) {
            return;
        }
        try {
            out = node_[key].as<T>();
        } catch (const YAML::Exception &) {
            throw ConfigError(fmt::format("'{}' has the wrong type", name(key)));
        }
    }

    template <typename T>
    void require(const std::string &key, T &out) {
        if (!has(key)) {
            throw ConfigError(fmt::format("missing required key '{}'", name(key)));
        }
        get(key, out);
    }

    void get_vec3(const std::string &key, Vec3 &out) {
        std::vector<double> v;
        get(key, v);
        if (!has(key)) {
            return;
        }
        if (v.size() != 3) {
            throw ConfigError(fmt::format("'{}' must have 3 entries", name(key)));
        }
        out = Vec3(v[0], v[1], v[2]);
    }

    void get_path(const std::string &key, std::filesystem::path &out,
                  const std::filesystem::path &base) {
        std::string s;
        get(key, s);
        if (has(key)) {
            const std::filesystem::path p(s);
            out = p.is_absolute() ? p : base / p;
        }
    }

    /// A scalar (constant) or a [start, end] pair.
    void get_ramp(const std::string &key, Ramp &out) {
        seen_.insert(key);
        if (!has(key)) {
            return;
        }
        const YAML::Node n = node_[key];
        try {
            if (n.IsScalar()) {
                out = Ramp::constant(n.as<double>());
                return;
            }
            const auto v = n.as<std::vector<double>>();
            if (v.size() == 2) {
                out = Ramp{v[0], v[1]};
                return;
            }
        } catch (const YAML::Exception &) {
        }
        throw ConfigError(fmt::format("'{}' must be a number or a [start, end] pair", name(key)));
    }

    Section child(const std::string &key) {
        seen_.insert(key);
        return Section(has(key) ? node_[key] : YAML::Node(), name(key));
    }

    /// Throws ConfigError for any key that was never requested.
    void finish() const {
        if (!node_.IsMap()) {
            return;
        }
        for (const auto &kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.contains(key)) {
                throw ConfigError(fmt::format("unknown key '{}'", name(key)));
            }
        }
    }

private:
    std::string name(const std::string &key) const {
        return path_.empty() ? key : path_ + "." + key;
    }
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_stage(Section s, StageConfig &stage) {
    s.get("iterations", stage.iterations);
    s.get_ramp("lambda_rgb", stage.lambda_rgb);
    s.get_ramp("lambda_mask", stage.lambda_mask);
    s.get_ramp("lambda_sds", stage.lambda_sds);
    {
        Section lr = s.child("lr");
        lr.get("position", stage.lr.position);
        lr.get("rotation", stage.lr.rotation);
        lr.get("scale", stage.lr.scale);
        lr.get("opacity", stage.lr.opacity);
        lr.get("color", stage.lr.color);
        lr.finish();
    }
    s.get("geometry_lr_factor", stage.geometry_lr_factor);
    s.get("opacity_entropy_weight", stage.opacity_entropy_weight);
    s.get("p_anchor", stage.sampler.p_anchor);
    s.get("sampler_radius", stage.sampler.radius);
    std::vector<double> elevation;
    s.get("elevation_range", elevation);
    if (s.has("elevation_range")) {
        if (elevation.size() != 2 || elevation[0] > elevation[1]) {
            throw ConfigError("'elevation_range' must be [min, max] with min <= max");
        }
        stage.sampler.elevation_min_deg = elevation[0];
        stage.sampler.elevation_max_deg = elevation[1];
    }
    {
        Section d = s.child("densify");
        d.get("interval", stage.densify.interval);
        d.get("start", stage.densify.start);
        d.get("stop", stage.densify.stop);
        d.get("grad_threshold", stage.densify.grad_threshold);
        d.get("clone_scale_fraction", stage.densify.clone_scale_fraction);
        d.get("prune_interval", stage.densify.prune_interval);
        d.get("opacity_prune_threshold", stage.densify.opacity_prune_threshold);
        d.get("floater_margin", stage.densify.floater_margin);
        d.get("max_splats", stage.densify.max_splats);
        d.finish();
    }
    {
        Section sds = s.child("sds");
        sds.get("t_min", stage.sds.t_min);
        sds.get("t_max", stage.sds.t_max);
        sds.get("t_max_end", stage.t_max_end);
        sds.get("guidance_scale", stage.sds.guidance_scale);
        std::string weight;
        sds.get("weight", weight);
        if (sds.has("weight")) {
            if (weight == "constant") {
                stage.sds.weight = WeightFn::Constant;
            } else if (weight == "one_minus_alphabar") {
                stage.sds.weight = WeightFn::OneMinusAlphaBar;
            } else {
                throw ConfigError(fmt::format(
                    "'sds.weight' must be constant or one_minus_alphabar, got '{}'", weight));
            }
        }
        sds.finish();
    }
    s.get_vec3("background", stage.background);
    s.get("checkpoint_interval", stage.checkpoint_interval);
    s.finish();
}

} // namespace

void PipelineConfig::finalize() {
    ring.center = bbox.center();
    ring.intrinsics = Intrinsics::from_fov(ring.intrinsics.width, ring.intrinsics.height, fov_deg);
    avp.threads = threads;
    const double radius =
        init_radius > 0.0 ? init_radius : 0.5 * bbox.extents().maxCoeff();
    int index = 0;
    for (StageConfig *stage : {&coarse, &enhance}) {
        stage->seed = seed + static_cast<std::uint64_t>(index++);
        stage->threads = threads;
        stage->sampler.center = ring.center;
        stage->sampler.up = ring.up;
        stage->sampler.intrinsics = ring.intrinsics;
        stage->sampler.near = ring.near;
        stage->sampler.far = ring.far;
        stage->densify.radius = radius;
        stage->checkpoint_dir = output / "checkpoints";
    }
}

void PipelineConfig::validate() const {
    if (scene.empty() || !std::filesystem::exists(scene)) {
        throw ConfigError(fmt::format("scene '{}' does not exist", scene.string()));
    }
    if (!bbox.valid()) {
        throw ConfigError("bbox must have positive, finite extents");
    }
    if (ring.count < 2 || !(ring.radius > 0.0)) {
        throw ConfigError("ring.count must be >= 2 and ring.radius > 0");
    }
    if (ring.intrinsics.width <= 0 || ring.intrinsics.height <= 0 || !(fov_deg > 0.0 && fov_deg < 180.0)) {
        throw ConfigError("ring image size must be positive and fov in (0, 180)");
    }
    if (prior.kind != "analytic" && prior.kind != "remote") {
        throw ConfigError(fmt::format("prior.kind must be analytic or remote, got '{}'", prior.kind));
    }
    if (!prior.target_scene.empty() && !std::filesystem::exists(prior.target_scene)) {
        throw ConfigError(
            fmt::format("prior.target_scene '{}' does not exist", prior.target_scene.string()));
    }
    if (init_count <= 0 || init_radius < 0.0) {
        throw ConfigError("init.count must be > 0 and init.radius >= 0");
    }
    if (gallery_views <= 0 || turntable_frames <= 0) {
        throw ConfigError("compose.gallery_views and compose.turntable_frames must be > 0");
    }
    if (threads < 0) {
        throw ConfigError("threads must be >= 0");
    }
    try {
        coarse.validate();
        enhance.validate();
    } catch (const InvalidParameterError &e) {
        throw ConfigError(e.what());
    }
}

PipelineConfig parse_config(const std::string &yaml, const std::filesystem::path &base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml);
    } catch (const YAML::Exception &e) {
        throw ConfigError(fmt::format("config is not valid YAML: {}", e.what()));
    }
    PipelineConfig cfg;
    cfg.ring.intrinsics.width = 128;
    cfg.ring.intrinsics.height = 128;
    cfg.ring.radius = 3.0;
    cfg.ring.elevation_deg = 15.0;
    Section s(root, "");
    s.get_path("scene", cfg.scene, base_dir);
    if (!s.has("scene")) {
        throw ConfigError("missing required key 'scene'");
    }
    s.get_path("output", cfg.output, base_dir);
    if (!s.has("output")) {
        cfg.output = base_dir / cfg.output;
    }
    s.get_path("inpaint_dir", cfg.inpaint_dir, base_dir);
    s.get("seed", cfg.seed);
    s.get("threads", cfg.threads);
    s.get("prompt", cfg.prompt);
    {
        Section b = s.child("bbox");
        if (!s.has("bbox")) {
            throw ConfigError("missing required key 'bbox'");
        }
        Vec3 center = Vec3::Zero();
        Vec3 extents = Vec3::Zero();
        double yaw = 0.0;
        b.get_vec3("center", center);
        if (!b.has("extents")) {
            throw ConfigError("missing required key 'bbox.extents'");
        }
        b.get_vec3("extents", extents);
        b.get("yaw", yaw);
        b.finish();
        cfg.bbox = Box::from_center(center, extents, yaw);
    }
    {
        Section r = s.child("ring");
        r.get("count", cfg.ring.count);
        r.get("radius", cfg.ring.radius);
        r.get("elevation", cfg.ring.elevation_deg);
        r.get("width", cfg.ring.intrinsics.width);
        r.get("height", cfg.ring.intrinsics.height);
        r.get("fov", cfg.fov_deg);
        r.get("near", cfg.ring.near);
        r.get("far", cfg.ring.far);
        r.get_vec3("up", cfg.ring.up);
        r.finish();
    }
    {
        Section a = s.child("avp");
        std::string side = "right";
        a.get("bright_side", side);
        if (side == "left") {
            cfg.avp.bright_side = BrightSide::Left;
        } else if (side != "right") {
            throw ConfigError(fmt::format("'avp.bright_side' must be left or right, got '{}'", side));
        }
        a.get("rotations", cfg.avp.rotations);
        if (cfg.avp.rotations.empty()) {
            throw ConfigError("'avp.rotations' must not be empty");
        }
        a.finish();
    }
    {
        Section p = s.child("prior");
        p.get("kind", cfg.prior.kind);
        p.get("endpoint", cfg.prior.endpoint);
        p.get_path("target_scene", cfg.prior.target_scene, base_dir);
        p.get("tau", cfg.prior.tau);
        p.get("timeout_ms", cfg.prior.timeout_ms);
        p.get("retries", cfg.prior.retries);
        p.get("max_in_flight", cfg.prior.max_in_flight);
        p.finish();
    }
    {
        Section i = s.child("init");
        i.get("count", cfg.init_count);
        i.get("radius", cfg.init_radius);
        i.finish();
    }
    cfg.coarse.sampler.radius = cfg.ring.radius;
    cfg.enhance.sampler.radius = cfg.ring.radius;
    parse_stage(s.child("coarse"), cfg.coarse);
    parse_stage(s.child("enhance"), cfg.enhance);
    {
        Section c = s.child("compose");
        std::string mode = "replace";
        c.get("mode", mode);
        if (mode == "insert") {
            cfg.compose_mode = ComposeMode::Insert;
        } else if (mode != "replace") {
            throw ConfigError(fmt::format("'compose.mode' must be replace or insert, got '{}'", mode));
        }
        c.get("gallery_views", cfg.gallery_views);
        c.get("turntable_frames", cfg.turntable_frames);
        c.finish();
    }
    s.finish();
    cfg.finalize();
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), std::filesystem::absolute(path).parent_path());
}

} // namespace splatedit
