// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Images cross the boundary as float64 arrays shaped (C, H, W).
#include "splatedit/anchor_view.hpp"
#include "splatedit/error.hpp"
#include "splatedit/guidance.hpp"
#include "splatedit/pipeline.hpp"
#include "splatedit/renderer.hpp"
#include "splatedit/scene.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace splatedit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array &a) {
    if (a.ndim() == 2) {
        Image img(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
        std::copy(a.data(), a.data() + a.size(), img.data().begin());
        return img;
    }
    if (a.ndim() != 3) {
        throw py::value_error("expected an array shaped (C, H, W) or (H, W)");
    }
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
              static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), img.data().begin());
    return img;
}

Array to_array(const Image &img) {
    Array a({img.channels(), img.height(), img.width()});
    std::copy(img.data().begin(), img.data().end(), a.mutable_data());
    return a;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat column_block(const Scene &s, int cols, const std::function<void(const GaussianSplat &, double *)> &f) {
    RowMat m(static_cast<Eigen::Index>(s.size()), cols);
    for (std::size_t i = 0; i < s.size(); ++i) {
        f(s.splat(i), m.row(static_cast<Eigen::Index>(i)).data());
    }
    return m;
}

Scene scene_from_arrays(const RowMat &positions, const RowMat &rotations, const RowMat &log_scales,
                        const Eigen::VectorXd &opacity_logits, const RowMat &colors,
                        bool object) {
    const Eigen::Index n = positions.rows();
    if (positions.cols() != 3 || rotations.cols() != 4 || log_scales.cols() != 3 ||
        colors.cols() != 3 || rotations.rows() != n || log_scales.rows() != n ||
        colors.rows() != n || opacity_logits.size() != n) {
        throw py::value_error("expected (N,3) positions, (N,4) rotations, (N,3) log scales, "
                              "(N,) opacity logits and (N,3) colors");
    }
    std::vector<GaussianSplat> splats(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        GaussianSplat &s = splats[static_cast<std::size_t>(i)];
        s.position = positions.row(i).transpose();
        s.rotation = rotations.row(i).transpose();
        s.log_scale = log_scales.row(i).transpose();
        s.opacity_logit = opacity_logits[i];
        s.color = colors.row(i).transpose();
    }
    const Box bounds = bounds_of(splats);
    return Scene::uniform(std::move(splats), object ? SplatTag::Object : SplatTag::Background,
                          bounds);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gaussian splat scene editing core";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidParameterError>(m, "InvalidParameterError", error.ptr());
    py::register_exception<FormatError>(m, "FormatError", error.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", error.ptr());
    py::register_exception<IoError>(m, "IoError", error.ptr());
    py::register_exception<DegenerateInputError>(m, "DegenerateInputError", error.ptr());
    py::register_exception<GuidanceUnavailableError>(m, "GuidanceUnavailableError", error.ptr());
    py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

    py::class_<Box>(m, "Box")
        .def(py::init(&Box::from_center), py::arg("center"), py::arg("extents"),
             py::arg("yaw_deg") = 0.0)
        .def_readonly("min", &Box::min)
        .def_readonly("max", &Box::max)
        .def_readonly("yaw_deg", &Box::yaw_deg)
        .def("center", &Box::center)
        .def("extents", &Box::extents)
        .def("contains", &Box::contains);

    py::class_<Scene>(m, "Scene")
        .def_static("from_arrays", &scene_from_arrays, py::arg("positions"), py::arg("rotations"),
                    py::arg("log_scales"), py::arg("opacity_logits"), py::arg("colors"),
                    py::arg("object") = false)
        .def("__len__", &Scene::size)
        .def_property_readonly("positions", [](const Scene &s) {
            return column_block(s, 3, [](const GaussianSplat &g, double *r) {
                std::copy(g.position.data(), g.position.data() + 3, r);
            });
        })
        .def_property_readonly("rotations", [](const Scene &s) {
            return column_block(s, 4, [](const GaussianSplat &g, double *r) {
                std::copy(g.rotation.data(), g.rotation.data() + 4, r);
            });
        })
        .def_property_readonly("log_scales", [](const Scene &s) {
            return column_block(s, 3, [](const GaussianSplat &g, double *r) {
                std::copy(g.log_scale.data(), g.log_scale.data() + 3, r);
            });
        })
        .def_property_readonly("opacities", [](const Scene &s) {
            return column_block(s, 1, [](const GaussianSplat &g, double *r) { *r = g.opacity(); });
        })
        .def_property_readonly("colors", [](const Scene &s) {
            return column_block(s, 3, [](const GaussianSplat &g, double *r) {
                std::copy(g.color.data(), g.color.data() + 3, r);
            });
        })
        .def_property_readonly("object_count", [](const Scene &s) { return s.count(SplatTag::Object); })
        .def_property_readonly("bbox", &Scene::bbox)
        .def("__eq__", [](const Scene &a, const Scene &b) { return a == b; });

    m.def("load_scene", &load_scene, py::arg("path"));
    m.def("save_scene", &save_scene, py::arg("scene"), py::arg("path"));
    m.def("excise_bbox", &excise_bbox, py::arg("scene"), py::arg("bbox"));
    m.def("merge_scenes", &merge_scenes, py::arg("background"), py::arg("object"));

    py::class_<Camera>(m, "Camera")
        .def_property_readonly("width", [](const Camera &c) { return c.intrinsics.width; })
        .def_property_readonly("height", [](const Camera &c) { return c.intrinsics.height; })
        .def_property_readonly("rotation", [](const Camera &c) { return c.rotation; })
        .def_property_readonly("translation", [](const Camera &c) { return c.translation; })
        .def("center", &Camera::center)
        .def("forward", &Camera::forward);

    m.def(
        "orbit_camera",
        [](double azimuth, double elevation, double radius, int width, int height, double fov,
           const Vec3 &center, const Vec3 &up) {
            return OrbitFrame{center, up}.camera({azimuth, elevation, radius},
                                                 Intrinsics::from_fov(width, height, fov), 0.01, 100.0);
        },
        py::arg("azimuth_deg"), py::arg("elevation_deg"), py::arg("radius"), py::arg("width"),
        py::arg("height"), py::arg("fov_deg") = 45.0, py::arg("center") = Vec3::Zero(),
        py::arg("up") = Vec3::UnitZ());

    m.def(
        "render",
        [](const Scene &scene, const Camera &camera, const Vec3 &background, int threads) {
            const RenderOutput out = render(scene, camera, background, {.threads = threads});
            py::dict d;
            d["color"] = to_array(out.color);
            d["depth"] = to_array(out.depth);
            d["mask"] = to_array(out.mask);
            return d;
        },
        py::arg("scene"), py::arg("camera"), py::arg("background") = Vec3::Zero(),
        py::arg("threads") = 1);
    m.def("project_box_mask", [](const Box &b, const Camera &c) { return to_array(project_box_mask(b, c)); });

    m.def("value_channel", [](const Array &rgb) { return to_array(value_channel(to_image(rgb))); });
    m.def(
        "brightness_ratio",
        [](const Array &v, double rotation, std::optional<Array> mask) {
            return brightness_ratio(to_image(v), rotation, mask ? to_image(*mask) : Image{});
        },
        py::arg("v"), py::arg("rotation_deg"), py::arg("mask") = py::none());
    m.def(
        "propose_anchor",
        [](const std::vector<Array> &views, const std::string &bright_side) {
            std::vector<AnchorCandidate> candidates;
            for (const Array &v : views) {
                candidates.push_back({Camera{}, to_image(v), Image{}});
            }
            AvpOptions opts;
            opts.threads = 1;
            opts.bright_side = bright_side == "left" ? BrightSide::Left : BrightSide::Right;
            const ViewScore s = propose_anchor(candidates, opts);
            py::dict d;
            d["view_index"] = s.view_index;
            d["best_rotation"] = s.best_rotation;
            d["ratio"] = s.ratio;
            d["contrast"] = s.contrast;
            return d;
        },
        py::arg("views"), py::arg("bright_side") = "right");

    m.def("alpha_bar", [](int t) { return NoiseSchedule::scaled_linear().alpha_bar(t); });
    m.def("add_noise", [](const Array &x0, int t, const Array &noise) {
        return to_array(add_noise(to_image(x0), t, to_image(noise), NoiseSchedule::scaled_linear()));
    });
    m.def("cfg_combine", [](const Array &c, const Array &u, double s) {
        return to_array(cfg_combine(to_image(c), to_image(u), s));
    });

    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def_readwrite("seed", &PipelineConfig::seed)
        .def_readwrite("threads", &PipelineConfig::threads)
        .def_readwrite("prompt", &PipelineConfig::prompt)
        .def_readwrite("output", &PipelineConfig::output)
        .def_readonly("scene", &PipelineConfig::scene)
        .def_readonly("bbox", &PipelineConfig::bbox)
        .def("finalize", &PipelineConfig::finalize)
        .def("validate", &PipelineConfig::validate);
    m.def("load_config", &load_config, py::arg("path"));

    m.def("cmd_avp", [](const PipelineConfig &c) {
        const AvpResult r = cmd_avp(c);
        py::dict d;
        d["anchor_index"] = r.report.anchor.view_index;
        d["best_rotation"] = r.report.anchor.best_rotation;
        d["ratio"] = r.report.anchor.ratio;
        return d;
    });
    m.def("cmd_lift", &cmd_lift, py::arg("config"));
    m.def("cmd_enhance", &cmd_enhance, py::arg("config"), py::arg("object_path"));
    m.def("cmd_compose", &cmd_compose, py::arg("config"), py::arg("object_path"));
    m.def("cmd_render", &cmd_render, py::arg("config"), py::arg("scene_path"), py::arg("views"));
}
