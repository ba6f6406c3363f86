// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Binary little-endian PLY reader/writer for the standard 3DGS vertex layout.

#include "splatedit/error.hpp"
#include "splatedit/scene.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>

namespace splatedit {

static_assert(std::endian::native == std::endian::little,
              "PLY I/O assumes a little-endian host");

namespace {

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<ScalarType> parse_type(const std::string &name) {
    static const std::unordered_map<std::string, ScalarType> types = {
        {"char", ScalarType::Int8},     {"int8", ScalarType::Int8},
        {"uchar", ScalarType::UInt8},   {"uint8", ScalarType::UInt8},
        {"short", ScalarType::Int16},   {"int16", ScalarType::Int16},
        {"ushort", ScalarType::UInt16}, {"uint16", ScalarType::UInt16},
        {"int", ScalarType::Int32},     {"int32", ScalarType::Int32},
        {"uint", ScalarType::UInt32},   {"uint32", ScalarType::UInt32},
        {"float", ScalarType::Float32}, {"float32", ScalarType::Float32},
        {"double", ScalarType::Float64}, {"float64", ScalarType::Float64},
    };
    const auto it = types.find(name);
    if (it == types.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t type_size(ScalarType t) {
    switch (t) {
    case ScalarType::Int8:
    case ScalarType::UInt8: return 1;
    case ScalarType::Int16:
    case ScalarType::UInt16: return 2;
    case ScalarType::Int32:
    case ScalarType::UInt32:
    case ScalarType::Float32: return 4;
    case ScalarType::Float64: return 8;
    }
    return 0;
}

double read_scalar(const char *p, ScalarType t) {
    auto load = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    switch (t) {
    case ScalarType::Int8: return load(std::int8_t{});
    case ScalarType::UInt8: return load(std::uint8_t{});
    case ScalarType::Int16: return load(std::int16_t{});
    case ScalarType::UInt16: return load(std::uint16_t{});
    case ScalarType::Int32: return load(std::int32_t{});
    case ScalarType::UInt32: return load(std::uint32_t{});
    case ScalarType::Float32: return load(float{});
    case ScalarType::Float64: return load(double{});
    }
    return 0.0;
}

struct Property {
    std::string name;
    ScalarType type;
    std::size_t offset;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
    bool has_list = false;
    std::size_t stride = 0;
};

constexpr std::array<const char *, 14> kVertexProperties = {
    "x",       "y",       "z",       "f_dc_0",  "f_dc_1", "f_dc_2", "opacity",
    "scale_0", "scale_1", "scale_2", "rot_0",   "rot_1",  "rot_2",  "rot_3"};

std::vector<Element> parse_header(std::istream &in, const std::filesystem::path &path) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw FormatError(fmt::format("{}: missing 'ply' magic", path.string()));
    }
    std::vector<Element> elements;
    bool saw_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream tokens(line);
        std::string keyword;
        tokens >> keyword;
        if (keyword == "end_header") {
            if (!saw_format) {
                throw FormatError(fmt::format("{}: header has no format line", path.string()));
            }
            return elements;
        }
        if (keyword == "format") {
            std::string format;
            tokens >> format;
            if (format != "binary_little_endian") {
                throw FormatError(fmt::format("{}: unsupported PLY format '{}'", path.string(),
                                              format));
            }
            saw_format = true;
        } else if (keyword == "element") {
            Element e;
            tokens >> e.name >> e.count;
            if (!tokens) {
                throw FormatError(fmt::format("{}: malformed element line '{}'", path.string(), line));
            }
            elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (elements.empty()) {
                throw FormatError(fmt::format("{}: property before any element", path.string()));
            }
            Element &e = elements.back();
            std::string type_name;
            tokens >> type_name;
            if (type_name == "list") {
                e.has_list = true;
                continue;
            }
            std::string name;
            tokens >> name;
            const auto type = parse_type(type_name);
            if (!type || name.empty()) {
                throw FormatError(fmt::format("{}: unsupported property '{}'", path.string(), line));
            }
            e.properties.push_back({name, *type, e.stride});
            e.stride += type_size(*type);
        }
        // comment / obj_info lines are ignored
    }
    throw FormatError(fmt::format("{}: header is not terminated by end_header", path.string()));
}

} // namespace

Scene load_scene(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
    }
    const std::vector<Element> elements = parse_header(in, path);

    std::size_t skip_bytes = 0;
    const Element *vertex = nullptr;
    for (const auto &e : elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        if (e.has_list) {
            throw FormatError(fmt::format("{}: list element '{}' precedes vertex data",
                                          path.string(), e.name));
        }
        skip_bytes += e.count * e.stride;
    }
    if (vertex == nullptr) {
        throw FormatError(fmt::format("{}: no vertex element", path.string()));
    }
    if (vertex->has_list) {
        throw FormatError(fmt::format("{}: vertex element has list properties", path.string()));
    }

    std::array<const Property *, kVertexProperties.size()> props{};
    bool has_rest = false;
    for (std::size_t k = 0; k < kVertexProperties.size(); ++k) {
        for (const auto &p : vertex->properties) {
            if (p.name == kVertexProperties[k]) {
                props[k] = &p;
            }
        }
        if (props[k] == nullptr) {
            throw FormatError(fmt::format("{}: missing vertex property '{}'", path.string(),
                                          kVertexProperties[k]));
        }
    }
    for (const auto &p : vertex->properties) {
        has_rest = has_rest || p.name.starts_with("f_rest_");
    }
    if (has_rest) {
        spdlog::warn("{}: higher-order SH coefficients (f_rest_*) ignored; using degree 0 only",
                     path.string());
    }

    in.ignore(static_cast<std::streamsize>(skip_bytes));
    std::vector<char> buffer(vertex->count * vertex->stride);
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (static_cast<std::size_t>(in.gcount()) != buffer.size()) {
        throw FormatError(fmt::format("{}: truncated vertex data ({} of {} bytes)", path.string(),
                                      in.gcount(), buffer.size()));
    }

    std::vector<GaussianSplat> splats(vertex->count);
    std::array<double, kVertexProperties.size()> v{};
    for (std::size_t i = 0; i < vertex->count; ++i) {
        const char *row = buffer.data() + i * vertex->stride;
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = read_scalar(row + props[k]->offset, props[k]->type);
            if (!std::isfinite(v[k])) {
                throw ValidationError(fmt::format("{}: vertex {} has non-finite '{}'",
                                                  path.string(), i, kVertexProperties[k]));
            }
        }
        GaussianSplat &s = splats[i];
        s.position = Vec3(v[0], v[1], v[2]);
        s.color = Vec3(0.5 + kShC0 * v[3], 0.5 + kShC0 * v[4], 0.5 + kShC0 * v[5]);
        s.opacity_logit = v[6];
        s.log_scale = Vec3(v[7], v[8], v[9]);
        s.rotation = Vec4(v[10], v[11], v[12], v[13]);
        const double norm = s.rotation.norm();
        if (!(norm > 0.0)) {
            throw ValidationError(fmt::format("{}: vertex {} has a zero quaternion",
                                              path.string(), i));
        }
        // Leave already-unit quaternions bit-for-bit so save/load round-trips exactly.
        if (std::abs(norm - 1.0) > 1e-6) {
            s.rotation /= norm;
        }
    }

    Box bbox = bounds_of(splats);
    return Scene::uniform(std::move(splats), SplatTag::Background, bbox);
}

void save_scene(const Scene &scene, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << scene.size() << "\n";
    for (const char *name : kVertexProperties) {
        out << "property float " << name << "\n";
    }
    out << "end_header\n";

    std::vector<float> row(kVertexProperties.size());
    for (const auto &s : scene.splats()) {
        row = {static_cast<float>(s.position.x()),
               static_cast<float>(s.position.y()),
               static_cast<float>(s.position.z()),
               static_cast<float>((s.color.x() - 0.5) / kShC0),
               static_cast<float>((s.color.y() - 0.5) / kShC0),
               static_cast<float>((s.color.z() - 0.5) / kShC0),
               static_cast<float>(s.opacity_logit),
               static_cast<float>(s.log_scale.x()),
               static_cast<float>(s.log_scale.y()),
               static_cast<float>(s.log_scale.z()),
               static_cast<float>(s.rotation[0]),
               static_cast<float>(s.rotation[1]),
               static_cast<float>(s.rotation[2]),
               static_cast<float>(s.rotation[3])};
        out.write(reinterpret_cast<const char *>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError(fmt::format("failed writing '{}'", path.string()));
    }
}

} // namespace splatedit
