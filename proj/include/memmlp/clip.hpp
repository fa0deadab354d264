#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memmlp/skeleton.hpp"

namespace memmlp {

struct ClipFrame {
    Vec3 root = Vec3::Zero();
    std::vector<Vec3> rots;  // local axis-angle per joint
};

// Ground-truth motion: per-frame local joint rotations plus root translation
// over the fixed 22-joint skeleton.
struct MotionClip {
    double fps = 60.0;
    std::string name;
    std::vector<std::string> joint_names;
    std::vector<ClipFrame> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
    double duration_s() const { return frame_count() / fps; }

    void validate() const {
        if (fps <= 0.0) throw DomainError("clip: fps must be positive");
        if (frames.size() < 2) throw DomainError("clip: needs at least 2 frames");
        for (const auto& f : frames) {
            if (static_cast<int>(f.rots.size()) != kNumJoints)
                throw ShapeError("clip: frame does not have 22 joint rotations");
            if (!f.root.allFinite()) throw DomainError("clip: non-finite root translation");
            for (const auto& r : f.rots)
                if (!r.allFinite()) throw DomainError("clip: non-finite rotation");
        }
    }
};

inline nlohmann::json clip_to_json(const MotionClip& clip) {
    nlohmann::json j;
    j["fps"] = clip.fps;
    j["name"] = clip.name;
    j["names"] = clip.joint_names;
    auto& frames = j["frames"] = nlohmann::json::array();
    for (const auto& f : clip.frames) {
        nlohmann::json jf;
        jf["root"] = {f.root.x(), f.root.y(), f.root.z()};
        auto& rots = jf["rots"] = nlohmann::json::array();
        for (const auto& r : f.rots) rots.push_back({r.x(), r.y(), r.z()});
        frames.push_back(std::move(jf));
    }
    return j;
}

inline MotionClip clip_from_json(const nlohmann::json& j) {
    MotionClip clip;
    try {
        clip.fps = j.at("fps").get<double>();
        clip.name = j.value("name", std::string());
        clip.joint_names = j.value("names", std::vector<std::string>());
        for (const auto& jf : j.at("frames")) {
            ClipFrame f;
            const auto& root = jf.at("root");
            if (root.size() != 3) throw IoError("clip: root must have 3 components");
            f.root = Vec3(root[0].get<double>(), root[1].get<double>(), root[2].get<double>());
            for (const auto& r : jf.at("rots")) {
                if (r.size() != 3) throw IoError("clip: rotation must have 3 components");
                f.rots.emplace_back(r[0].get<double>(), r[1].get<double>(), r[2].get<double>());
            }
            clip.frames.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("clip parse: ") + e.what());
    }
    clip.validate();
    return clip;
}

inline void save_clip_json(const MotionClip& clip, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write clip: " + path);
    out << clip_to_json(clip).dump(1) << "\n";
}

inline MotionClip load_clip_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open clip: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("clip parse: ") + e.what());
    }
    return clip_from_json(j);
}

// Compact binary variant: magic "MCLP", u32 version, f32 fps, u32 frame
// count, then per frame root f32[3] and 22 axis-angle f32[3], little-endian.
inline void save_clip_binary(const MotionClip& clip, const std::string& path) {
    clip.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write clip: " + path);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    auto put_f32 = [&](float f) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(bits);
    };
    out.write("MCLP", 4);
    put_u32(1);
    put_f32(static_cast<float>(clip.fps));
    put_u32(static_cast<std::uint32_t>(clip.frames.size()));
    for (const auto& f : clip.frames) {
        for (int c = 0; c < 3; ++c) put_f32(static_cast<float>(f.root(c)));
        for (const auto& r : f.rots)
            for (int c = 0; c < 3; ++c) put_f32(static_cast<float>(r(c)));
    }
}

inline MotionClip load_clip_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open clip: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MCLP", 4) != 0) throw IoError("clip: bad magic in " + path);
    auto get_u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) throw IoError("clip: truncated binary file");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    auto get_f32 = [&]() {
        const std::uint32_t bits = get_u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    };
    if (get_u32() != 1) throw IoError("clip: unsupported binary version");
    MotionClip clip;
    clip.fps = get_f32();
    const std::uint32_t n = get_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        ClipFrame f;
        for (int c = 0; c < 3; ++c) f.root(c) = get_f32();
        f.rots.resize(kNumJoints);
        for (auto& r : f.rots)
            for (int c = 0; c < 3; ++c) r(c) = get_f32();
        clip.frames.push_back(std::move(f));
    }
    clip.validate();
    return clip;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline MotionClip load_clip(const std::string& path) {
    return has_suffix(path, ".mclp") ? load_clip_binary(path) : load_clip_json(path);
}

inline void save_clip(const MotionClip& clip, const std::string& path) {
    if (has_suffix(path, ".mclp"))
        save_clip_binary(clip, path);
    else
        save_clip_json(clip, path);
}

}  // namespace memmlp
