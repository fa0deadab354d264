#pragma once

#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memmlp/rotation.hpp"

namespace memmlp {

inline constexpr int kNumJoints = 22;

// Kinematic tree. Joints are topologically ordered: parent[i] < i for all
// non-root joints, root is joint 0 with parent -1. The lower/upper sets
// partition joints 1..n-1; tracked joints (head and both hands) are
// resolved from the joint names.
struct Skeleton {
    std::vector<int> parent;
    std::vector<Vec3> offset;  // rest-pose bone offset from parent, meters
    std::vector<int> lower;
    std::vector<int> upper;
    std::vector<std::string> names;

    int head = -1;
    int left_hand = -1;
    int right_hand = -1;

    int joint_count() const { return static_cast<int>(parent.size()); }

    std::vector<int> tracked() const { return {head, left_hand, right_hand}; }

    void validate() const {
        const int n = joint_count();
        if (n < 1 || parent[0] != -1) throw DomainError("skeleton: joint 0 must be the root");
        if (static_cast<int>(offset.size()) != n || static_cast<int>(names.size()) != n)
            throw ShapeError("skeleton: parents/offsets/names length mismatch");
        for (int i = 1; i < n; ++i) {
            if (parent[i] < 0 || parent[i] >= i)
                throw DomainError("skeleton: parents must be topologically ordered");
            if (!offset[i].allFinite()) throw DomainError("skeleton: non-finite offset");
        }
        std::vector<int> seen(n, 0);
        for (int j : lower) seen.at(j) += 1;
        for (int j : upper) seen.at(j) += 1;
        for (int i = 1; i < n; ++i)
            if (seen[i] != 1) throw DomainError("skeleton: lower/upper must partition joints 1..n-1");
        if (seen[0] != 0) throw DomainError("skeleton: root belongs to neither body half");
    }

    void resolve_tracked() {
        auto find = [&](const std::string& name) {
            auto it = std::find(names.begin(), names.end(), name);
            return it == names.end() ? -1 : static_cast<int>(it - names.begin());
        };
        head = find("head");
        left_hand = find("left_hand");
        right_hand = find("right_hand");
        if (head < 0 || left_hand < 0 || right_hand < 0)
            throw DomainError("skeleton: joints 'head', 'left_hand', 'right_hand' are required");
    }
};

struct GlobalPose {
    std::vector<Mat3> rot;
    std::vector<Vec3> pos;
};

inline GlobalPose forward_kinematics(const Skeleton& skel, std::span<const Mat3> local_rot,
                                     const Vec3& root_pos) {
    const int n = skel.joint_count();
    if (static_cast<int>(local_rot.size()) != n)
        throw ShapeError("forward_kinematics: rotation count != joint count");
    GlobalPose g;
    g.rot.resize(n);
    g.pos.resize(n);
    g.rot[0] = local_rot[0];
    g.pos[0] = root_pos;
    for (int i = 1; i < n; ++i) {
        const int p = skel.parent[i];
        g.rot[i] = g.rot[p] * local_rot[i];
        g.pos[i] = g.pos[p] + g.rot[p] * skel.offset[i];
    }
    return g;
}

// 22-joint humanoid, SMPL-like ordering, ~1.7 m standing height.
inline Skeleton default_skeleton() {
    Skeleton s;
    s.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    s.names = {"pelvis",        "left_hip",       "right_hip",   "spine1",     "left_knee",
               "right_knee",    "spine2",         "left_ankle",  "right_ankle", "spine3",
               "left_foot",     "right_foot",     "neck",        "left_collar", "right_collar",
               "head",          "left_shoulder",  "right_shoulder", "left_elbow", "right_elbow",
               "left_hand",     "right_hand"};
    s.offset = {
        Vec3(0, 0, 0),          Vec3(0.09, -0.06, 0),  Vec3(-0.09, -0.06, 0),
        Vec3(0, 0.11, 0),       Vec3(0, -0.45, 0),     Vec3(0, -0.45, 0),
        Vec3(0, 0.13, 0),       Vec3(0, -0.45, 0),     Vec3(0, -0.45, 0),
        Vec3(0, 0.13, 0),       Vec3(0, -0.05, 0.13),  Vec3(0, -0.05, 0.13),
        Vec3(0, 0.12, 0),       Vec3(0.06, 0.08, 0),   Vec3(-0.06, 0.08, 0),
        Vec3(0, 0.16, 0),       Vec3(0.10, 0.02, 0),   Vec3(-0.10, 0.02, 0),
        Vec3(0.27, 0, 0),       Vec3(-0.27, 0, 0),     Vec3(0.26, 0, 0),
        Vec3(-0.26, 0, 0)};
    s.lower = {1, 2, 4, 5, 7, 8, 10, 11};
    for (int i = 1; i < kNumJoints; ++i)
        if (std::find(s.lower.begin(), s.lower.end(), i) == s.lower.end()) s.upper.push_back(i);
    s.resolve_tracked();
    s.validate();
    return s;
}

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
    Skeleton s;
    try {
        s.parent = j.at("parents").get<std::vector<int>>();
        for (const auto& o : j.at("offsets")) {
            if (o.size() != 3) throw IoError("skeleton: offset must have 3 components");
            s.offset.emplace_back(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
        }
        s.lower = j.at("lower").get<std::vector<int>>();
        s.upper = j.at("upper").get<std::vector<int>>();
        s.names = j.at("names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("skeleton: ") + e.what());
    }
    s.resolve_tracked();
    s.validate();
    return s;
}

inline nlohmann::json skeleton_to_json(const Skeleton& s) {
    nlohmann::json j;
    j["parents"] = s.parent;
    auto& offs = j["offsets"] = nlohmann::json::array();
    for (const auto& o : s.offset) offs.push_back({o.x(), o.y(), o.z()});
    j["lower"] = s.lower;
    j["upper"] = s.upper;
    j["names"] = s.names;
    return j;
}

inline Skeleton load_skeleton(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open skeleton file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("skeleton parse: ") + e.what());
    }
    return skeleton_from_json(j);
}

inline void save_skeleton(const Skeleton& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write skeleton file: " + path);
    out << skeleton_to_json(s).dump(2) << "\n";
}

}  // namespace memmlp
