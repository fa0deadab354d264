#include <doctest.h>

#include <cstdio>
#include <memmlp/skeleton.hpp>

#include "helpers.hpp"

using namespace memmlp;

namespace {

// Straight chain along +x with unit bones, handy for oracle checks.
Skeleton make_chain(int joints) {
    Skeleton s;
    s.parent.push_back(-1);
    s.offset.push_back(Vec3::Zero());
    s.names.push_back("j0");
    for (int i = 1; i < joints; ++i) {
        s.parent.push_back(i - 1);
        s.offset.push_back(Vec3(1, 0, 0));
        s.names.push_back("j" + std::to_string(i));
        (i % 2 ? s.lower : s.upper).push_back(i);
    }
    return s;
}

// Independent FK oracle: explicit matrix-chain products per joint.
GlobalPose brute_force_fk(const Skeleton& skel, const std::vector<Mat3>& local,
                          const Vec3& root) {
    GlobalPose g;
    const int n = skel.joint_count();
    g.rot.resize(n);
    g.pos.resize(n);
    for (int i = 0; i < n; ++i) {
        // walk up to the root collecting the ancestor chain
        std::vector<int> chain;
        for (int j = i; j != -1; j = skel.parent[j]) chain.push_back(j);
        Mat3 r = Mat3::Identity();
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) r = r * local[*it];
        g.rot[i] = r;
        Vec3 p = root;
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
            if (*it == 0) continue;
            Mat3 parent_rot = Mat3::Identity();
            std::vector<int> up;
            for (int j = skel.parent[*it]; j != -1; j = skel.parent[j]) up.push_back(j);
            for (auto u = up.rbegin(); u != up.rend(); ++u) parent_rot = parent_rot * local[*u];
            p += parent_rot * skel.offset[*it];
        }
        g.pos[i] = p;
    }
    return g;
}

}  // namespace

TEST_CASE("default skeleton is a valid 22-joint tree") {
    const Skeleton s = default_skeleton();
    CHECK(s.joint_count() == 22);
    CHECK(s.lower.size() + s.upper.size() == 21);
    CHECK(s.head == 15);
    CHECK(s.left_hand == 20);
    CHECK(s.right_hand == 21);
    // standing height around 1.7 m: pelvis-to-sole plus pelvis-to-crown
    double leg = 0, spine = 0;
    for (int j : {1, 4, 7, 10}) leg += std::abs(s.offset[j].y());
    for (int j : {3, 6, 9, 12, 15}) spine += s.offset[j].y();
    CHECK(leg + spine > 1.5);
    CHECK(leg + spine < 1.9);
}

TEST_CASE("skeleton json round trip and validation") {
    const Skeleton s = default_skeleton();
    const std::string path = "skel_test.json";
    save_skeleton(s, path);
    const Skeleton r = load_skeleton(path);
    CHECK(r.parent == s.parent);
    CHECK(r.names == s.names);
    CHECK(r.lower == s.lower);
    for (int i = 0; i < s.joint_count(); ++i) CHECK((r.offset[i] - s.offset[i]).norm() == 0.0);
    std::remove(path.c_str());

    nlohmann::json bad = skeleton_to_json(s);
    bad["lower"] = std::vector<int>{1};  // breaks the partition
    CHECK_THROWS_AS(skeleton_from_json(bad), DomainError);
}

TEST_CASE("FK rest pose accumulates offsets") {
    const Skeleton s = default_skeleton();
    std::vector<Mat3> local(22, Mat3::Identity());
    const GlobalPose g = forward_kinematics(s, local, Vec3::Zero());
    for (int i = 1; i < 22; ++i) {
        Vec3 expect = Vec3::Zero();
        for (int j = i; j != 0; j = s.parent[j]) expect += s.offset[j];
        CHECK((g.pos[i] - expect).norm() < 1e-12);
    }
}

TEST_CASE("FK root rotation is a rigid transform about the root") {
    const Skeleton s = default_skeleton();
    std::vector<Mat3> local(22, Mat3::Identity());
    const Vec3 root(0.3, 0.9, -0.2);
    const GlobalPose base = forward_kinematics(s, local, root);
    local[0] = rot_z(kPi / 2);
    const GlobalPose rotated = forward_kinematics(s, local, root);
    for (int i = 0; i < 22; ++i) {
        const Vec3 expect = root + local[0] * (base.pos[i] - root);
        CHECK((rotated.pos[i] - expect).norm() < 1e-12);
    }
}

TEST_CASE("FK matches brute-force matrix chains on short chains") {
    Rng rng(21);
    for (int joints = 2; joints <= 5; ++joints) {
        const Skeleton chain = make_chain(joints);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<Mat3> local;
            for (int i = 0; i < joints; ++i) local.push_back(testutil::random_rotation(rng));
            const Vec3 root(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            const GlobalPose fast = forward_kinematics(chain, local, root);
            const GlobalPose slow = brute_force_fk(chain, local, root);
            for (int i = 0; i < joints; ++i) {
                CHECK((fast.pos[i] - slow.pos[i]).norm() < 1e-9);
                CHECK((fast.rot[i] - slow.rot[i]).cwiseAbs().maxCoeff() < 1e-9);
            }
        }
    }
}

TEST_CASE("FK equivariance under root-frame rotation") {
    const Skeleton s = default_skeleton();
    Rng rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Mat3> local;
        for (int i = 0; i < 22; ++i) local.push_back(testutil::random_rotation(rng));
        const Vec3 root(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const GlobalPose base = forward_kinematics(s, local, root);

        const Mat3 q = testutil::random_rotation(rng);
        std::vector<Mat3> rotated = local;
        rotated[0] = q * local[0];
        const GlobalPose moved = forward_kinematics(s, rotated, root);
        for (int i = 0; i < 22; ++i) {
            const Vec3 expect = root + q * (base.pos[i] - root);
            CHECK((moved.pos[i] - expect).norm() < 1e-9);
        }
    }
}
