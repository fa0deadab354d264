#pragma once

#include <string>

#include "memmlp/clip.hpp"

// Synthetic motion clips. These stand in for mocap data: simple periodic
// joint swings with deterministic per-seed phase/amplitude variation, all
// rotations within +/-60 degrees of rest.

namespace memmlp {

enum class SynthKind { walk, sway, squat, still };

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "walk") return SynthKind::walk;
    if (s == "sway") return SynthKind::sway;
    if (s == "squat") return SynthKind::squat;
    if (s == "still") return SynthKind::still;
    throw DomainError("unknown synth kind: " + s);
}

inline const char* to_string(SynthKind k) {
    switch (k) {
        case SynthKind::walk: return "walk";
        case SynthKind::sway: return "sway";
        case SynthKind::squat: return "squat";
        case SynthKind::still: return "still";
    }
    return "?";
}

inline MotionClip synth_generate(SynthKind kind, std::uint64_t seed, double duration_s,
                                 double fps, const Skeleton& skel) {
    if (duration_s <= 0.0) throw DomainError("synth: duration must be positive");
    Rng rng(seed * 0x9e37u + 17u);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double freq = 1.0 * rng.uniform(0.9, 1.1);           // gait cycles per second
    const double amp = rng.uniform(0.85, 1.15);                // amplitude jitter
    const double deg = kPi / 180.0;

    // The arms move on their own slower rhythm (think walking while carrying
    // or gesturing), so the gait phase reaches the head/hand sensors only
    // through weak cues: the root bob and sway and a slight torso yaw.
    const double arm_freq = freq * rng.uniform(0.31, 0.43);
    const double arm_phase = rng.uniform(0.0, 2.0 * kPi);
    const double nod_freq = freq * rng.uniform(0.2, 0.3);

    // Joint indices of the default skeleton layout.
    enum : int {
        L_HIP = 1, R_HIP = 2, SPINE1 = 3, L_KNEE = 4, R_KNEE = 5,
        L_ANKLE = 7, R_ANKLE = 8, NECK = 12, HEAD = 15,
        L_SHOULDER = 16, R_SHOULDER = 17, L_ELBOW = 18, R_ELBOW = 19
    };

    MotionClip clip;
    clip.fps = fps;
    clip.name = std::string(to_string(kind)) + "_" + std::to_string(seed);
    clip.joint_names = skel.names;

    const int n = std::max(2, static_cast<int>(duration_s * fps + 0.5));
    for (int f = 0; f < n; ++f) {
        const double t = f / fps;
        const double w = 2.0 * kPi * freq * t + phase;
        ClipFrame frame;
        frame.rots.assign(kNumJoints, Vec3::Zero());
        switch (kind) {
            case SynthKind::still:
                break;
            case SynthKind::walk: {
                const double swing = amp * 28.0 * deg * std::sin(w);
                frame.rots[L_HIP] = Vec3(swing, 0, 0);
                frame.rots[R_HIP] = Vec3(-swing, 0, 0);
                // Raised-cosine knee flexion, peaking as the leg swings back;
                // keeps the trajectory infinitely smooth.
                frame.rots[L_KNEE] = Vec3(amp * 22.0 * deg * 0.25 * (1.0 - std::cos(w - kPi / 2)), 0, 0);
                frame.rots[R_KNEE] = Vec3(amp * 22.0 * deg * 0.25 * (1.0 + std::cos(w - kPi / 2)), 0, 0);
                frame.rots[L_ANKLE] = Vec3(amp * 8.0 * deg * std::sin(w), 0, 0);
                frame.rots[R_ANKLE] = Vec3(-amp * 8.0 * deg * std::sin(w), 0, 0);
                const double wa = 2.0 * kPi * arm_freq * t + arm_phase;
                frame.rots[L_SHOULDER] = Vec3(-amp * 14.0 * deg * std::sin(wa), 0, 0);
                frame.rots[R_SHOULDER] = Vec3(amp * 11.0 * deg * std::sin(wa + 0.9), 0, 0);
                frame.rots[L_ELBOW] = Vec3(0, -amp * 9.0 * deg * (1.0 + std::sin(wa)) * 0.5, 0);
                frame.rots[R_ELBOW] = Vec3(0, amp * 9.0 * deg * (1.0 - std::sin(wa + 0.9)) * 0.5, 0);
                frame.rots[SPINE1] = Vec3(0, amp * 2.0 * deg * std::sin(w), 0);
                frame.rots[NECK] = Vec3(amp * 2.0 * deg * std::sin(2.0 * kPi * nod_freq * t), 0, 0);
                // slow stroll; the bob and sway carry the gait phase to the
                // head and hand sensors
                frame.root = Vec3(0.010 * amp * std::sin(w + kPi / 3),
                                  0.92 + 0.010 * amp * std::sin(2.0 * w), 0.25 * amp * t);
                break;
            }
            case SynthKind::sway: {
                const double roll = amp * 12.0 * deg * std::sin(w);
                frame.rots[SPINE1] = Vec3(0, 0, roll);
                frame.rots[NECK] = Vec3(0, 0, -0.4 * roll);
                frame.rots[L_SHOULDER] = Vec3(0, 0, 0.5 * roll);
                frame.rots[R_SHOULDER] = Vec3(0, 0, 0.5 * roll);
                frame.root = Vec3(0.05 * amp * std::sin(w), 0.92, 0);
                break;
            }
            case SynthKind::squat: {
                const double bend = amp * 0.5 * (1.0 - std::cos(w));  // in [0, amp]
                frame.rots[L_HIP] = Vec3(-bend * 45.0 * deg, 0, 0);
                frame.rots[R_HIP] = Vec3(-bend * 45.0 * deg, 0, 0);
                frame.rots[L_KNEE] = Vec3(bend * 55.0 * deg, 0, 0);
                frame.rots[R_KNEE] = Vec3(bend * 55.0 * deg, 0, 0);
                frame.rots[SPINE1] = Vec3(bend * 12.0 * deg, 0, 0);
                frame.rots[L_SHOULDER] = Vec3(-bend * 30.0 * deg, 0, 0);
                frame.rots[R_SHOULDER] = Vec3(-bend * 30.0 * deg, 0, 0);
                frame.root = Vec3(0, 0.92 - 0.22 * bend, 0);
                break;
            }
        }
        if (kind == SynthKind::still) frame.root = Vec3(0, 0.92, 0);
        clip.frames.push_back(std::move(frame));
    }
    clip.validate();
    return clip;
}

}  // namespace memmlp
