#pragma once

#include <string>
#include <vector>

#include "normalcast/rng.hpp"
#include "normalcast/tensor.hpp"

namespace ncast {

struct Vec3 {
    float x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, float s) { return {a.x * s, a.y * s, a.z * s}; }
inline float dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline float norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    float n = norm(a);
    return n > 0 ? a * (1.0f / n) : Vec3{0, 0, 0};
}

enum class PrimitiveKind { Sphere, Box, Plane };

// Sphere: center+radius. Box: axis-aligned min/max corners. Plane: point+normal.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 a, b;      // sphere: a=center; box: a=min, b=max; plane: a=point, b=normal
    float radius = 1.0f;
    Vec3 albedo{0.8f, 0.8f, 0.8f};
};

struct Scene {
    std::vector<Primitive> objects;
    Vec3 light_direction{0, 1, 0};  // unit vector pointing toward the light
    float ambient = 0.2f;
    void validate() const;
};

struct Intrinsics {
    float fx = 0, fy = 0, cx = 0, cy = 0;
};

// Camera-to-world pose: x_world = R * x_cam + t. Camera convention is
// x right, y down, z forward (depth is camera-space z).
struct CameraPose {
    float R[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 t;
    Vec3 rotate(Vec3 v) const {
        return {R[0] * v.x + R[1] * v.y + R[2] * v.z, R[3] * v.x + R[4] * v.y + R[5] * v.z,
                R[6] * v.x + R[7] * v.y + R[8] * v.z};
    }
    Vec3 rotate_back(Vec3 v) const {  // R^T v
        return {R[0] * v.x + R[3] * v.y + R[6] * v.z, R[1] * v.x + R[4] * v.y + R[7] * v.z,
                R[2] * v.x + R[5] * v.y + R[8] * v.z};
    }
};

struct CameraTrajectory {
    std::vector<CameraPose> poses;
    Intrinsics intrinsics;
    void validate() const;
};

struct VideoClip {
    Tensor frames;  // [F,H,W,3] in [0,1]
    float frame_rate = 24.0f;
};

struct NormalSequence {
    Tensor normals;  // [F,H,W,3] in [-1,1]; invalid pixels are exactly (0,0,0)
    Mask valid;      // [F,H,W]
};

struct DepthSequence {
    Tensor depths;  // [F,H,W], camera-space z
    Mask valid;     // [F,H,W]
};

struct RenderResult {
    VideoClip video;
    NormalSequence normals;
    DepthSequence depth;
};

// Per-pixel ray cast against the primitives; RGB = ambient + Lambertian
// shading clamped to [0,1]; normals are camera-space, oriented toward the
// camera (dot with the viewing ray <= 0); depth is camera-space z of the
// hit; misses are invalid in both masks and shaded with plain ambient.
RenderResult render_clip(const Scene& scene, const CameraTrajectory& traj, int H, int W);

// Cross-product normals from depth: unproject valid pixels, central
// differences, normal = normalized(dpdx x dpdy) flipped toward the camera.
// Border pixels and pixels with invalid neighbors come back invalid.
NormalSequence depth_to_normal(const DepthSequence& depth, const Intrinsics& intr);

// Procedural content for the synth pipeline: a ground plane plus a few
// spheres/boxes under a randomized light, and a smooth orbital trajectory
// that keeps the scene centered in view.
Scene make_random_scene(Rng& rng);
CameraTrajectory make_orbit_trajectory(Rng& rng, int frames, int H, int W);
CameraPose look_at_pose(Vec3 eye, Vec3 target);

}  // namespace ncast
