#include "normalcast/scene.hpp"

#include <cmath>
#include <limits>

namespace ncast {

void Scene::validate() const {
    if (objects.empty()) throw ConfigError("scene has no objects");
    for (const auto& o : objects) {
        for (float c : {o.albedo.x, o.albedo.y, o.albedo.z})
            if (c < 0.0f || c > 1.0f) throw ConfigError("albedo channel outside [0,1]");
        if (o.kind == PrimitiveKind::Sphere && o.radius <= 0.0f) throw ConfigError("sphere radius must be positive");
        if (o.kind == PrimitiveKind::Box && (o.b.x <= o.a.x || o.b.y <= o.a.y || o.b.z <= o.a.z))
            throw ConfigError("box min/max corners are degenerate");
    }
    if (std::abs(norm(light_direction) - 1.0f) > 1e-6f) throw ConfigError("light_direction must be unit length");
    if (ambient < 0.0f || ambient > 1.0f) throw ConfigError("ambient outside [0,1]");
}

void CameraTrajectory::validate() const {
    if (poses.empty()) throw ConfigError("trajectory needs at least one pose");
    if (intrinsics.fx <= 0.0f || intrinsics.fy <= 0.0f) throw ConfigError("degenerate intrinsics: fx,fy must be > 0");
    for (const auto& p : poses) {
        // orthonormality within 1e-5, det +1
        Vec3 c0{p.R[0], p.R[3], p.R[6]}, c1{p.R[1], p.R[4], p.R[7]}, c2{p.R[2], p.R[5], p.R[8]};
        if (std::abs(norm(c0) - 1) > 1e-5f || std::abs(norm(c1) - 1) > 1e-5f || std::abs(norm(c2) - 1) > 1e-5f ||
            std::abs(dot(c0, c1)) > 1e-5f || std::abs(dot(c0, c2)) > 1e-5f || std::abs(dot(c1, c2)) > 1e-5f)
            throw ConfigError("rotation is not orthonormal");
        float det = dot(c0, cross(c1, c2));
        if (std::abs(det - 1.0f) > 1e-4f) throw ConfigError("rotation determinant is not +1");
    }
}

namespace {

struct Hit {
    float t = std::numeric_limits<float>::infinity();
    Vec3 normal;  // world space, geometric
    Vec3 albedo;
    bool ok = false;
};

constexpr float kRayEps = 1e-4f;

void hit_sphere(const Primitive& s, Vec3 o, Vec3 d, Hit& best) {
    Vec3 oc = o - s.a;
    float b = dot(oc, d);
    float c = dot(oc, oc) - s.radius * s.radius;
    float disc = b * b - c;
    if (disc < 0) return;
    float sq = std::sqrt(disc);
    float t = -b - sq;
    if (t < kRayEps) t = -b + sq;
    if (t < kRayEps || t >= best.t) return;
    Vec3 p = o + d * t;
    best.t = t;
    best.normal = normalized(p - s.a);
    best.albedo = s.albedo;
    best.ok = true;
}

void hit_box(const Primitive& bx, Vec3 o, Vec3 d, Hit& best) {
    float tmin = -std::numeric_limits<float>::infinity();
    float tmax = std::numeric_limits<float>::infinity();
    int axis = -1;
    float sign = 0;
    const float omin[3] = {bx.a.x, bx.a.y, bx.a.z};
    const float omax[3] = {bx.b.x, bx.b.y, bx.b.z};
    const float od[3] = {o.x, o.y, o.z};
    const float dd[3] = {d.x, d.y, d.z};
    for (int i = 0; i < 3; ++i) {
        if (std::abs(dd[i]) < 1e-9f) {
            if (od[i] < omin[i] || od[i] > omax[i]) return;
            continue;
        }
        float inv = 1.0f / dd[i];
        float t0 = (omin[i] - od[i]) * inv;
        float t1 = (omax[i] - od[i]) * inv;
        float s = -1;
        if (t0 > t1) {
            std::swap(t0, t1);
            s = 1;
        }
        if (t0 > tmin) {
            tmin = t0;
            axis = i;
            sign = s;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return;
    }
    float t = tmin;
    if (t < kRayEps) return;  // inside the box or behind: skip
    if (t >= best.t || axis < 0) return;
    best.t = t;
    Vec3 n{0, 0, 0};
    if (axis == 0) n.x = sign;
    if (axis == 1) n.y = sign;
    if (axis == 2) n.z = sign;
    best.normal = n;
    best.albedo = bx.albedo;
    best.ok = true;
}

void hit_plane(const Primitive& pl, Vec3 o, Vec3 d, Hit& best) {
    Vec3 n = normalized(pl.b);
    float denom = dot(d, n);
    if (std::abs(denom) < 1e-9f) return;
    float t = dot(pl.a - o, n) / denom;
    if (t < kRayEps || t >= best.t) return;
    best.t = t;
    best.normal = n;
    best.albedo = pl.albedo;
    best.ok = true;
}

Hit trace(const Scene& scene, Vec3 o, Vec3 d) {
    Hit best;
    for (const auto& prim : scene.objects) {
        switch (prim.kind) {
            case PrimitiveKind::Sphere: hit_sphere(prim, o, d, best); break;
            case PrimitiveKind::Box: hit_box(prim, o, d, best); break;
            case PrimitiveKind::Plane: hit_plane(prim, o, d, best); break;
        }
    }
    return best;
}

}  // namespace

RenderResult render_clip(const Scene& scene, const CameraTrajectory& traj, int H, int W) {
    scene.validate();
    traj.validate();
    if (H < 16 || W < 16) throw ConfigError("render size must be at least 16x16");
    const int F = (int)traj.poses.size();
    const Intrinsics& K = traj.intrinsics;

    RenderResult r;
    r.video.frames = Tensor({F, H, W, 3});
    r.normals.normals = Tensor({F, H, W, 3});
    r.normals.valid = Mask({F, H, W});
    r.depth.depths = Tensor({F, H, W});
    r.depth.valid = Mask({F, H, W});

#pragma omp parallel for schedule(static)
    for (int f = 0; f < F; ++f) {
        const CameraPose& pose = traj.poses[(size_t)f];
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                Vec3 dir_cam = normalized(Vec3{((float)x + 0.5f - K.cx) / K.fx, ((float)y + 0.5f - K.cy) / K.fy, 1.0f});
                Vec3 dir_world = pose.rotate(dir_cam);
                Hit h = trace(scene, pose.t, dir_world);
                long long pix = ((long long)f * H + y) * W + x;
                float* rgb = r.video.frames.data() + pix * 3;
                float* nrm = r.normals.normals.data() + pix * 3;
                if (!h.ok) {
                    rgb[0] = rgb[1] = rgb[2] = std::min(1.0f, scene.ambient);
                    nrm[0] = nrm[1] = nrm[2] = 0.0f;
                    r.depth.depths[pix] = 0.0f;
                    continue;
                }
                // camera-facing orientation in world space, then to camera space
                Vec3 nw = h.normal;
                if (dot(nw, dir_world) > 0) nw = nw * -1.0f;
                Vec3 nc = pose.rotate_back(nw);
                nrm[0] = nc.x;
                nrm[1] = nc.y;
                nrm[2] = nc.z;
                r.normals.valid.set(pix, true);
                r.depth.depths[pix] = h.t * dir_cam.z;
                r.depth.valid.set(pix, true);
                float diffuse = std::max(0.0f, dot(nw, scene.light_direction));
                rgb[0] = std::min(1.0f, std::max(0.0f, scene.ambient + h.albedo.x * diffuse));
                rgb[1] = std::min(1.0f, std::max(0.0f, scene.ambient + h.albedo.y * diffuse));
                rgb[2] = std::min(1.0f, std::max(0.0f, scene.ambient + h.albedo.z * diffuse));
            }
        }
    }
    return r;
}

NormalSequence depth_to_normal(const DepthSequence& depth, const Intrinsics& intr) {
    if (intr.fx <= 0.0f || intr.fy <= 0.0f) throw ConfigError("degenerate intrinsics: fx,fy must be > 0");
    const Shape& s = depth.depths.shape();
    int F = s[0], H = s[1], W = s[2];
    NormalSequence out;
    out.normals = Tensor({F, H, W, 3});
    out.valid = Mask({F, H, W});

    auto unproject = [&](int f, int y, int x) {
        float d = depth.depths[((long long)f * H + y) * W + x];
        return Vec3{d * ((float)x + 0.5f - intr.cx) / intr.fx, d * ((float)y + 0.5f - intr.cy) / intr.fy, d};
    };

    for (int f = 0; f < F; ++f) {
        for (int y = 1; y < H - 1; ++y) {
            for (int x = 1; x < W - 1; ++x) {
                long long pix = ((long long)f * H + y) * W + x;
                bool ok = depth.valid.get(pix) && depth.valid.get(pix - 1) && depth.valid.get(pix + 1) &&
                          depth.valid.get(pix - W) && depth.valid.get(pix + W);
                if (!ok) continue;
                Vec3 dpdx = unproject(f, y, x + 1) - unproject(f, y, x - 1);
                Vec3 dpdy = unproject(f, y + 1, x) - unproject(f, y - 1, x);
                Vec3 n = normalized(cross(dpdx, dpdy));
                if (norm(n) == 0.0f) continue;
                Vec3 p = unproject(f, y, x);
                if (dot(n, p) > 0) n = n * -1.0f;
                out.normals[pix * 3] = n.x;
                out.normals[pix * 3 + 1] = n.y;
                out.normals[pix * 3 + 2] = n.z;
                out.valid.set(pix, true);
            }
        }
    }
    return out;
}

CameraPose look_at_pose(Vec3 eye, Vec3 target) {
    Vec3 z = normalized(target - eye);
    Vec3 down{0, -1, 0};
    Vec3 x = cross(down, z);
    if (norm(x) < 1e-6f) x = Vec3{1, 0, 0};
    x = normalized(x);
    Vec3 y = cross(z, x);
    CameraPose p;
    p.R[0] = x.x; p.R[1] = y.x; p.R[2] = z.x;
    p.R[3] = x.y; p.R[4] = y.y; p.R[5] = z.y;
    p.R[6] = x.z; p.R[7] = y.z; p.R[8] = z.z;
    p.t = eye;
    return p;
}

Scene make_random_scene(Rng& rng) {
    Scene s;
    Primitive ground;
    ground.kind = PrimitiveKind::Plane;
    ground.a = Vec3{0, -1.0f, 0};
    ground.b = Vec3{0, 1, 0};
    ground.albedo = Vec3{(float)rng.uniform(0.3, 0.9), (float)rng.uniform(0.3, 0.9), (float)rng.uniform(0.3, 0.9)};
    s.objects.push_back(ground);

    int n = (int)rng.uniform_int(1, 4);
    for (int i = 0; i < n; ++i) {
        Primitive p;
        p.albedo = Vec3{(float)rng.uniform(0.2, 1.0), (float)rng.uniform(0.2, 1.0), (float)rng.uniform(0.2, 1.0)};
        if (rng.bernoulli(0.5)) {
            p.kind = PrimitiveKind::Sphere;
            p.a = Vec3{(float)rng.uniform(-1.0, 1.0), (float)rng.uniform(-0.5, 0.6), (float)rng.uniform(-1.0, 1.0)};
            p.radius = (float)rng.uniform(0.3, 0.8);
        } else {
            p.kind = PrimitiveKind::Box;
            Vec3 c{(float)rng.uniform(-1.0, 1.0), (float)rng.uniform(-0.6, 0.4), (float)rng.uniform(-1.0, 1.0)};
            Vec3 half{(float)rng.uniform(0.2, 0.6), (float)rng.uniform(0.2, 0.6), (float)rng.uniform(0.2, 0.6)};
            p.a = c - half;
            p.b = c + half;
        }
        s.objects.push_back(p);
    }
    Vec3 l{(float)rng.uniform(-1.0, 1.0), (float)rng.uniform(0.4, 1.0), (float)rng.uniform(-1.0, 1.0)};
    s.light_direction = normalized(l);
    s.ambient = (float)rng.uniform(0.15, 0.35);
    return s;
}

CameraTrajectory make_orbit_trajectory(Rng& rng, int frames, int H, int W) {
    CameraTrajectory traj;
    traj.intrinsics = Intrinsics{0.9f * (float)W, 0.9f * (float)W, 0.5f * (float)W, 0.5f * (float)H};
    float radius = (float)rng.uniform(2.6, 4.0);
    float height = (float)rng.uniform(0.2, 1.4);
    float theta0 = (float)rng.uniform(0.0, 6.283185307);
    float dtheta = (float)rng.uniform(0.01, 0.05) * (rng.bernoulli(0.5) ? 1.0f : -1.0f);
    float dr = (float)rng.uniform(-0.01, 0.01);
    float dh = (float)rng.uniform(-0.01, 0.01);
    for (int f = 0; f < frames; ++f) {
        float th = theta0 + dtheta * (float)f;
        float r = radius + dr * (float)f;
        float h = height + dh * (float)f;
        Vec3 eye{r * std::cos(th), h, r * std::sin(th)};
        traj.poses.push_back(look_at_pose(eye, Vec3{0, -0.2f, 0}));
    }
    return traj;
}

}  // namespace ncast
