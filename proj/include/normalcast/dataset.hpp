#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "normalcast/rng.hpp"
#include "normalcast/scene.hpp"

namespace ncast {

// Contiguous non-overlapping ranges over a prefix of the video, each with
// length in [min_len, max_len]; a trailing remainder shorter than min_len
// is dropped.
std::vector<std::pair<int, int>> segment_clips(int video_len, int min_len, int max_len);

struct AugmentationConfig {
    float hflip = 0.5f;
    float crop = 0.3f;
    float color = 0.1f;
    float grayscale = 0.2f;  // crop/color/grayscale are mutually exclusive
    void validate() const;
};

// What the augmentation draw decided; exposed so tests can assert the
// exclusivity contract directly.
struct AugmentationDecision {
    bool hflip = false;
    bool crop = false;
    bool color = false;
    bool grayscale = false;
};

struct AugmentedClip {
    VideoClip video;
    NormalSequence normals;
    AugmentationDecision decision;
};

// Horizontal flip applies jointly to RGB and normals (normal x negated);
// exactly one of crop/color/grayscale may additionally fire. Color and
// grayscale touch RGB only. Same seed, same output, bit for bit.
AugmentedClip augment(const VideoClip& clip, const NormalSequence& normals, uint64_t seed,
                      const AugmentationConfig& cfg);

// ---- dataset manifest ----

struct ClipEntry {
    std::string path;
    int frames = 0;
    std::string scene_id;
    int repeat = 1;  // per-source upsampling factor
};

struct DatasetManifest {
    std::vector<ClipEntry> clips;
    std::vector<double> weights;  // proportional to frames*repeat, sums to 1
};

DatasetManifest build_manifest(const std::vector<ClipEntry>& clips);
int sample_clip(const DatasetManifest& m, Rng& rng);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
uint64_t manifest_hash(const DatasetManifest& m);

// ---- clip directories ----
// rgb.ntf (u8), normal.ntf (f32), depth.ntf (f32), mask.ntf (bool), meta.json.

struct ClipData {
    VideoClip video;
    NormalSequence normals;
    DepthSequence depth;  // may be empty for prediction outputs
    nlohmann::json meta;
};

void save_clip_dir(const std::string& dir, const RenderResult& r, const Intrinsics& intr,
                   const std::string& scene_id);
ClipData load_clip_dir(const std::string& dir, bool need_depth = false);

// Scales so the short edge hits `target` (aspect preserved), then center-
// crops to multiples of `multiple`. RGB bilinear, normals nearest plus
// renormalization, masks nearest.
void resize_short_edge(VideoClip& clip, NormalSequence& normals, int target, int multiple);

// Window [start, start+len) of a clip.
VideoClip clip_window(const VideoClip& c, int start, int len);
NormalSequence normals_window(const NormalSequence& n, int start, int len);

}  // namespace ncast
