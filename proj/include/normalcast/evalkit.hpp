#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "normalcast/scene.hpp"
#include "normalcast/sfr.hpp"

namespace ncast {

// DSINE-style metric row: mean/median angular error in degrees plus the
// percentage of valid pixels under 11.25/22.5/30 degrees (strict <).
struct EvalSummary {
    double mean = 0, median = 0;
    double a1125 = 0, a225 = 0, a30 = 0;
};

// Per-pixel arccos of the dot product in degrees; mask = pred-valid AND
// gt-valid. Both sides renormalized on valid pixels first.
Tensor angular_error_map(const NormalSequence& pred, const NormalSequence& gt, Mask* joint_out = nullptr);

EvalSummary summarize(const Tensor& error_map, const Mask& mask);

struct TemporalProfile {
    Tensor slice;        // [F,H,3] normals along a fixed column
    double flicker = 0;  // mean frame-to-frame angular change, degrees
};
TemporalProfile temporal_profile(const NormalSequence& seq, int x0);
// Aggregate flicker: per-column temporal_profile averaged over all columns.
double mean_flicker(const NormalSequence& seq);

// Per metric, rank methods (1 = best; ties share the mean of occupied
// ranks), then average over the 5 metrics.
std::vector<double> rank_methods(const std::vector<EvalSummary>& methods);

// Top-3 PCA projection of patch features, min-max normalized per clip.
// Components with no variance pad at 0.5. Returns one [gh,gw,3] image per
// frame; explained (optional) receives the top-3 explained variance ratios.
std::vector<Tensor> pca_feature_viz(const PatchFeatures& features, std::array<double, 3>* explained = nullptr);

// File-level evaluation: pred/gt are directories of clip subdirectories
// with normal.ntf (+ mask.ntf). Emits the report schema used by the CLI.
nlohmann::json evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir, const std::string& method_name);

}  // namespace ncast
