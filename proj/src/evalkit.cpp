#define EIGEN_DONT_PARALLELIZE
#include "normalcast/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace ncast {

namespace {

constexpr double kRad2Deg = 57.29577951308232;

// angular distance between two 3-vectors after normalization, degrees;
// negative when either side is degenerate
double angle_deg(const float* a, const float* b) {
    double na = std::sqrt((double)a[0] * a[0] + (double)a[1] * a[1] + (double)a[2] * a[2]);
    double nb = std::sqrt((double)b[0] * b[0] + (double)b[1] * b[1] + (double)b[2] * b[2]);
    if (na <= 0 || nb <= 0) return -1.0;
    double c = ((double)a[0] * b[0] + (double)a[1] * b[1] + (double)a[2] * b[2]) / (na * nb);
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c) * kRad2Deg;
}

}  // namespace

Tensor angular_error_map(const NormalSequence& pred, const NormalSequence& gt, Mask* joint_out) {
    if (pred.normals.shape() != gt.normals.shape()) throw ShapeError("angular_error_map: shape mismatch");
    const Shape& s = pred.normals.shape();
    int F = s[0], H = s[1], W = s[2];
    Tensor err({F, H, W});
    Mask joint({F, H, W});
    for (long long p = 0; p < (long long)F * H * W; ++p) {
        if (!pred.valid.get(p) || !gt.valid.get(p)) continue;
        double a = angle_deg(pred.normals.data() + p * 3, gt.normals.data() + p * 3);
        if (a < 0) continue;
        err[p] = (float)a;
        joint.set(p, true);
    }
    if (joint_out) *joint_out = joint;
    return err;
}

EvalSummary summarize(const Tensor& error_map, const Mask& mask) {
    if (error_map.size() != mask.size()) throw ShapeError("summarize: mask size mismatch");
    std::vector<float> errs;
    errs.reserve((size_t)mask.count());
    for (long long p = 0; p < error_map.size(); ++p)
        if (mask.get(p)) errs.push_back(error_map[p]);
    if (errs.empty()) throw MetricError("summarize: empty mask");

    EvalSummary out;
    double sum = 0;
    long long c1 = 0, c2 = 0, c3 = 0;
    for (float e : errs) {
        sum += e;
        if (e < 11.25f) ++c1;
        if (e < 22.5f) ++c2;
        if (e < 30.0f) ++c3;
    }
    out.mean = sum / (double)errs.size();
    std::sort(errs.begin(), errs.end());
    size_t n = errs.size();
    out.median = (n % 2 == 1) ? errs[n / 2] : 0.5 * ((double)errs[n / 2 - 1] + errs[n / 2]);
    out.a1125 = 100.0 * c1 / (double)n;
    out.a225 = 100.0 * c2 / (double)n;
    out.a30 = 100.0 * c3 / (double)n;
    return out;
}

TemporalProfile temporal_profile(const NormalSequence& seq, int x0) {
    const Shape& s = seq.normals.shape();
    int F = s[0], H = s[1], W = s[2];
    if (x0 < 0 || x0 >= W) throw ShapeError("temporal_profile: column out of range");
    TemporalProfile out;
    out.slice = Tensor({F, H, 3});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int c = 0; c < 3; ++c)
                out.slice[((long long)f * H + y) * 3 + c] = seq.normals[(((long long)f * H + y) * W + x0) * 3 + c];
    if (F == 1) {
        out.flicker = 0.0;
        return out;
    }
    double sum = 0;
    long long cnt = 0;
    for (int f = 0; f + 1 < F; ++f)
        for (int y = 0; y < H; ++y) {
            const float* a = out.slice.data() + ((long long)f * H + y) * 3;
            const float* b = out.slice.data() + ((long long)(f + 1) * H + y) * 3;
            double d = angle_deg(a, b);
            if (d < 0) continue;  // degenerate (invalid) pixels do not count
            sum += d;
            ++cnt;
        }
    out.flicker = cnt > 0 ? sum / (double)cnt : 0.0;
    return out;
}

double mean_flicker(const NormalSequence& seq) {
    int W = seq.normals.dim(2);
    double sum = 0;
    for (int x = 0; x < W; ++x) sum += temporal_profile(seq, x).flicker;
    return sum / W;
}

std::vector<double> rank_methods(const std::vector<EvalSummary>& methods) {
    size_t M = methods.size();
    if (M < 2) throw ConfigError("rank_methods: need at least 2 methods");
    // metric accessors; first two are lower-better, the rest higher-better
    std::vector<std::function<double(const EvalSummary&)>> get = {
        [](const EvalSummary& s) { return s.mean; },  [](const EvalSummary& s) { return s.median; },
        [](const EvalSummary& s) { return s.a1125; }, [](const EvalSummary& s) { return s.a225; },
        [](const EvalSummary& s) { return s.a30; }};
    std::vector<double> avg(M, 0.0);
    for (size_t k = 0; k < get.size(); ++k) {
        bool lower_better = k < 2;
        std::vector<size_t> idx(M);
        for (size_t i = 0; i < M; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
            double va = get[k](methods[a]), vb = get[k](methods[b]);
            if (va == vb) return a < b;
            return lower_better ? va < vb : va > vb;
        });
        size_t i = 0;
        while (i < M) {
            size_t j = i;
            while (j + 1 < M && get[k](methods[idx[j + 1]]) == get[k](methods[idx[i]])) ++j;
            double shared = 0.5 * (double)((i + 1) + (j + 1));  // mean of occupied ranks
            for (size_t t = i; t <= j; ++t) avg[idx[t]] += shared;
            i = j + 1;
        }
    }
    for (double& a : avg) a /= (double)get.size();
    return avg;
}

std::vector<Tensor> pca_feature_viz(const PatchFeatures& features, std::array<double, 3>* explained) {
    const Tensor& f = features.feats;
    if (f.rank() != 3) throw ShapeError("pca_feature_viz: expects [F,N,D]");
    int F = f.dim(0), N = f.dim(1), D = f.dim(2);
    if (N < 3) throw ShapeError("pca_feature_viz: needs at least 3 patches");
    long long rows = (long long)F * N;

    Eigen::MatrixXd X(rows, D);
    for (long long r = 0; r < rows; ++r)
        for (int d = 0; d < D; ++d) X(r, d) = f[r * D + d];
    Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::MatrixXd cov = (X.transpose() * X) / std::max<double>(1.0, (double)rows - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // eigenvalues ascending; take the top 3
    Eigen::VectorXd evals = es.eigenvalues();
    Eigen::MatrixXd evecs = es.eigenvectors();
    double total = std::max(1e-300, evals.sum());

    std::array<int, 3> comp = {D - 1, D - 2, D - 3};
    if (explained)
        for (int k = 0; k < 3; ++k) (*explained)[(size_t)k] = std::max(0.0, evals(comp[(size_t)k])) / total;

    Eigen::MatrixXd proj(rows, 3);
    for (int k = 0; k < 3; ++k) proj.col(k) = X * evecs.col(comp[(size_t)k]);

    std::vector<Tensor> out;
    int gh = features.gh > 0 ? features.gh : (int)std::round(std::sqrt((double)N));
    int gw = features.gw > 0 ? features.gw : N / std::max(1, gh);
    if (gh * gw != N) throw ShapeError("pca_feature_viz: patch grid dims do not match N");
    for (int k = 0; k < 3; ++k) {
        double lo = proj.col(k).minCoeff(), hi = proj.col(k).maxCoeff();
        bool degenerate = evals(comp[(size_t)k]) <= 1e-12 || hi - lo <= 1e-12;
        for (long long r = 0; r < rows; ++r)
            proj(r, k) = degenerate ? 0.5 : (proj(r, k) - lo) / (hi - lo);
    }
    for (int fr = 0; fr < F; ++fr) {
        Tensor img({gh, gw, 3});
        for (int p = 0; p < N; ++p)
            for (int k = 0; k < 3; ++k) img[(long long)p * 3 + k] = (float)proj((long long)fr * N + p, k);
        out.push_back(std::move(img));
    }
    return out;
}

nlohmann::json evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir,
                             const std::string& method_name) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.is_directory() && fs::exists(e.path() / "normal.ntf")) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no prediction clips under " + pred_dir);

    nlohmann::json per_seq = nlohmann::json::array();
    std::vector<float> all_errs;
    double flicker_sum = 0;
    for (const std::string& name : names) {
        fs::path pp = fs::path(pred_dir) / name;
        fs::path gp = fs::path(gt_dir) / name;
        if (!fs::exists(gp / "normal.ntf")) throw IoError("missing ground truth for clip " + name);
        NormalSequence pred, gt;
        pred.normals = ntf_read_f32((pp / "normal.ntf").string());
        if (fs::exists(pp / "mask.ntf"))
            pred.valid = ntf_read_bool((pp / "mask.ntf").string());
        else
            pred.valid = Mask({pred.normals.dim(0), pred.normals.dim(1), pred.normals.dim(2)}, true);
        gt.normals = ntf_read_f32((gp / "normal.ntf").string());
        gt.valid = ntf_read_bool((gp / "mask.ntf").string());

        Mask joint;
        Tensor err = angular_error_map(pred, gt, &joint);
        EvalSummary s = summarize(err, joint);
        double fl = mean_flicker(pred);
        flicker_sum += fl;
        per_seq.push_back({{"clip", name},
                           {"mean", s.mean},
                           {"median", s.median},
                           {"a11_25", s.a1125},
                           {"a22_5", s.a225},
                           {"a30", s.a30},
                           {"flicker", fl}});
        for (long long p = 0; p < err.size(); ++p)
            if (joint.get(p)) all_errs.push_back(err[p]);
    }

    Tensor flat({(int)all_errs.size()});
    std::copy(all_errs.begin(), all_errs.end(), flat.data());
    EvalSummary agg = summarize(flat, Mask({(int)all_errs.size()}, true));

    nlohmann::json report;
    report["method"] = method_name;
    report["per_sequence"] = per_seq;
    report["aggregate"] = {{"mean", agg.mean}, {"median", agg.median}, {"a11_25", agg.a1125},
                           {"a22_5", agg.a225}, {"a30", agg.a30}};
    report["flicker"] = flicker_sum / (double)names.size();
    return report;
}

}  // namespace ncast
