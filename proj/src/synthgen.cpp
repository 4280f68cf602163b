#include "nearmiss/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "nearmiss/image.hpp"
#include "nearmiss/rng.hpp"

namespace nearmiss::synth {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(EntrySide s) {
    switch (s) {
        case EntrySide::left: return "left";
        case EntrySide::right: return "right";
        case EntrySide::top: return "top";
        case EntrySide::bottom: return "bottom";
    }
    return "left";
}

void SynthClipSpec::validate() const {
    if (duration_s <= 0 || fps <= 0) throw std::invalid_argument("synth spec: bad duration/fps");
    if (height < 16 || width < 16) throw std::invalid_argument("synth spec: resolution too small");
    const bool has_intruder_in_window =
        intruder && intruder->onset_s >= 5.0 && intruder->onset_s <= 10.0;
    if ((label == clips::Label::near_miss) != has_intruder_in_window)
        throw std::invalid_argument(
            "synth spec: label near_miss requires an intruder with onset inside [5, 10] s "
            "(and vice versa)");
    if (intruder) {
        if (intruder->bbox_h <= 0 || intruder->bbox_w <= 0 || intruder->bbox_h >= height ||
            intruder->bbox_w >= width)
            throw std::invalid_argument("synth spec: intruder bbox does not fit in frame");
        if (intruder->onset_s < 0 || intruder->onset_s > duration_s)
            throw std::invalid_argument("synth spec: intruder onset outside clip");
        if (intruder->speed_px_per_s <= 0)
            throw std::invalid_argument("synth spec: intruder speed must be positive");
        if (intruder->speed_px_per_s < 5.0 * background.drift_px_per_s)
            throw std::invalid_argument(
                "synth spec: intruder speed must be at least 5x the background drift");
    }
}

namespace {

constexpr int kNoiseGrid = 8;

// tileable value noise, bilinear between grid nodes
struct NoiseField {
    double grid[kNoiseGrid][kNoiseGrid];

    explicit NoiseField(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& row : grid)
            for (double& v : row) v = rng.uniform();
    }

    double sample(double u, double v) const {  // u, v in grid units, wrapped
        double fu = u - std::floor(u / kNoiseGrid) * kNoiseGrid;
        double fv = v - std::floor(v / kNoiseGrid) * kNoiseGrid;
        int u0 = int(fu) % kNoiseGrid, v0 = int(fv) % kNoiseGrid;
        int u1 = (u0 + 1) % kNoiseGrid, v1 = (v0 + 1) % kNoiseGrid;
        double du = fu - std::floor(fu), dv = fv - std::floor(fv);
        double a = grid[v0][u0] + (grid[v0][u1] - grid[v0][u0]) * du;
        double b = grid[v1][u0] + (grid[v1][u1] - grid[v1][u0]) * du;
        return a + (b - a) * dv;
    }
};

struct Trajectory {
    double start_x = 0, start_y = 0;
    double dir_x = 0, dir_y = 0;
    double arrive_t = 0;  // seconds after onset when the sprite reaches the center

    // center of the sprite at time t (seconds since clip start)
    void at(const IntruderSpec& in, double onset, double t, double& cx, double& cy) const {
        double dt = std::min(t - onset, arrive_t);
        cx = start_x + dir_x * in.speed_px_per_s * dt;
        cy = start_y + dir_y * in.speed_px_per_s * dt;
    }
};

Trajectory plan_trajectory(const SynthClipSpec& spec) {
    const IntruderSpec& in = *spec.intruder;
    Trajectory tr;
    const double cx = spec.width / 2.0, cy = spec.height / 2.0;
    const double hw = in.bbox_w / 2.0, hh = in.bbox_h / 2.0;
    // spawn fully inside the frame at the chosen side, small lateral jitter
    Rng rng(splitmix64_at(spec.seed, 17));
    switch (in.entry_side) {
        case EntrySide::left:
            tr.start_x = hw;
            tr.start_y = cy + rng.uniform(-0.2, 0.2) * spec.height;
            break;
        case EntrySide::right:
            tr.start_x = spec.width - hw;
            tr.start_y = cy + rng.uniform(-0.2, 0.2) * spec.height;
            break;
        case EntrySide::top:
            tr.start_y = hh;
            tr.start_x = cx + rng.uniform(-0.2, 0.2) * spec.width;
            break;
        case EntrySide::bottom:
            tr.start_y = spec.height - hh;
            tr.start_x = cx + rng.uniform(-0.2, 0.2) * spec.width;
            break;
    }
    double dx = cx - tr.start_x, dy = cy - tr.start_y;
    double dist = std::sqrt(dx * dx + dy * dy);
    if (dist < 1e-9) {
        tr.dir_x = tr.dir_y = 0;
        tr.arrive_t = 0;
    } else {
        tr.dir_x = dx / dist;
        tr.dir_y = dy / dist;
        tr.arrive_t = dist / in.speed_px_per_s;
    }
    return tr;
}

}  // namespace

std::pair<Tensor, GroundTruth> generate_clip(const SynthClipSpec& spec) {
    spec.validate();
    const int T = spec.n_frames(), H = spec.height, W = spec.width;
    Tensor vol({T, H, W, 1});
    GroundTruth gt;
    gt.label = spec.label;

    NoiseField noise(spec.background.texture_seed);
    const double gx = double(kNoiseGrid) / W, gy = double(kNoiseGrid) / H;
    const double drift_x = spec.background.drift_px_per_s * std::cos(spec.background.drift_angle_rad);
    const double drift_y = spec.background.drift_px_per_s * std::sin(spec.background.drift_angle_rad);

    Trajectory tr;
    if (spec.intruder) tr = plan_trajectory(spec);

    for (int t = 0; t < T; ++t) {
        const double ts = double(t) / spec.fps;
        const double ox = drift_x * ts, oy = drift_y * ts;
        double* frame = vol.ptr() + std::int64_t(t) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = noise.sample((x + ox) * gx, (y + oy) * gy);
                frame[std::int64_t(y) * W + x] = 0.15 + 0.5 * v;
            }
        if (spec.intruder && ts >= spec.intruder->onset_s) {
            const IntruderSpec& in = *spec.intruder;
            double cx, cy;
            tr.at(in, in.onset_s, ts, cx, cy);
            const double rx = in.bbox_w / 2.0, ry = in.bbox_h / 2.0;
            BBox box;
            box.frame = t;
            box.x = std::max(0, int(std::lround(cx - rx)));
            box.y = std::max(0, int(std::lround(cy - ry)));
            box.w = std::min(W - box.x, in.bbox_w);
            box.h = std::min(H - box.y, in.bbox_h);
            // flat-shaded ellipse inscribed in the bbox
            for (int y = box.y; y < box.y + box.h; ++y)
                for (int x = box.x; x < box.x + box.w; ++x) {
                    double ny = (y + 0.5 - cy) / ry, nx = (x + 0.5 - cx) / rx;
                    if (nx * nx + ny * ny <= 1.0)
                        frame[std::int64_t(y) * W + x] = in.brightness;
                }
            gt.bboxes.push_back(box);
        }
    }
    return {std::move(vol), std::move(gt)};
}

SynthClipSpec random_spec(std::uint64_t seed, clips::Label label, int height, int width,
                          double fps, double duration_s) {
    Rng rng(seed);
    SynthClipSpec spec;
    spec.seed = seed;
    spec.height = height;
    spec.width = width;
    spec.fps = fps;
    spec.duration_s = duration_s;
    spec.label = label;
    spec.background.texture_seed = splitmix64_at(seed, 1);
    const double scale = double(std::min(height, width));
    spec.background.drift_px_per_s = rng.uniform(0.01, 0.03) * scale;
    spec.background.drift_angle_rad = rng.uniform(0.0, 6.283185307179586);
    if (label == clips::Label::near_miss) {
        IntruderSpec in;
        in.onset_s = rng.uniform(5.5, 9.0);  // jittered so no single frame index gives it away
        double side_frac = rng.uniform(0.18, 0.28);
        in.bbox_h = std::max(4, int(std::lround(side_frac * scale)));
        in.bbox_w = std::max(4, int(std::lround(rng.uniform(0.18, 0.28) * scale)));
        in.speed_px_per_s = std::max(rng.uniform(0.15, 0.30) * scale,
                                     5.0 * spec.background.drift_px_per_s);
        in.entry_side = EntrySide(rng.uniform_int(0, 3));
        in.brightness = rng.uniform() < 0.5 ? 0.95 : 0.02;
        spec.intruder = in;
    }
    return spec;
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
    json j;
    j["label"] = clips::to_string(gt.label);
    json boxes = json::array();
    for (const auto& b : gt.bboxes)
        boxes.push_back({{"frame", b.frame}, {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
    j["bboxes"] = boxes;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ground truth: cannot write " + path);
    out << j.dump() << '\n';
}

GroundTruth read_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ground truth: cannot open " + path);
    json j = json::parse(in);
    GroundTruth gt;
    gt.label = clips::label_from_string(j.at("label").get<std::string>());
    for (const auto& b : j.at("bboxes")) {
        BBox box;
        box.frame = b.at("frame").get<int>();
        box.x = b.at("x").get<int>();
        box.y = b.at("y").get<int>();
        box.w = b.at("w").get<int>();
        box.h = b.at("h").get<int>();
        gt.bboxes.push_back(box);
    }
    return gt;
}

std::vector<CorpusEntry> generate_corpus(const CorpusParams& params, const std::string& out_dir) {
    if (params.n <= 0) throw std::invalid_argument("corpus: n must be positive");
    if (params.balance < 0 || params.balance > 1)
        throw std::invalid_argument("corpus: balance must lie in [0, 1]");
    const int n_near = int(std::lround(params.balance * params.n));  // round half away from zero

    std::vector<clips::Label> labels(std::size_t(params.n), clips::Label::safe_driving);
    for (int i = 0; i < n_near; ++i) labels[std::size_t(i)] = clips::Label::near_miss;
    Rng shuffle_rng(splitmix64_at(params.master_seed, 0xC0FFEE));
    shuffle_rng.shuffle(labels);

    fs::create_directories(fs::path(out_dir) / "clips");
    fs::create_directories(fs::path(out_dir) / "gt");

    std::vector<CorpusEntry> entries;
    for (int i = 0; i < params.n; ++i) {
        std::uint64_t clip_seed = splitmix64_at(params.master_seed, std::uint64_t(i));
        SynthClipSpec spec = random_spec(clip_seed, labels[std::size_t(i)], params.height,
                                         params.width, params.fps, params.duration_s);
        auto [vol, gt] = generate_clip(spec);

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth_%06d", i);
        std::string clip_id = idbuf;
        fs::path clip_dir = fs::path(out_dir) / "clips" / clip_id;
        fs::create_directories(clip_dir);
        const int T = vol.size(0);
        for (int t = 0; t < T; ++t) {
            char fbuf[32];
            std::snprintf(fbuf, sizeof(fbuf), "frame_%05d.pgm", t);
            write_pgm((clip_dir / fbuf).string(), clips::volume_frame(vol, t));
        }
        std::string gt_path = (fs::path(out_dir) / "gt" / (clip_id + ".json")).string();
        write_ground_truth(gt_path, gt);

        CorpusEntry e;
        e.record.clip_id = clip_id;
        e.record.source_path = clip_dir.string();
        e.record.fps = params.fps;
        e.record.duration_s = params.duration_s;
        e.record.n_frames = T;
        e.record.origin = clips::Origin::synthetic;
        e.record.event_time_s = 10.0;
        e.label = labels[std::size_t(i)];
        e.gt_path = gt_path;
        entries.push_back(std::move(e));
    }

    std::vector<clips::ClipRecord> records;
    records.reserve(entries.size());
    for (const auto& e : entries) records.push_back(e.record);
    clips::write_manifest((fs::path(out_dir) / "manifest.tsv").string(), records);
    return entries;
}

double motion_energy(const Tensor& volume, double fps, const clips::Window& window) {
    if (volume.rank() != 4) throw std::invalid_argument("motion_energy: expected (T, H, W, C)");
    const int T = volume.size(0);
    const std::int64_t per = volume.numel() / T;
    double sum = 0.0;
    std::int64_t count = 0;
    for (int t = 1; t < T; ++t) {
        double ts = double(t) / fps;
        if (!window.contains(ts)) continue;
        const double* a = volume.ptr() + std::int64_t(t - 1) * per;
        const double* b = volume.ptr() + std::int64_t(t) * per;
        for (std::int64_t i = 0; i < per; ++i) sum += std::abs(b[i] - a[i]);
        count += per;
    }
    return count > 0 ? sum / double(count) : 0.0;
}

double rank_auc(const std::vector<double>& scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size() || scores.empty())
        throw std::invalid_argument("rank_auc: size mismatch or empty input");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // midranks for ties
    std::vector<double> rank(scores.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = (double(i) + double(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < scores.size(); ++k)
        if (positives[k]) {
            pos_rank_sum += rank[k];
            ++n_pos;
        }
    std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("rank_auc: one class is empty");
    return (pos_rank_sum - double(n_pos) * (double(n_pos) + 1.0) / 2.0) /
           (double(n_pos) * double(n_neg));
}

}  // namespace nearmiss::synth
