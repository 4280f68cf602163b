#include "nearmiss/clipstore.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nearmiss::clips {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Label l) { return l == Label::near_miss ? "near_miss" : "safe_driving"; }

Label label_from_string(const std::string& s) {
    if (s == "near_miss") return Label::near_miss;
    if (s == "safe_driving") return Label::safe_driving;
    throw std::invalid_argument("unknown class label: " + s);
}

std::string to_string(Origin o) { return o == Origin::real ? "real" : "synthetic"; }

Origin origin_from_string(const std::string& s) {
    if (s == "real") return Origin::real;
    if (s == "synthetic") return Origin::synthetic;
    throw std::invalid_argument("unknown clip origin: " + s);
}

std::string Window::str() const {
    std::ostringstream os;
    os << "[" << lo << "," << hi << (closed_hi ? "]" : ")");
    return os.str();
}

void ClipRecord::validate() const {
    if (clip_id.empty()) throw std::invalid_argument("clip record: empty clip_id");
    if (fps <= 0) throw std::invalid_argument("clip " + clip_id + ": fps must be positive");
    if (duration_s <= 0) throw std::invalid_argument("clip " + clip_id + ": non-positive duration");
    int expect = int(std::lround(fps * duration_s));
    if (std::abs(n_frames - expect) > 1)
        throw std::invalid_argument("clip " + clip_id + ": n_frames " + std::to_string(n_frames) +
                                    " inconsistent with fps*duration = " + std::to_string(expect));
    if (event_time_s <= 0 || event_time_s > duration_s)
        throw std::invalid_argument("clip " + clip_id + ": event_time_s outside (0, duration]");
}

void SegmentationPolicy::validate(double duration_s) const {
    for (const Window* w : {&safe_window, &nearmiss_window}) {
        if (w->lo < 0 || w->lo >= w->hi)
            throw std::invalid_argument("segmentation window " + w->str() + " is empty or negative");
        double end = w->hi;
        if (end > duration_s + 1e-9 || (w->closed_hi && end > duration_s + 1e-9))
            throw std::invalid_argument("segmentation window " + w->str() +
                                        " exceeds clip duration " + std::to_string(duration_s));
    }
    // overlap check honoring open/closed upper bounds
    const Window& a = safe_window.lo <= nearmiss_window.lo ? safe_window : nearmiss_window;
    const Window& b = safe_window.lo <= nearmiss_window.lo ? nearmiss_window : safe_window;
    bool overlap = a.closed_hi ? (b.lo <= a.hi) : (b.lo < a.hi);
    if (overlap)
        throw std::invalid_argument("segmentation windows " + safe_window.str() + " and " +
                                    nearmiss_window.str() + " overlap");
}

namespace {

std::vector<int> frames_in_window(const ClipRecord& clip, const Window& w) {
    std::vector<int> out;
    const double eps = 1e-9;
    int first = std::max(0, int(std::ceil(w.lo * clip.fps - eps)));
    for (int i = first; i < clip.n_frames; ++i) {
        double t = double(i) / clip.fps;
        if (w.closed_hi ? (t > w.hi + eps) : (t >= w.hi - eps)) break;
        out.push_back(i);
    }
    return out;
}

}  // namespace

std::vector<LabeledSegment> segment_clip(const ClipRecord& clip, const SegmentationPolicy& policy) {
    clip.validate();
    policy.validate(clip.duration_s);
    std::vector<LabeledSegment> out;
    LabeledSegment safe;
    safe.clip_id = clip.clip_id;
    safe.label = Label::safe_driving;
    safe.window = policy.safe_window;
    safe.frame_indices = frames_in_window(clip, policy.safe_window);
    LabeledSegment nm;
    nm.clip_id = clip.clip_id;
    nm.label = Label::near_miss;
    nm.window = policy.nearmiss_window;
    nm.frame_indices = frames_in_window(clip, policy.nearmiss_window);
    out.push_back(std::move(safe));
    out.push_back(std::move(nm));
    return out;
}

DatasetSplit make_splits(const std::vector<std::string>& clip_ids, std::array<double, 3> ratio,
                         std::uint64_t seed) {
    if (clip_ids.empty()) throw std::invalid_argument("make_splits: empty clip set");
    for (double r : ratio)
        if (r < 0) throw std::invalid_argument("make_splits: negative ratio component");
    double total = ratio[0] + ratio[1] + ratio[2];
    if (total <= 0) throw std::invalid_argument("make_splits: all ratio components zero");
    int parts = 0;
    for (double r : ratio)
        if (r > 0) ++parts;
    if (int(clip_ids.size()) < parts)
        throw std::invalid_argument("make_splits: fewer clips (" +
                                    std::to_string(clip_ids.size()) + ") than split parts (" +
                                    std::to_string(parts) + ")");

    std::vector<std::string> ids = clip_ids;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    std::size_t n_train = std::size_t(std::floor(ratio[0] / total * double(n)));
    std::size_t n_val = std::size_t(std::floor(ratio[1] / total * double(n)));
    DatasetSplit split;
    split.ratio = ratio;
    split.seed = seed;
    split.train.assign(ids.begin(), ids.begin() + std::ptrdiff_t(n_train));
    split.validation.assign(ids.begin() + std::ptrdiff_t(n_train),
                            ids.begin() + std::ptrdiff_t(n_train + n_val));
    split.test.assign(ids.begin() + std::ptrdiff_t(n_train + n_val), ids.end());
    return split;
}

void apply_content_labels(std::vector<LabeledSegment>& segments,
                          const std::map<std::string, Label>& clip_labels) {
    for (auto& seg : segments) {
        auto it = clip_labels.find(seg.clip_id);
        if (it == clip_labels.end()) continue;
        if (it->second == Label::safe_driving) seg.label = Label::safe_driving;
    }
}

SampleIndices sample_frame_indices(const LabeledSegment& segment, int slow_frames, int alpha,
                                   double offset01) {
    if (slow_frames < 1 || alpha < 1)
        throw std::invalid_argument("sample_frames: slow_frames and alpha must be >= 1");
    if (offset01 < 0.0 || offset01 >= 1.0)
        throw std::invalid_argument("sample_frames: offset must lie in [0, 1)");
    const int k_fast = slow_frames * alpha;
    const int m = int(segment.frame_indices.size());
    if (m < k_fast)
        throw std::invalid_argument("segment " + segment.clip_id + " " + segment.window.str() +
                                    " has " + std::to_string(m) + " frames, needs at least " +
                                    std::to_string(k_fast));
    SampleIndices out;
    const double stride = double(m) / double(k_fast);
    for (int j = 0; j < k_fast; ++j) {
        int rel = int(std::floor((double(j) + offset01) * stride));
        rel = std::min(rel, m - 1);
        out.fast.push_back(segment.frame_indices[std::size_t(rel)]);
    }
    for (int i = 0; i < slow_frames; ++i) out.slow.push_back(out.fast[std::size_t(i * alpha)]);
    return out;
}

// ---------------------------------------------------------------------------
// Frame sources
// ---------------------------------------------------------------------------

namespace {

class ImageDirSource final : public FrameSource {
public:
    explicit ImageDirSource(const std::string& dir) {
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            if (ext == ".pgm" || ext == ".ppm") files_.push_back(e.path().string());
        }
        std::sort(files_.begin(), files_.end());
        if (files_.empty())
            throw std::runtime_error("frame source: no .pgm/.ppm frames under " + dir);
    }

    int frame_count() const override { return int(files_.size()); }

    Image frame(int index) const override {
        if (index < 0 || index >= frame_count())
            throw std::out_of_range("frame source: index " + std::to_string(index) +
                                    " out of range (have " + std::to_string(frame_count()) + ")");
        return read_pnm(files_[std::size_t(index)]);
    }

private:
    std::vector<std::string> files_;
};

}  // namespace

std::unique_ptr<FrameSource> open_frame_source(const std::string& path) {
    if (fs::is_directory(path)) return std::make_unique<ImageDirSource>(path);
    throw std::runtime_error("frame source: no decoder available for " + path +
                             " (expected a directory of numbered .pgm/.ppm frames)");
}

Tensor volume_from_images(const std::vector<Image>& frames) {
    if (frames.empty()) throw std::invalid_argument("volume: no frames");
    const int h = frames[0].h, w = frames[0].w, c = frames[0].c;
    Tensor vol({int(frames.size()), h, w, c});
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const Image& f = frames[t];
        if (f.h != h || f.w != w || f.c != c)
            throw std::invalid_argument("volume: frame " + std::to_string(t) +
                                        " has inconsistent dimensions");
        std::copy(f.px.begin(), f.px.end(), vol.data.begin() + std::ptrdiff_t(t * f.px.size()));
    }
    return vol;
}

Image volume_frame(const Tensor& volume, int t) {
    if (volume.rank() != 4) throw std::invalid_argument("volume_frame: expected (T, H, W, C)");
    Image img(volume.size(1), volume.size(2), volume.size(3));
    std::size_t per = img.px.size();
    std::copy_n(volume.data.begin() + std::ptrdiff_t(std::size_t(t) * per), per, img.px.begin());
    return img;
}

FramePair sample_frames(const LabeledSegment& segment, const FrameSource& source, int slow_frames,
                        int alpha, double offset01) {
    SampleIndices idx = sample_frame_indices(segment, slow_frames, alpha, offset01);
    auto gather = [&](const std::vector<int>& indices) {
        std::vector<Image> frames;
        frames.reserve(indices.size());
        for (int i : indices) frames.push_back(source.frame(i));
        return volume_from_images(frames);
    };
    FramePair fp;
    fp.fast = gather(idx.fast);
    fp.slow = gather(idx.slow);
    fp.slow_indices = std::move(idx.slow);
    fp.fast_indices = std::move(idx.fast);
    return fp;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

Tensor resize_volume_short_side(const Tensor& volume, int short_side) {
    const int t = volume.size(0), h = volume.size(1), w = volume.size(2);
    int oh, ow;
    if (h <= w) {
        oh = short_side;
        ow = std::max(1, int(std::lround(double(w) * short_side / h)));
    } else {
        ow = short_side;
        oh = std::max(1, int(std::lround(double(h) * short_side / w)));
    }
    std::vector<Image> frames;
    frames.reserve(std::size_t(t));
    for (int i = 0; i < t; ++i) frames.push_back(bilinear_resize(volume_frame(volume, i), oh, ow));
    return volume_from_images(frames);
}

Tensor crop_volume(const Tensor& volume, int y0, int x0, int size) {
    const int t = volume.size(0);
    std::vector<Image> frames;
    frames.reserve(std::size_t(t));
    for (int i = 0; i < t; ++i) frames.push_back(crop(volume_frame(volume, i), y0, x0, size, size));
    return volume_from_images(frames);
}

}  // namespace

Tensor scale_jitter(const Tensor& volume, int lo, int hi, int crop_size, std::uint64_t seed) {
    if (volume.rank() != 4) throw std::invalid_argument("scale_jitter: expected (T, H, W, C)");
    if (lo <= 0 || lo > hi) throw std::invalid_argument("scale_jitter: need 0 < lo <= hi");
    if (crop_size > lo)
        throw std::invalid_argument("scale_jitter: crop " + std::to_string(crop_size) +
                                    " larger than minimum short side " + std::to_string(lo));
    Rng rng(seed);
    int short_side = rng.uniform_int(lo, hi);
    Tensor resized = resize_volume_short_side(volume, short_side);
    int max_y = resized.size(1) - crop_size;
    int max_x = resized.size(2) - crop_size;
    int y0 = max_y > 0 ? rng.uniform_int(0, max_y) : 0;
    int x0 = max_x > 0 ? rng.uniform_int(0, max_x) : 0;
    return crop_volume(resized, y0, x0, crop_size);
}

Tensor resize_center_crop(const Tensor& volume, int crop_size) {
    Tensor resized = resize_volume_short_side(volume, crop_size);
    int y0 = (resized.size(1) - crop_size) / 2;
    int x0 = (resized.size(2) - crop_size) / 2;
    return crop_volume(resized, y0, x0, crop_size);
}

// ---------------------------------------------------------------------------
// Manifest / split files
// ---------------------------------------------------------------------------

std::vector<ClipRecord> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    fs::path base = fs::path(path).parent_path();
    std::vector<ClipRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ClipRecord rec;
        std::string origin;
        if (!(ls >> rec.clip_id >> rec.source_path >> rec.fps >> rec.duration_s >> rec.n_frames >>
              origin >> rec.event_time_s))
            throw std::runtime_error("manifest: malformed record at " + path + ":" +
                                     std::to_string(lineno));
        rec.origin = origin_from_string(origin);
        fs::path sp(rec.source_path);
        if (sp.is_relative()) rec.source_path = (base / sp).string();
        rec.validate();
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw std::runtime_error("manifest: no records in " + path);
    return out;
}

void write_manifest(const std::string& path, const std::vector<ClipRecord>& clips) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);
    fs::path base = fs::path(path).parent_path();
    for (const auto& c : clips) {
        fs::path sp(c.source_path);
        std::string rel = sp.lexically_proximate(base).string();
        out << c.clip_id << '\t' << rel << '\t' << c.fps << '\t' << c.duration_s << '\t'
            << c.n_frames << '\t' << to_string(c.origin) << '\t' << c.event_time_s << '\n';
    }
}

void write_split_file(const std::string& path, const DatasetSplit& split) {
    json j;
    j["ratio"] = split.ratio;
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["validation"] = split.validation;
    j["test"] = split.test;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("split file: cannot write " + path);
    out << j.dump(2) << '\n';
}

DatasetSplit read_split_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("split file: cannot open " + path);
    json j = json::parse(in);
    DatasetSplit s;
    auto r = j.at("ratio").get<std::vector<double>>();
    if (r.size() != 3) throw std::runtime_error("split file: ratio must have 3 components");
    s.ratio = {r[0], r[1], r[2]};
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

}  // namespace nearmiss::clips
