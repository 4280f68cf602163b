#ifndef NEARMISS_CLIPSTORE_HPP
#define NEARMISS_CLIPSTORE_HPP

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nearmiss/image.hpp"
#include "nearmiss/rng.hpp"
#include "nearmiss/tensor.hpp"

namespace nearmiss::clips {

enum class Label { near_miss, safe_driving };
enum class Origin { real, synthetic };

std::string to_string(Label l);
Label label_from_string(const std::string& s);
std::string to_string(Origin o);
Origin origin_from_string(const std::string& s);

struct ClipRecord {
    std::string clip_id;
    std::string source_path;
    double fps = 30.0;
    double duration_s = 15.0;
    int n_frames = 0;
    Origin origin = Origin::real;
    double event_time_s = 10.0;

    void validate() const;
};

// half-open [lo, hi) when closed_hi is false, closed [lo, hi] otherwise
struct Window {
    double lo = 0.0, hi = 0.0;
    bool closed_hi = false;

    bool contains(double t) const { return t >= lo && (closed_hi ? t <= hi : t < hi); }
    std::string str() const;
};

struct SegmentationPolicy {
    Window safe_window{0.0, 5.0, false};
    Window nearmiss_window{5.0, 10.0, true};

    void validate(double duration_s) const;  // disjoint, inside the clip
};

struct LabeledSegment {
    std::string clip_id;
    Label label = Label::safe_driving;
    Window window;
    std::vector<int> frame_indices;  // source frame indices inside the window
};

struct DatasetSplit {
    std::vector<std::string> train, validation, test;
    std::array<double, 3> ratio{6, 2, 2};
    std::uint64_t seed = 0;
};

struct FramePair {
    Tensor slow;  // (T_slow, H, W, C)
    Tensor fast;  // (T_fast, H, W, C)
    std::vector<int> slow_indices, fast_indices;  // source frame indices
};

std::vector<LabeledSegment> segment_clip(const ClipRecord& clip, const SegmentationPolicy& policy);

DatasetSplit make_splits(const std::vector<std::string>& clip_ids, std::array<double, 3> ratio,
                         std::uint64_t seed);

// Relabels policy segments with per-clip content labels (synthetic sidecars):
// a clip whose true label is safe_driving contributes only safe segments.
void apply_content_labels(std::vector<LabeledSegment>& segments,
                          const std::map<std::string, Label>& clip_labels);

struct SampleIndices {
    std::vector<int> slow, fast;  // absolute source frame indices
};

// Uniform sampling over the segment's frames: fast index j covers the j-th of
// T_fast equal strides, offset01 in [0,1) placing the tap within the stride
// (0.5 = deterministic center used for eval). Slow takes every alpha-th fast tap.
SampleIndices sample_frame_indices(const LabeledSegment& segment, int slow_frames, int alpha,
                                   double offset01);

// Decoder seam. The bundled implementation reads directories of numbered
// PGM/PPM frames; video-file decoding plugs in behind the same interface.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual int frame_count() const = 0;
    virtual Image frame(int index) const = 0;
};

std::unique_ptr<FrameSource> open_frame_source(const std::string& path);

FramePair sample_frames(const LabeledSegment& segment, const FrameSource& source, int slow_frames,
                        int alpha, double offset01);

// Short side resized to a value drawn uniformly from [lo, hi] (aspect kept),
// then a random crop of crop×crop. Training-split augmentation.
Tensor scale_jitter(const Tensor& volume, int lo, int hi, int crop, std::uint64_t seed);

// Eval-path counterpart: short side to crop size, center crop.
Tensor resize_center_crop(const Tensor& volume, int crop);

// frame volume (T, H, W, C) <-> per-frame images
Tensor volume_from_images(const std::vector<Image>& frames);
Image volume_frame(const Tensor& volume, int t);

// line-delimited manifest: clip_id  source_path  fps  duration_s  origin  event_time_s
std::vector<ClipRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ClipRecord>& clips);

void write_split_file(const std::string& path, const DatasetSplit& split);
DatasetSplit read_split_file(const std::string& path);

}  // namespace nearmiss::clips

#endif
