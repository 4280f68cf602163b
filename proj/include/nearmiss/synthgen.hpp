#ifndef NEARMISS_SYNTHGEN_HPP
#define NEARMISS_SYNTHGEN_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nearmiss/clipstore.hpp"
#include "nearmiss/tensor.hpp"

namespace nearmiss::synth {

enum class EntrySide { left, right, top, bottom };
std::string to_string(EntrySide s);

struct IntruderSpec {
    double onset_s = 6.0;
    double speed_px_per_s = 12.0;
    int bbox_h = 14, bbox_w = 14;
    EntrySide entry_side = EntrySide::left;
    double brightness = 0.95;  // sprite fill value
};

struct BackgroundSpec {
    std::uint64_t texture_seed = 0;
    double drift_px_per_s = 1.0;
    double drift_angle_rad = 0.0;
};

struct SynthClipSpec {
    std::uint64_t seed = 0;
    double duration_s = 15.0;
    double fps = 8.0;
    int height = 112, width = 112;
    clips::Label label = clips::Label::safe_driving;
    std::optional<IntruderSpec> intruder;
    BackgroundSpec background;

    int n_frames() const { return int(duration_s * fps + 0.5); }
    void validate() const;
};

struct BBox {
    int frame = 0;
    int x = 0, y = 0, w = 0, h = 0;

    bool contains(int px, int py) const {
        return px >= x && px < x + w && py >= y && py < y + h;
    }
};

struct GroundTruth {
    clips::Label label = clips::Label::safe_driving;
    std::vector<BBox> bboxes;  // one entry per frame in which the intruder is visible
};

// Deterministic per spec. Returns the (T, H, W, 1) frame volume and the
// per-frame ground truth. Near-miss clips show a fast sprite entering from one
// side and heading for the frame center over a slowly drifting noise
// background; safe clips show the drift only.
std::pair<Tensor, GroundTruth> generate_clip(const SynthClipSpec& spec);

// Randomized spec with onset jittered inside [5.5, 9.0] s and sprite speed at
// least 5x the background drift.
SynthClipSpec random_spec(std::uint64_t seed, clips::Label label, int height, int width,
                          double fps, double duration_s);

struct CorpusParams {
    int n = 300;
    double balance = 0.5;  // near-miss fraction, count = lround(balance * n)
    std::uint64_t master_seed = 0;
    int height = 112, width = 112;
    double fps = 8.0;
    double duration_s = 15.0;
};

struct CorpusEntry {
    clips::ClipRecord record;
    clips::Label label;
    std::string gt_path;
};

// Writes clips/<id>/frame_NNNNN.pgm, gt/<id>.json and manifest.tsv under out_dir.
std::vector<CorpusEntry> generate_corpus(const CorpusParams& params, const std::string& out_dir);

void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::string& path);

// Mean absolute frame difference per pixel inside the window.
double motion_energy(const Tensor& volume, double fps, const clips::Window& window);

// Rank AUC of score separating positives from negatives.
double rank_auc(const std::vector<double>& scores, const std::vector<bool>& positives);

}  // namespace nearmiss::synth

#endif
