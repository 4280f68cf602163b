#ifndef NEARMISS_TRAINER_HPP
#define NEARMISS_TRAINER_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nearmiss/clipstore.hpp"
#include "nearmiss/metrics.hpp"
#include "nearmiss/slowfast.hpp"

namespace nearmiss::train {

// Warmup + cosine annealing symbols. During warmup the rate climbs linearly
// from warmup_start to lr_max; afterwards it follows the half-cosine from
// lr_max down to lr_min over the remaining t_max - warmup_epochs cycles.
struct ScheduleConfig {
    double lr_min = 0.0;
    double lr_max = 0.1;
    double warmup_start = 0.01;
    int warmup_epochs = 34;
    int t_max = 196;

    void validate() const;
};

struct OptimConfig {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int max_epochs = 196;

    void validate() const;
};

double lr_at(int epoch, const ScheduleConfig& cfg);

// velocity = momentum * velocity + grad + weight_decay * param
// param   -= lr * velocity
class SGD {
public:
    explicit SGD(const OptimConfig& cfg) : cfg_(cfg) {}
    void step(nn::ParamStore& store, double lr);

private:
    OptimConfig cfg_;
    std::vector<Tensor> velocity_;
};

// centered moving average, odd window, edges averaged over what is available
std::vector<double> smooth_curve(const std::vector<double>& series, int window);

struct IterRecord {
    int iteration = 0;
    int epoch = 0;
    double lr = 0.0, loss = 0.0, top1_error = 0.0;
};

struct EpochValRecord {
    int epoch = 0;
    double loss = 0.0, accuracy = 0.0;
};

struct TrainingCurve {
    std::vector<IterRecord> iterations;
    std::vector<EpochValRecord> validation;
};

void write_curve(const std::string& path, const TrainingCurve& curve);
void write_val_curve(const std::string& path, const TrainingCurve& curve);
TrainingCurve read_curve(const std::string& path);

// minimal line-plot renderer for the smoothed loss / top-1 error figures
void write_curve_svg(const std::string& path, const std::vector<double>& series, int window,
                     const std::string& title);

// ---------------------------------------------------------------------------
// Data pipeline: segments -> normalized (N, C, T, H, W) pathway batches
// ---------------------------------------------------------------------------

struct DataTransform {
    int jitter_lo = 256, jitter_hi = 320;
    int crop = 224;
    bool train_augment = true;  // jitter + random temporal offset on training loads
};

class SegmentDataset {
public:
    SegmentDataset(std::vector<clips::ClipRecord> records,
                   std::vector<clips::LabeledSegment> segments);

    std::size_t size() const { return segments_.size(); }
    const clips::LabeledSegment& segment(std::size_t i) const { return segments_[i]; }
    const clips::ClipRecord& record_for(const std::string& clip_id) const;

    // deterministic per (seed); train=true applies jitter + random temporal offset
    struct Loaded {
        Tensor slow, fast;  // (T, H, W, C) after spatial transform
        int label = 0;      // 1 = near_miss
    };
    Loaded load(std::size_t index, const sf::PathwayConfig& model_cfg, const DataTransform& tf,
                bool train, std::uint64_t seed) const;

    // subset of segment indices whose clip id is in the given split list
    std::vector<std::size_t> indices_for(const std::vector<std::string>& clip_ids) const;

private:
    std::vector<clips::ClipRecord> records_;
    std::vector<clips::LabeledSegment> segments_;
    std::map<std::string, std::size_t> by_id_;
    mutable std::map<std::string, std::shared_ptr<clips::FrameSource>> sources_;
    const clips::FrameSource& source_for(const std::string& clip_id) const;
};

// stacks loads into network layout and applies per-channel normalization
struct BatchTensors {
    Tensor slow, fast;  // (N, C, T, H, W)
    std::vector<int> labels;
};
BatchTensors assemble_batch(const std::vector<SegmentDataset::Loaded>& samples,
                            const std::vector<double>& norm_mean,
                            const std::vector<double>& norm_std);

std::pair<std::vector<double>, std::vector<double>> compute_norm_stats(
    const SegmentDataset& data, const std::vector<std::size_t>& indices,
    const sf::PathwayConfig& cfg, const DataTransform& tf);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    double mean_loss = 0.0;
    double top1_error = 0.0;
    int batches = 0;
};

EpochStats train_epoch(sf::SlowFastNet& net, SGD& optim, const SegmentDataset& data,
                       const std::vector<std::size_t>& order, const sf::PathwayConfig& cfg,
                       const DataTransform& tf, const OptimConfig& ocfg, double lr,
                       std::uint64_t seed, int epoch, TrainingCurve* curve);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;  // percent
    std::vector<clips::Label> predictions;
    std::vector<clips::Label> labels;
};

EvalResult evaluate(sf::SlowFastNet& net, const SegmentDataset& data,
                    const std::vector<std::size_t>& indices, const DataTransform& tf,
                    int batch_size, bool zero_fast = false);

struct FitResult {
    std::string best_checkpoint;
    TrainingCurve curve;
    double best_val_accuracy = 0.0;
    int best_epoch = -1;
};

struct FitPaths {
    std::string best_checkpoint;
    std::string last_checkpoint;
};

FitResult fit(sf::SlowFastNet& net, const SegmentDataset& data, const clips::DatasetSplit& split,
              const ScheduleConfig& schedule, const OptimConfig& optim, const DataTransform& tf,
              std::uint64_t seed, const FitPaths& paths);

}  // namespace nearmiss::train

#endif
