#ifndef NEARMISS_EXPLAIN_HPP
#define NEARMISS_EXPLAIN_HPP

#include <string>
#include <vector>

#include "nearmiss/clipstore.hpp"
#include "nearmiss/image.hpp"
#include "nearmiss/slowfast.hpp"
#include "nearmiss/tensor.hpp"

namespace nearmiss::xai {

struct HeatmapStack {
    std::string pathway;            // "slow" | "fast"
    std::vector<Tensor> maps;       // one (H, W) map per input frame, values in [0, 1]
    std::string source_layer;
    int target_class = 1;
    bool all_zero = false;          // raw weighted sum was all zero; maps left at zero
};

// Gradient-weighted class activation mapping at the named stage. Channel
// weights are the spatio-temporal mean of d(score)/d(activation); the weighted
// activation sum is rectified, upsampled bilinearly in space and by nearest
// neighbour in time, then normalized so the stack maximum is 1.
HeatmapStack grad_cam(sf::SlowFastNet& net, const Tensor& slow, const Tensor& fast,
                      int target_class, const std::string& layer);

struct SaliencyMap {
    Tensor map;  // (H, W), non-negative, sums to 1
    std::string source;
};

// grayscale 8/16-bit PGM/PPM or whitespace-separated numeric grid
SaliencyMap load_saliency(const std::string& path);
SaliencyMap saliency_from_grid(Tensor map, const std::string& source);

struct OverlapReport {
    double pearson_cc = 0.0;
    bool cc_undefined = false;
    double iou = 0.0;
    double threshold = 0.2;  // top fraction of cells forming each mask
    std::string pathway;
};

OverlapReport compare_maps(const Tensor& heat_frame, const SaliencyMap& saliency,
                           double top_fraction = 0.2);

// heatmap through a fixed jet colormap, alpha-blended onto the frame
Image render_overlay(const Image& frame, const Tensor& heatmap, double opacity);

struct ArgmaxLoc {
    int frame_pos = 0;  // position within the stack
    int y = 0, x = 0;
};
ArgmaxLoc argmax_location(const HeatmapStack& stack);

// Shannon entropy of the map normalized to a distribution (nats).
double spatial_entropy(const Tensor& map);

void write_heatmap_grid(const std::string& path, const Tensor& map);

}  // namespace nearmiss::xai

#endif
