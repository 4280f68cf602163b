#include "nearmiss/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace nearmiss::xai {

HeatmapStack grad_cam(sf::SlowFastNet& net, const Tensor& slow, const Tensor& fast,
                      int target_class, const std::string& layer) {
    if (net.is_train()) throw std::invalid_argument("grad_cam: model must be in eval mode");
    auto names = net.stage_names();
    if (std::find(names.begin(), names.end(), layer) == names.end())
        throw std::invalid_argument("grad_cam: layer not found: " + layer);
    if (slow.size(0) != 1) throw std::invalid_argument("grad_cam: expects a single-sample batch");

    net.request_grad_taps({layer});
    Tensor logits = net.forward(slow, fast);
    const int K = logits.size(1);
    if (target_class < 0 || target_class >= K)
        throw std::invalid_argument("grad_cam: target class out of range");
    Tensor dlogits({1, K});
    dlogits[target_class] = 1.0;  // raw class score, not the softmax output
    net.params().zero_grad();
    net.backward(dlogits);
    net.request_grad_taps({});

    const Tensor& act = net.activation(layer);
    const Tensor& grad = net.activation_grad(layer);
    const int C = act.size(1), T = act.size(2), H = act.size(3), W = act.size(4);
    const std::int64_t S = std::int64_t(T) * H * W;

    std::vector<double> weights(std::size_t(C), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = grad.ptr() + std::int64_t(c) * S;
        double sum = 0.0;
        for (std::int64_t i = 0; i < S; ++i) sum += g[i];
        weights[std::size_t(c)] = sum / double(S);
    }

    // rectified weighted activation sum per feature-time index
    std::vector<Tensor> raw;
    double peak = 0.0;
    for (int t = 0; t < T; ++t) {
        Tensor m({H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = 0.0;
                for (int c = 0; c < C; ++c)
                    v += weights[std::size_t(c)] *
                         act[(std::int64_t(c) * T + t) * H * W + std::int64_t(y) * W + x];
                m[std::int64_t(y) * W + x] = std::max(0.0, v);
            }
        peak = std::max(peak, *std::max_element(m.data.begin(), m.data.end()));
        raw.push_back(std::move(m));
    }

    HeatmapStack stack;
    stack.pathway = layer.rfind("fast/", 0) == 0 ? "fast" : "slow";
    stack.source_layer = layer;
    stack.target_class = target_class;
    const Tensor& input = stack.pathway == "fast" ? fast : slow;
    const int in_t = input.size(2), in_h = input.size(3), in_w = input.size(4);
    if (peak <= 0.0) {
        stack.all_zero = true;
        for (int t = 0; t < in_t; ++t) stack.maps.emplace_back(std::vector<int>{in_h, in_w});
        return stack;
    }
    std::vector<Tensor> upsampled;
    for (int t = 0; t < T; ++t) {
        for (auto& v : raw[std::size_t(t)].data) v /= peak;
        upsampled.push_back(bilinear_resize_map(raw[std::size_t(t)], in_h, in_w));
    }
    for (int t = 0; t < in_t; ++t) {
        int src = std::min(T - 1, t * T / in_t);  // nearest feature-time index
        stack.maps.push_back(upsampled[std::size_t(src)]);
    }
    return stack;
}

SaliencyMap saliency_from_grid(Tensor map, const std::string& source) {
    if (map.rank() != 2) throw std::invalid_argument("saliency: expected a 2-D grid");
    double sum = 0.0;
    for (double v : map.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("saliency " + source + ": non-finite cell");
        if (v < 0) throw std::invalid_argument("saliency " + source + ": negative cell");
        sum += v;
    }
    if (sum <= 0) throw std::invalid_argument("saliency " + source + ": map sums to zero");
    for (auto& v : map.data) v /= sum;
    SaliencyMap s;
    s.map = std::move(map);
    s.source = source;
    return s;
}

SaliencyMap load_saliency(const std::string& path) {
    Image img;
    bool is_pnm = false;
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw std::runtime_error("saliency: cannot open " + path);
        char c0 = 0, c1 = 0;
        probe.get(c0).get(c1);
        is_pnm = c0 == 'P' && (c1 == '5' || c1 == '6');
    }
    try {
        img = is_pnm ? read_pnm(path) : read_text_grid(path);
    } catch (const std::exception& e) {
        throw std::runtime_error("saliency: cannot decode " + path +
                                 " (expected PGM/PPM or numeric grid): " + e.what());
    }
    Tensor map({img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double v = 0.0;
            for (int c = 0; c < img.c; ++c) v += img.at(y, x, c);
            map[std::int64_t(y) * img.w + x] = v / double(img.c);
        }
    return saliency_from_grid(std::move(map), path);
}

namespace {

std::vector<std::size_t> top_cells(const Tensor& map, double fraction) {
    const std::size_t n = map.data.size();
    std::size_t k = std::max<std::size_t>(1, std::size_t(std::floor(fraction * double(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (map.data[a] != map.data[b]) return map.data[a] > map.data[b];
        return a < b;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace

OverlapReport compare_maps(const Tensor& heat_frame, const SaliencyMap& saliency,
                           double top_fraction) {
    if (heat_frame.rank() != 2) throw std::invalid_argument("compare_maps: heatmap must be 2-D");
    if (top_fraction <= 0 || top_fraction > 1)
        throw std::invalid_argument("compare_maps: threshold must lie in (0, 1]");
    const int h = heat_frame.size(0), w = heat_frame.size(1);
    Tensor sal = (saliency.map.size(0) == h && saliency.map.size(1) == w)
                     ? saliency.map
                     : bilinear_resize_map(saliency.map, h, w);

    OverlapReport rep;
    rep.threshold = top_fraction;
    const std::size_t n = heat_frame.data.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += heat_frame.data[i];
        mb += sal.data[i];
    }
    ma /= double(n);
    mb /= double(n);
    double va = 0, vb = 0, cov = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double da = heat_frame.data[i] - ma, db = sal.data[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    if (va <= 0 || vb <= 0) {
        rep.cc_undefined = true;
        rep.pearson_cc = 0.0;
    } else {
        rep.pearson_cc = cov / std::sqrt(va * vb);
    }

    auto a_cells = top_cells(heat_frame, top_fraction);
    auto b_cells = top_cells(sal, top_fraction);
    std::vector<std::size_t> inter, uni;
    std::set_intersection(a_cells.begin(), a_cells.end(), b_cells.begin(), b_cells.end(),
                          std::back_inserter(inter));
    std::set_union(a_cells.begin(), a_cells.end(), b_cells.begin(), b_cells.end(),
                   std::back_inserter(uni));
    rep.iou = uni.empty() ? 0.0 : double(inter.size()) / double(uni.size());
    return rep;
}

namespace {

// classic jet ramp
void jet_color(double v, double& r, double& g, double& b) {
    v = std::clamp(v, 0.0, 1.0);
    r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
}

}  // namespace

Image render_overlay(const Image& frame, const Tensor& heatmap, double opacity) {
    if (opacity < 0 || opacity > 1)
        throw std::invalid_argument("overlay: opacity must lie in [0, 1]");
    if (heatmap.rank() != 2 || heatmap.size(0) <= 0 || heatmap.size(1) <= 0)
        throw std::invalid_argument("overlay: heatmap must be a non-empty 2-D map");
    Tensor hm = (heatmap.size(0) == frame.h && heatmap.size(1) == frame.w)
                    ? heatmap
                    : bilinear_resize_map(heatmap, frame.h, frame.w);
    if (hm.size(0) != frame.h || hm.size(1) != frame.w)
        throw std::invalid_argument("overlay: heatmap/frame dimension mismatch after resampling");
    Image out(frame.h, frame.w, 3);
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x) {
            double r, g, b;
            jet_color(hm[std::int64_t(y) * frame.w + x], r, g, b);
            double fr = frame.at(y, x, 0);
            double fg = frame.c >= 3 ? frame.at(y, x, 1) : fr;
            double fb = frame.c >= 3 ? frame.at(y, x, 2) : fr;
            out.at(y, x, 0) = (1 - opacity) * fr + opacity * r;
            out.at(y, x, 1) = (1 - opacity) * fg + opacity * g;
            out.at(y, x, 2) = (1 - opacity) * fb + opacity * b;
        }
    return out;
}

ArgmaxLoc argmax_location(const HeatmapStack& stack) {
    if (stack.maps.empty()) throw std::invalid_argument("argmax: empty heatmap stack");
    ArgmaxLoc loc;
    double best = -1.0;
    for (std::size_t t = 0; t < stack.maps.size(); ++t) {
        const Tensor& m = stack.maps[t];
        for (int y = 0; y < m.size(0); ++y)
            for (int x = 0; x < m.size(1); ++x) {
                double v = m[std::int64_t(y) * m.size(1) + x];
                if (v > best) {
                    best = v;
                    loc = {int(t), y, x};
                }
            }
    }
    return loc;
}

double spatial_entropy(const Tensor& map) {
    double sum = 0.0;
    for (double v : map.data) sum += std::max(0.0, v);
    if (sum <= 0) return std::log(double(map.data.size()));  // uniform limit
    double ent = 0.0;
    for (double v : map.data) {
        double p = std::max(0.0, v) / sum;
        if (p > 0) ent -= p * std::log(p);
    }
    return ent;
}

void write_heatmap_grid(const std::string& path, const Tensor& map) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("heatmap: cannot write " + path);
    for (int y = 0; y < map.size(0); ++y) {
        for (int x = 0; x < map.size(1); ++x) {
            if (x) out << ' ';
            out << map[std::int64_t(y) * map.size(1) + x];
        }
        out << '\n';
    }
}

}  // namespace nearmiss::xai
