#include "nearmiss/slowfast.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nearmiss::sf {

using nlohmann::json;
using nn::Dims3;

std::vector<int> stage_blocks(int depth) {
    switch (depth) {
        case 18: return {2, 2, 2, 2};
        case 50: return {3, 4, 6, 3};
        case 101: return {3, 4, 23, 3};
        default: throw std::invalid_argument("backbone_depth must be 18, 50 or 101");
    }
}

static bool is_bottleneck(int depth) { return depth >= 50; }

void PathwayConfig::validate() const {
    if (alpha < 1) throw std::invalid_argument("alpha must be >= 1");
    if (beta_inv < 1) throw std::invalid_argument("beta_inv must be >= 1");
    if (slow_frames < 1) throw std::invalid_argument("slow_frames must be >= 1");
    stage_blocks(backbone_depth);
    if (base_width < 1) throw std::invalid_argument("base_width must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("dropout_rate must be in [0, 1)");
    if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
    if (input_size < 8) throw std::invalid_argument("input_size must be >= 8");
    const char* stage_name[4] = {"res2", "res3", "res4", "res5"};
    if (base_width % beta_inv != 0)
        throw std::invalid_argument("stem width " + std::to_string(base_width) +
                                    " not divisible by beta_inv at stage stem");
    for (int i = 0; i < 4; ++i) {
        int w = base_width << i;
        if (w % beta_inv != 0)
            throw std::invalid_argument("slow width " + std::to_string(w) +
                                        " not divisible by beta_inv at stage " + stage_name[i]);
    }
    for (const auto& key : nonlocal_stages) {
        bool ok = false;
        for (int i = 0; i < 4; ++i)
            if (key == std::string("slow/") + stage_name[i] ||
                key == std::string("fast/") + stage_name[i])
                ok = true;
        if (!ok) throw std::invalid_argument("unknown nonlocal stage: " + key);
    }
}

bool PathwayConfig::same_architecture(const PathwayConfig& o, std::string* diff) const {
    auto fail = [&](const std::string& what) {
        if (diff) *diff += (diff->empty() ? "" : ", ") + what;
        return false;
    };
    bool ok = true;
    if (alpha != o.alpha) ok = fail("alpha");
    if (beta_inv != o.beta_inv) ok = fail("beta_inv");
    if (slow_frames != o.slow_frames) ok = fail("slow_frames");
    if (backbone_depth != o.backbone_depth) ok = fail("backbone_depth");
    if (base_width != o.base_width) ok = fail("base_width");
    if (nonlocal_stages != o.nonlocal_stages) ok = fail("nonlocal_stages");
    if (num_classes != o.num_classes) ok = fail("num_classes");
    if (in_channels != o.in_channels) ok = fail("in_channels");
    return ok;
}

// ---------------------------------------------------------------------------
// LateralFuse
// ---------------------------------------------------------------------------

LateralFuse::LateralFuse(nn::ParamStore& store, const std::string& name, int fast_c_, LateralCfg c)
    : cfg(c), fast_c(fast_c_) {
    conv = nn::Conv3d(store, name, fast_c, cfg.out_mult * fast_c, {cfg.kernel_t, 1, 1},
                      {cfg.alpha, 1, 1}, {cfg.kernel_t / 2, 0, 0}, /*bias=*/true);
}

Tensor LateralFuse::fuse(const Tensor& fast, const Tensor& slow) {
    if (fast.size(2) != cfg.alpha * slow.size(2))
        throw std::invalid_argument("lateral fuse: fast T " + std::to_string(fast.size(2)) +
                                    " != alpha * slow T " +
                                    std::to_string(cfg.alpha * slow.size(2)));
    Tensor lat = conv.forward(fast);
    if (lat.size(2) != slow.size(2))
        throw std::invalid_argument("lateral fuse: strided conv produced T " +
                                    std::to_string(lat.size(2)) + ", expected " +
                                    std::to_string(slow.size(2)));
    return nn::concat_channels(slow, lat);
}

std::pair<Tensor, Tensor> LateralFuse::backward(const Tensor& g, int slow_c) {
    Tensor g_slow, g_lat;
    nn::split_channels(g, slow_c, g_slow, g_lat);
    Tensor g_fast = conv.backward(g_lat);
    return {std::move(g_slow), std::move(g_fast)};
}

// ---------------------------------------------------------------------------
// Net submodules
// ---------------------------------------------------------------------------

namespace {

void check_finite(const Tensor& t, const std::string& layer) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite activation in " + layer);
}

}  // namespace

Tensor SlowFastNet::Stem::forward(const Tensor& x, bool train) {
    return pool.forward(relu.forward(bn.forward(conv.forward(x), train)));
}

Tensor SlowFastNet::Stem::backward(const Tensor& g) {
    return conv.backward(bn.backward(relu.backward(pool.backward(g))));
}

Tensor SlowFastNet::ResBlock::forward(const Tensor& x, bool train) {
    Tensor main;
    if (bottleneck) {
        main = relu1.forward(bn1.forward(conv1.forward(x), train));
        main = relu2.forward(bn2.forward(conv2.forward(main), train));
        main = bn3.forward(conv3.forward(main), train);
    } else {
        main = relu1.forward(bn1.forward(conv1.forward(x), train));
        main = bn2.forward(conv2.forward(main), train);
    }
    Tensor shortcut = has_proj ? proj_bn.forward(proj.forward(x), train) : x;
    check_same_shape(main, shortcut, "resblock");
    for (std::size_t i = 0; i < main.data.size(); ++i) main.data[i] += shortcut.data[i];
    return relu_out.forward(main);
}

Tensor SlowFastNet::ResBlock::backward(const Tensor& g) {
    Tensor gsum = relu_out.backward(g);
    Tensor gx_main;
    if (bottleneck) {
        gx_main = conv3.backward(bn3.backward(gsum));
        gx_main = conv2.backward(bn2.backward(relu2.backward(gx_main)));
        gx_main = conv1.backward(bn1.backward(relu1.backward(gx_main)));
    } else {
        gx_main = conv2.backward(bn2.backward(gsum));
        gx_main = conv1.backward(bn1.backward(relu1.backward(gx_main)));
    }
    if (has_proj) {
        Tensor gx_short = proj.backward(proj_bn.backward(gsum));
        for (std::size_t i = 0; i < gx_main.data.size(); ++i) gx_main.data[i] += gx_short.data[i];
    } else {
        for (std::size_t i = 0; i < gx_main.data.size(); ++i) gx_main.data[i] += gsum.data[i];
    }
    return gx_main;
}

Tensor SlowFastNet::Stage::forward(const Tensor& x, bool train) {
    Tensor out = x;
    for (auto& b : blocks) out = b.forward(out, train);
    return out;
}

Tensor SlowFastNet::Stage::backward(const Tensor& g) {
    Tensor out = g;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) out = it->backward(out);
    return out;
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

class NetBuilder {
public:
    static NetPtr build(const PathwayConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        auto net = NetPtr(new SlowFastNet());
        net->cfg_ = cfg;
        Rng rng(seed);
        auto& store = net->store_;
        const bool bneck = is_bottleneck(cfg.backbone_depth);
        const auto blocks = stage_blocks(cfg.backbone_depth);
        const int expansion = bneck ? 4 : 1;
        const char* stage_name[4] = {"res2", "res3", "res4", "res5"};

        // stems: slow sees few frames and keeps a flat temporal kernel; the
        // fast stem uses a temporal extent of 5 like its fusion convs
        net->stem_slow_.conv = nn::Conv3d(store, "slow/stem/conv", cfg.in_channels,
                                          cfg.base_width, {1, 7, 7}, {1, 2, 2}, {0, 3, 3});
        net->stem_slow_.conv.init_fan_out(rng);
        net->stem_slow_.bn = nn::BatchNorm3d(store, "slow/stem/bn", cfg.base_width);
        net->stem_slow_.pool = nn::MaxPool3d({1, 3, 3}, {1, 2, 2}, {0, 1, 1});

        const int fast_base = cfg.base_width / cfg.beta_inv;
        net->stem_fast_.conv = nn::Conv3d(store, "fast/stem/conv", cfg.in_channels, fast_base,
                                          {5, 7, 7}, {1, 2, 2}, {2, 3, 3});
        net->stem_fast_.conv.init_fan_out(rng);
        net->stem_fast_.bn = nn::BatchNorm3d(store, "fast/stem/bn", fast_base);
        net->stem_fast_.pool = nn::MaxPool3d({1, 3, 3}, {1, 2, 2}, {0, 1, 1});

        int slow_in = 0, fast_in = fast_base;
        int prev_slow_out = cfg.base_width, prev_fast_out = fast_base;
        for (int i = 0; i < 4; ++i) {
            const int inner_slow = cfg.base_width << i;
            const int out_slow = inner_slow * expansion;
            const int inner_fast = inner_slow / cfg.beta_inv;
            const int out_fast = out_slow / cfg.beta_inv;
            const int stride = (i == 0) ? 1 : 2;

            // lateral feeding this slow stage, driven by the previous fast node
            LateralCfg lc{cfg.alpha, 5, 2};
            net->laterals_.emplace_back(store, "lateral/" + std::string(stage_name[i]),
                                        prev_fast_out, lc);
            for (auto& v : net->laterals_.back().conv.w->value.data)
                v = rng.normal(0.0, std::sqrt(2.0 / double(lc.out_mult * prev_fast_out * lc.kernel_t)));
            slow_in = prev_slow_out + lc.out_mult * prev_fast_out;

            net->slow_stages_.push_back(make_stage(store, rng, "slow/" + std::string(stage_name[i]),
                                                   blocks[std::size_t(i)], bneck, slow_in,
                                                   inner_slow, out_slow, stride, /*kt_first=*/1));
            net->fast_stages_.push_back(make_stage(store, rng, "fast/" + std::string(stage_name[i]),
                                                   blocks[std::size_t(i)], bneck, fast_in,
                                                   inner_fast, out_fast, stride, /*kt_first=*/3));
            prev_slow_out = out_slow;
            prev_fast_out = out_fast;
            fast_in = out_fast;
        }

        for (const auto& key : cfg.nonlocal_stages) {
            int si = key.back() - '2';  // res2..res5
            bool on_fast = key.rfind("fast/", 0) == 0;
            int ch = (cfg.base_width << si) * expansion;
            if (on_fast) ch /= cfg.beta_inv;
            nn::NonLocalBlock blk(store, "nonlocal/" + key, ch);
            blk.init(rng);
            net->nonlocal_.emplace(key, std::move(blk));
        }

        net->head_slow_c_ = prev_slow_out;
        net->head_fast_c_ = prev_fast_out;
        net->dropout_ = nn::Dropout(cfg.dropout_rate);
        net->fc_ = nn::Linear(store, "head/fc", prev_slow_out + prev_fast_out, cfg.num_classes);
        net->fc_.init_fan_out(rng);
        return net;
    }

private:
    static SlowFastNet::ResBlock make_block(nn::ParamStore& store, Rng& rng,
                                            const std::string& name, bool bneck, int in_c,
                                            int inner, int out_c, int stride, int kt) {
        SlowFastNet::ResBlock b;
        b.bottleneck = bneck;
        if (bneck) {
            b.conv1 = nn::Conv3d(store, name + "/conv1", in_c, inner, {kt, 1, 1}, {1, 1, 1},
                                 {kt / 2, 0, 0});
            b.bn1 = nn::BatchNorm3d(store, name + "/bn1", inner);
            b.conv2 = nn::Conv3d(store, name + "/conv2", inner, inner, {1, 3, 3},
                                 {1, stride, stride}, {0, 1, 1});
            b.bn2 = nn::BatchNorm3d(store, name + "/bn2", inner);
            b.conv3 = nn::Conv3d(store, name + "/conv3", inner, out_c, {1, 1, 1}, {1, 1, 1},
                                 {0, 0, 0});
            b.bn3 = nn::BatchNorm3d(store, name + "/bn3", out_c, /*zero_gamma=*/true);
            b.conv1.init_fan_out(rng);
            b.conv2.init_fan_out(rng);
            b.conv3.init_fan_out(rng);
        } else {
            b.conv1 = nn::Conv3d(store, name + "/conv1", in_c, inner, {kt, 3, 3},
                                 {1, stride, stride}, {kt / 2, 1, 1});
            b.bn1 = nn::BatchNorm3d(store, name + "/bn1", inner);
            b.conv2 = nn::Conv3d(store, name + "/conv2", inner, out_c, {1, 3, 3}, {1, 1, 1},
                                 {0, 1, 1});
            b.bn2 = nn::BatchNorm3d(store, name + "/bn2", out_c, /*zero_gamma=*/true);
            b.conv1.init_fan_out(rng);
            b.conv2.init_fan_out(rng);
        }
        if (in_c != out_c || stride != 1) {
            b.has_proj = true;
            b.proj = nn::Conv3d(store, name + "/proj", in_c, out_c, {1, 1, 1}, {1, stride, stride},
                                {0, 0, 0});
            b.proj_bn = nn::BatchNorm3d(store, name + "/proj_bn", out_c);
            b.proj.init_fan_out(rng);
        }
        return b;
    }

    static SlowFastNet::Stage make_stage(nn::ParamStore& store, Rng& rng, const std::string& name,
                                         int n_blocks, bool bneck, int in_c, int inner, int out_c,
                                         int stride, int kt_first) {
        SlowFastNet::Stage st;
        st.name = name;
        for (int j = 0; j < n_blocks; ++j) {
            int bi = (j == 0) ? in_c : out_c;
            int bs = (j == 0) ? stride : 1;
            st.blocks.push_back(make_block(store, rng, name + "/b" + std::to_string(j), bneck, bi,
                                           inner, out_c, bs, kt_first));
        }
        return st;
    }
};

NetPtr SlowFastNet::build(const PathwayConfig& cfg, std::uint64_t init_seed) {
    return NetBuilder::build(cfg, init_seed);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

std::vector<std::string> SlowFastNet::stage_names() const {
    std::vector<std::string> out = {"slow/stem", "fast/stem"};
    const char* stage_name[4] = {"res2", "res3", "res4", "res5"};
    for (int i = 0; i < 4; ++i) {
        out.push_back(std::string("slow/") + stage_name[i]);
        out.push_back(std::string("fast/") + stage_name[i]);
    }
    return out;
}

Tensor SlowFastNet::head_forward(const Tensor& slow, const Tensor& fast, Rng* rng) {
    Tensor ps = gap_slow_.forward(slow);
    Tensor pf = gap_fast_.forward(fast);
    const int N = ps.size(0), Cs = ps.size(1), Cf = pf.size(1);
    Tensor h({N, Cs + Cf});
    for (int n = 0; n < N; ++n) {
        std::copy_n(ps.ptr() + std::int64_t(n) * Cs, Cs, h.ptr() + std::int64_t(n) * (Cs + Cf));
        std::copy_n(pf.ptr() + std::int64_t(n) * Cf, Cf,
                    h.ptr() + std::int64_t(n) * (Cs + Cf) + Cs);
    }
    Tensor d = dropout_.forward(h, train_mode_, rng);
    return fc_.forward(d);
}

Tensor SlowFastNet::forward(const Tensor& slow, const Tensor& fast, Rng* dropout_rng) {
    if (slow.rank() != 5 || fast.rank() != 5)
        throw std::invalid_argument("forward: inputs must be (N, C, T, H, W)");
    if (slow.size(2) != cfg_.slow_frames || fast.size(2) != cfg_.fast_frames())
        throw std::invalid_argument(
            "forward: frame counts (" + std::to_string(slow.size(2)) + ", " +
            std::to_string(fast.size(2)) + ") do not match config (" +
            std::to_string(cfg_.slow_frames) + ", " + std::to_string(cfg_.fast_frames()) + ")");
    if (slow.size(1) != cfg_.in_channels || fast.size(1) != cfg_.in_channels)
        throw std::invalid_argument("forward: channel count does not match config");
    if (slow.size(0) != fast.size(0))
        throw std::invalid_argument("forward: pathway batch sizes differ");

    acts_.clear();
    act_grads_.clear();

    Tensor xs = stem_slow_.forward(slow, train_mode_);
    Tensor xf = stem_fast_.forward(fast, train_mode_);
    check_finite(xs, "slow/stem");
    check_finite(xf, "fast/stem");
    acts_["slow/stem"] = xs;
    acts_["fast/stem"] = xf;

    const char* stage_name[4] = {"res2", "res3", "res4", "res5"};
    for (int i = 0; i < 4; ++i) {
        Tensor fused = laterals_[std::size_t(i)].fuse(xf, xs);
        xs = slow_stages_[std::size_t(i)].forward(fused, train_mode_);
        std::string skey = std::string("slow/") + stage_name[i];
        if (auto it = nonlocal_.find(skey); it != nonlocal_.end()) xs = it->second.forward(xs);
        xf = fast_stages_[std::size_t(i)].forward(xf, train_mode_);
        std::string fkey = std::string("fast/") + stage_name[i];
        if (auto it = nonlocal_.find(fkey); it != nonlocal_.end()) xf = it->second.forward(xf);
        check_finite(xs, skey);
        check_finite(xf, fkey);
        acts_[skey] = xs;
        acts_[fkey] = xf;
    }

    Tensor logits = head_forward(xs, xf, dropout_rng);
    check_finite(logits, "head/fc");
    return logits;
}

double SlowFastNet::backward(const Tensor& dlogits) {
    Tensor g_d = fc_.backward(dlogits);
    Tensor g_h = dropout_.backward(g_d);
    const int N = g_h.size(0);
    Tensor gps({N, head_slow_c_}), gpf({N, head_fast_c_});
    for (int n = 0; n < N; ++n) {
        std::copy_n(g_h.ptr() + std::int64_t(n) * (head_slow_c_ + head_fast_c_), head_slow_c_,
                    gps.ptr() + std::int64_t(n) * head_slow_c_);
        std::copy_n(g_h.ptr() + std::int64_t(n) * (head_slow_c_ + head_fast_c_) + head_slow_c_,
                    head_fast_c_, gpf.ptr() + std::int64_t(n) * head_fast_c_);
    }
    Tensor g_xs = gap_slow_.backward(gps);
    Tensor g_xf = gap_fast_.backward(gpf);

    const char* stage_name[4] = {"res2", "res3", "res4", "res5"};
    auto want_tap = [&](const std::string& key) {
        return std::find(grad_taps_.begin(), grad_taps_.end(), key) != grad_taps_.end();
    };
    for (int i = 3; i >= 0; --i) {
        std::string skey = std::string("slow/") + stage_name[i];
        std::string fkey = std::string("fast/") + stage_name[i];
        if (want_tap(skey)) act_grads_[skey] = g_xs;
        if (want_tap(fkey)) act_grads_[fkey] = g_xf;
        if (auto it = nonlocal_.find(fkey); it != nonlocal_.end()) g_xf = it->second.backward(g_xf);
        g_xf = fast_stages_[std::size_t(i)].backward(g_xf);
        if (auto it = nonlocal_.find(skey); it != nonlocal_.end()) g_xs = it->second.backward(g_xs);
        Tensor g_fused = slow_stages_[std::size_t(i)].backward(g_xs);
        int slow_c = g_fused.size(1) - laterals_[std::size_t(i)].conv.out_c;
        auto [g_slow_prev, g_fast_lat] = laterals_[std::size_t(i)].backward(g_fused, slow_c);
        g_xs = std::move(g_slow_prev);
        for (std::size_t k = 0; k < g_xf.data.size(); ++k) g_xf.data[k] += g_fast_lat.data[k];
    }
    if (want_tap("slow/stem")) act_grads_["slow/stem"] = g_xs;
    if (want_tap("fast/stem")) act_grads_["fast/stem"] = g_xf;
    stem_slow_.backward(g_xs);
    stem_fast_.backward(g_xf);
    return 0.0;
}

const Tensor& SlowFastNet::activation(const std::string& key) const {
    auto it = acts_.find(key);
    if (it == acts_.end()) throw std::invalid_argument("no activation recorded for layer " + key);
    return it->second;
}

const Tensor& SlowFastNet::activation_grad(const std::string& key) const {
    auto it = act_grads_.find(key);
    if (it == act_grads_.end())
        throw std::invalid_argument("no gradient tap recorded for layer " + key);
    return it->second;
}

// ---------------------------------------------------------------------------
// Summary / FLOPs
// ---------------------------------------------------------------------------

std::vector<LayerRow> SlowFastNet::summary() const {
    std::vector<LayerRow> rows;
    const char* stage_name[4] = {"res2", "res3", "res4", "res5"};
    const int S = cfg_.input_size;

    auto bn_params = [](const nn::BatchNorm3d& bn) { return std::int64_t(2) * bn.channels; };

    auto stem_row = [&](const Stem& st, const std::string& name, const std::string& path,
                        Dims3 in) {
        LayerRow r;
        r.name = name;
        r.pathway = path;
        Dims3 c = st.conv.out_dims(in);
        r.macs = st.conv.macs(in);
        Dims3 o = st.pool.out_dims(c);
        r.out_shape = {st.conv.out_c, o.t, o.h, o.w};
        r.params = st.conv.param_count() + bn_params(st.bn);
        return r;
    };

    Dims3 slow_d{cfg_.slow_frames, S, S}, fast_d{cfg_.fast_frames(), S, S};
    LayerRow rs = stem_row(stem_slow_, "slow/stem", "slow", slow_d);
    LayerRow rf = stem_row(stem_fast_, "fast/stem", "fast", fast_d);
    rows.push_back(rs);
    rows.push_back(rf);
    slow_d = {rs.out_shape[1], rs.out_shape[2], rs.out_shape[3]};
    fast_d = {rf.out_shape[1], rf.out_shape[2], rf.out_shape[3]};

    auto block_row = [&](const ResBlock& b, const std::string& name, const std::string& path,
                         Dims3 in) {
        LayerRow r;
        r.name = name;
        r.pathway = path;
        Dims3 d = in;
        r.macs += b.conv1.macs(d);
        r.params += b.conv1.param_count() + bn_params(b.bn1);
        d = b.conv1.out_dims(d);
        r.macs += b.conv2.macs(d);
        r.params += b.conv2.param_count() + bn_params(b.bn2);
        d = b.conv2.out_dims(d);
        if (b.bottleneck) {
            r.macs += b.conv3.macs(d);
            r.params += b.conv3.param_count() + bn_params(b.bn3);
            d = b.conv3.out_dims(d);
        }
        if (b.has_proj) {
            r.macs += b.proj.macs(in);
            r.params += b.proj.param_count() + bn_params(b.proj_bn);
        }
        int out_c = b.bottleneck ? b.conv3.out_c : b.conv2.out_c;
        r.out_shape = {out_c, d.t, d.h, d.w};
        return r;
    };

    for (int i = 0; i < 4; ++i) {
        const auto& lat = laterals_[std::size_t(i)];
        LayerRow lr;
        lr.name = "lateral/" + std::string(stage_name[i]);
        lr.pathway = "fast";
        lr.macs = lat.macs(fast_d);
        lr.params = lat.conv.param_count();
        Dims3 lo = lat.conv.out_dims(fast_d);
        lr.out_shape = {lat.conv.out_c, lo.t, lo.h, lo.w};
        rows.push_back(lr);

        Dims3 sd = slow_d, fd = fast_d;
        for (std::size_t j = 0; j < slow_stages_[std::size_t(i)].blocks.size(); ++j) {
            const auto& b = slow_stages_[std::size_t(i)].blocks[j];
            LayerRow r = block_row(b, "slow/" + std::string(stage_name[i]) + "/b" +
                                          std::to_string(j), "slow", sd);
            sd = {r.out_shape[1], r.out_shape[2], r.out_shape[3]};
            rows.push_back(r);
        }
        for (std::size_t j = 0; j < fast_stages_[std::size_t(i)].blocks.size(); ++j) {
            const auto& b = fast_stages_[std::size_t(i)].blocks[j];
            LayerRow r = block_row(b, "fast/" + std::string(stage_name[i]) + "/b" +
                                          std::to_string(j), "fast", fd);
            fd = {r.out_shape[1], r.out_shape[2], r.out_shape[3]};
            rows.push_back(r);
        }
        for (const char* pw : {"slow", "fast"}) {
            std::string key = std::string(pw) + "/" + stage_name[i];
            if (auto it = nonlocal_.find(key); it != nonlocal_.end()) {
                LayerRow r;
                r.name = "nonlocal/" + key;
                r.pathway = pw;
                Dims3 d = (key[0] == 's') ? sd : fd;
                r.macs = it->second.macs(d);
                r.params = it->second.w_theta->value.numel() * 3 + it->second.w_z->value.numel();
                r.out_shape = {it->second.channels, d.t, d.h, d.w};
                rows.push_back(r);
            }
        }
        slow_d = sd;
        fast_d = fd;
    }

    LayerRow hr;
    hr.name = "head/fc";
    hr.pathway = "head";
    hr.params = fc_.w->value.numel() + fc_.b->value.numel();
    hr.macs = fc_.w->value.numel();
    hr.out_shape = {cfg_.num_classes};
    rows.push_back(hr);
    return rows;
}

FlopReport SlowFastNet::flops() const {
    FlopReport rep;
    for (const auto& r : summary()) {
        if (r.pathway == "slow") rep.slow_macs += r.macs;
        else if (r.pathway == "fast") rep.fast_macs += r.macs;
        else rep.head_macs += r.macs;
    }
    return rep;
}

std::string SlowFastNet::summary_text() const {
    std::ostringstream os;
    os << "layer                          pathway  out_shape           params       macs\n";
    for (const auto& r : summary()) {
        std::string shape = "(";
        for (std::size_t i = 0; i < r.out_shape.size(); ++i)
            shape += (i ? "," : "") + std::to_string(r.out_shape[i]);
        shape += ")";
        os << r.name;
        for (std::size_t i = r.name.size(); i < 31; ++i) os << ' ';
        os << r.pathway;
        for (std::size_t i = r.pathway.size(); i < 9; ++i) os << ' ';
        os << shape;
        for (std::size_t i = shape.size(); i < 20; ++i) os << ' ';
        os << r.params << "   " << r.macs << "\n";
    }
    FlopReport rep = flops();
    os << "total macs per sample: " << (rep.slow_macs + rep.fast_macs + rep.head_macs)
       << " (slow " << rep.slow_macs << ", fast+lateral " << rep.fast_macs << ", head "
       << rep.head_macs << ")\n";
    os << "fast pathway share: " << rep.fast_share() * 100.0 << "%\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const PathwayConfig& c) {
    json j;
    j["alpha"] = c.alpha;
    j["beta_inv"] = c.beta_inv;
    j["slow_frames"] = c.slow_frames;
    j["backbone_depth"] = c.backbone_depth;
    j["base_width"] = c.base_width;
    j["nonlocal_stages"] = std::vector<std::string>(c.nonlocal_stages.begin(),
                                                    c.nonlocal_stages.end());
    j["num_classes"] = c.num_classes;
    j["dropout_rate"] = c.dropout_rate;
    j["in_channels"] = c.in_channels;
    j["input_size"] = c.input_size;
    return j;
}

PathwayConfig config_from_json(const json& j) {
    PathwayConfig c;
    c.alpha = j.at("alpha").get<int>();
    c.beta_inv = j.at("beta_inv").get<int>();
    c.slow_frames = j.at("slow_frames").get<int>();
    c.backbone_depth = j.at("backbone_depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.nonlocal_stages.clear();
    for (const auto& s : j.at("nonlocal_stages")) c.nonlocal_stages.insert(s.get<std::string>());
    c.num_classes = j.at("num_classes").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.in_channels = j.at("in_channels").get<int>();
    c.input_size = j.at("input_size").get<int>();
    return c;
}

constexpr char kMagic[4] = {'N', 'M', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void SlowFastNet::save_checkpoint(const std::string& path, int epoch,
                                  const std::map<std::string, std::string>& extra) const {
    json header;
    header["format_version"] = kVersion;
    header["config"] = config_to_json(cfg_);
    header["epoch"] = epoch;
    header["norm_mean"] = norm_mean;
    header["norm_std"] = norm_std;
    header["extra"] = extra;
    json plist = json::array(), blist = json::array();
    for (const auto& p : store_.params())
        plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    for (const auto& p : store_.buffers())
        blist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    header["params"] = plist;
    header["buffers"] = blist;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), std::streamsize(hs.size()));
    auto dump = [&](const nn::Param& p) {
        out.write(reinterpret_cast<const char*>(p.value.ptr()),
                  std::streamsize(p.value.numel() * 8));
    };
    for (const auto& p : store_.params()) dump(*p);
    for (const auto& p : store_.buffers()) dump(*p);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

SlowFastNet::Loaded SlowFastNet::load_checkpoint(const std::string& path,
                                                 const PathwayConfig* require_cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    std::uint32_t ver = 0;
    std::uint64_t hlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
    if (ver != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    json header = json::parse(hs);
    PathwayConfig cfg = config_from_json(header.at("config"));
    if (require_cfg) {
        std::string diff;
        if (!cfg.same_architecture(*require_cfg, &diff))
            throw std::runtime_error("checkpoint: config mismatch on fields: " + diff);
    }
    Loaded out;
    out.net = build(cfg, /*init_seed=*/0);
    out.epoch = header.at("epoch").get<int>();
    out.net->norm_mean = header.at("norm_mean").get<std::vector<double>>();
    out.net->norm_std = header.at("norm_std").get<std::vector<double>>();
    if (header.contains("extra"))
        out.extra = header.at("extra").get<std::map<std::string, std::string>>();

    auto load_list = [&](const json& listed, std::vector<std::unique_ptr<nn::Param>>& actual,
                         const char* what) {
        if (listed.size() != actual.size())
            throw std::runtime_error(std::string("checkpoint: ") + what + " count mismatch");
        for (std::size_t i = 0; i < actual.size(); ++i) {
            const auto& meta = listed[i];
            nn::Param& p = *actual[i];
            if (meta.at("name").get<std::string>() != p.name)
                throw std::runtime_error("checkpoint: parameter order mismatch at " + p.name);
            if (meta.at("shape").get<std::vector<int>>() != p.value.shape)
                throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
            in.read(reinterpret_cast<char*>(p.value.ptr()),
                    std::streamsize(p.value.numel() * 8));
        }
    };
    load_list(header.at("params"), out.net->params().params(), "parameter");
    load_list(header.at("buffers"), out.net->params().buffers(), "buffer");
    if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
    return out;
}

}  // namespace nearmiss::sf
