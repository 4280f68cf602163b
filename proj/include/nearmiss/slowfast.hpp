#ifndef NEARMISS_SLOWFAST_HPP
#define NEARMISS_SLOWFAST_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "nearmiss/nn.hpp"
#include "nearmiss/tensor.hpp"

namespace nearmiss::sf {

// Architecture symbols of the dual-pathway classifier. alpha is the fast/slow
// frame-rate ratio, beta_inv the slow/fast channel ratio (fast = slow / beta_inv).
struct PathwayConfig {
    int alpha = 4;
    int beta_inv = 8;
    int slow_frames = 2;
    int backbone_depth = 101;  // 18 | 50 | 101
    int base_width = 64;
    std::set<std::string> nonlocal_stages = {"slow/res4"};
    int num_classes = 2;
    double dropout_rate = 0.5;
    int in_channels = 3;
    int input_size = 224;  // nominal square input, used for the FLOP table

    int fast_frames() const { return alpha * slow_frames; }
    void validate() const;  // throws naming the offending field/stage
    bool same_architecture(const PathwayConfig& o, std::string* diff = nullptr) const;
};

struct LayerRow {
    std::string name;
    std::string pathway;  // slow | fast | head
    std::vector<int> out_shape;  // per-sample (C, T, H, W); empty for head fc
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct FlopReport {
    std::int64_t slow_macs = 0;
    std::int64_t fast_macs = 0;  // includes the lateral connections
    std::int64_t head_macs = 0;
    double fast_share() const {
        double total = double(slow_macs + fast_macs + head_macs);
        return total > 0 ? double(fast_macs) / total : 0.0;
    }
};

// Time-strided fusion link: fast features go through a (kernel_t,1,1) conv with
// temporal stride alpha and out_mult*fast_C output channels, then concatenate
// onto the slow channels.
struct LateralCfg {
    int alpha = 4;
    int kernel_t = 5;
    int out_mult = 2;
};

class LateralFuse {
public:
    LateralFuse() = default;
    LateralFuse(nn::ParamStore& store, const std::string& name, int fast_c, LateralCfg cfg);

    Tensor fuse(const Tensor& fast, const Tensor& slow);
    // backward for the fused output; returns (grad_slow, grad_fast)
    std::pair<Tensor, Tensor> backward(const Tensor& g, int slow_c);

    std::int64_t macs(nn::Dims3 fast_in) const { return conv.macs(fast_in); }

    nn::Conv3d conv;
    LateralCfg cfg;
    int fast_c = 0;
};

class SlowFastNet;
using NetPtr = std::unique_ptr<SlowFastNet>;

class SlowFastNet {
public:
    // Deterministic per seed: rebuilding with the same (cfg, seed) gives an
    // identical parameter inventory and identical values.
    static NetPtr build(const PathwayConfig& cfg, std::uint64_t init_seed);

    // slow: (N, C, T_slow, H, W); fast: (N, C, alpha*T_slow, H, W)
    Tensor forward(const Tensor& slow, const Tensor& fast, Rng* dropout_rng = nullptr);
    double backward(const Tensor& dlogits);  // returns 0; fills parameter grads

    void set_train(bool train) { train_mode_ = train; }
    bool is_train() const { return train_mode_; }

    // stage taps: "slow/stem", "slow/res2".."slow/res5", same with "fast/"
    const Tensor& activation(const std::string& key) const;
    const Tensor& activation_grad(const std::string& key) const;
    void request_grad_taps(std::vector<std::string> keys) { grad_taps_ = std::move(keys); }
    std::vector<std::string> stage_names() const;

    std::vector<LayerRow> summary() const;
    FlopReport flops() const;
    std::string summary_text() const;

    const PathwayConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    // per-channel input normalization, computed on the training split
    std::vector<double> norm_mean, norm_std;

    void save_checkpoint(const std::string& path, int epoch,
                         const std::map<std::string, std::string>& extra = {}) const;
    struct Loaded {
        NetPtr net;
        int epoch = 0;
        std::map<std::string, std::string> extra;
    };
    static Loaded load_checkpoint(const std::string& path,
                                  const PathwayConfig* require_cfg = nullptr);

private:
    friend class NetBuilder;
    SlowFastNet() = default;

    struct Stem {
        nn::Conv3d conv;
        nn::BatchNorm3d bn;
        nn::ReLU relu;
        nn::MaxPool3d pool;
        Tensor forward(const Tensor& x, bool train);
        Tensor backward(const Tensor& g);
    };

    struct ResBlock {
        bool bottleneck = false;
        nn::Conv3d conv1, conv2, conv3;
        nn::BatchNorm3d bn1, bn2, bn3;
        nn::ReLU relu1, relu2, relu_out;
        bool has_proj = false;
        nn::Conv3d proj;
        nn::BatchNorm3d proj_bn;
        Tensor forward(const Tensor& x, bool train);
        Tensor backward(const Tensor& g);
    };

    struct Stage {
        std::string name;
        std::vector<ResBlock> blocks;
        Tensor forward(const Tensor& x, bool train);
        Tensor backward(const Tensor& g);
    };

    Tensor head_forward(const Tensor& slow, const Tensor& fast, Rng* rng);

    PathwayConfig cfg_;
    nn::ParamStore store_;
    Stem stem_slow_, stem_fast_;
    std::vector<Stage> slow_stages_, fast_stages_;  // res2..res5
    std::vector<LateralFuse> laterals_;             // pool1, res2, res3, res4
    std::map<std::string, nn::NonLocalBlock> nonlocal_;
    nn::GlobalAvgPool gap_slow_, gap_fast_;
    nn::Dropout dropout_{0.5};
    nn::Linear fc_;
    bool train_mode_ = false;

    std::map<std::string, Tensor> acts_;
    std::map<std::string, Tensor> act_grads_;
    std::vector<std::string> grad_taps_;
    int head_slow_c_ = 0, head_fast_c_ = 0;
};

// stage block counts per depth, e.g. 101 -> {3, 4, 23, 3}
std::vector<int> stage_blocks(int depth);

}  // namespace nearmiss::sf

#endif
