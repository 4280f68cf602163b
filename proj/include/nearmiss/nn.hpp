#ifndef NEARMISS_NN_HPP
#define NEARMISS_NN_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nearmiss/rng.hpp"
#include "nearmiss/tensor.hpp"

// Layer zoo for the dual-pathway video classifier. All activations are
// (N, C, T, H, W) row-major doubles. Every layer caches what its backward
// pass needs; backward returns the input gradient and accumulates parameter
// gradients into the registry.
namespace nearmiss::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

// Owns trainable parameters and non-trainable buffers (BN running stats).
class ParamStore {
public:
    Param* add(const std::string& name, std::vector<int> shape);
    Param* add_buffer(const std::string& name, std::vector<int> shape);

    std::vector<std::unique_ptr<Param>>& params() { return params_; }
    const std::vector<std::unique_ptr<Param>>& params() const { return params_; }
    std::vector<std::unique_ptr<Param>>& buffers() { return buffers_; }
    const std::vector<std::unique_ptr<Param>>& buffers() const { return buffers_; }

    Param* find(const std::string& name) const;
    std::int64_t param_count() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::vector<std::unique_ptr<Param>> buffers_;
};

struct Dims3 {
    int t = 0, h = 0, w = 0;
};

class Conv3d {
public:
    Conv3d() = default;
    Conv3d(ParamStore& store, const std::string& name, int in_c, int out_c, Dims3 kernel,
           Dims3 stride, Dims3 pad, bool bias = false);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);

    Dims3 out_dims(Dims3 in) const;
    std::int64_t macs(Dims3 in) const;  // per sample
    std::int64_t param_count() const;

    void init_fan_out(Rng& rng);
    void init_zero();

    Param* w = nullptr;
    Param* b = nullptr;
    int in_c = 0, out_c = 0;
    Dims3 k, s, p;

private:
    Tensor in_cache_;
};

class BatchNorm3d {
public:
    BatchNorm3d() = default;
    BatchNorm3d(ParamStore& store, const std::string& name, int channels, bool zero_gamma = false);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& gy);

    Param* gamma = nullptr;
    Param* beta = nullptr;
    Param* running_mean = nullptr;
    Param* running_var = nullptr;
    int channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;

private:
    Tensor xhat_cache_;
    std::vector<double> invstd_cache_;
    bool train_cache_ = false;
};

class ReLU {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;

private:
    std::vector<std::uint8_t> mask_;
};

class MaxPool3d {
public:
    MaxPool3d() = default;
    MaxPool3d(Dims3 kernel, Dims3 stride, Dims3 pad) : k(kernel), s(stride), p(pad) {}

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;
    Dims3 out_dims(Dims3 in) const;

    Dims3 k, s, p;

private:
    std::vector<int> in_shape_;
    std::vector<std::int64_t> argmax_;
};

// (N, C, T, H, W) -> (N, C), mean over T*H*W.
class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy) const;

private:
    std::vector<int> in_shape_;
};

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in_f, int out_f);

    Tensor forward(const Tensor& x);  // (N, in_f) -> (N, out_f)
    Tensor backward(const Tensor& gy);
    void init_fan_out(Rng& rng);

    Param* w = nullptr;  // (out_f, in_f)
    Param* b = nullptr;  // (out_f)
    int in_f = 0, out_f = 0;

private:
    Tensor in_cache_;
};

class Dropout {
public:
    explicit Dropout(double rate = 0.5) : rate(rate) {}

    Tensor forward(const Tensor& x, bool train, Rng* rng);
    Tensor backward(const Tensor& gy) const;

    double rate;

private:
    std::vector<double> mask_;
    bool identity_ = true;
};

// Embedded-Gaussian self-attention over all T*H*W positions with a residual
// connection. Final projection starts at zero so the block is the identity
// at initialization.
class NonLocalBlock {
public:
    NonLocalBlock() = default;
    NonLocalBlock(ParamStore& store, const std::string& name, int channels);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);
    std::int64_t macs(Dims3 in) const;
    void init(Rng& rng);

    Param* w_theta = nullptr;  // (Ci, C)
    Param* w_phi = nullptr;
    Param* w_g = nullptr;
    Param* w_z = nullptr;  // (C, Ci)
    int channels = 0, inner = 0;

private:
    Tensor in_cache_;
    // per-sample caches, flattened
    Tensor theta_, phi_, g_, attn_, y_;
};

// loss = mean_n( logsumexp(z_n) - z_n[label_n] ); grad is w.r.t. logits.
struct CrossEntropyOut {
    double loss = 0.0;
    Tensor grad;    // (N, K)
    Tensor probs;   // (N, K)
};
CrossEntropyOut softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// channel concat/split on (N, C, T, H, W)
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int c_a, Tensor& ga, Tensor& gb);

void set_compute_threads(int n);
int compute_threads();

}  // namespace nearmiss::nn

#endif
