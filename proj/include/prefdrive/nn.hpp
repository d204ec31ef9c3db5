#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/common.hpp"

namespace prefdrive::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    std::size_t size() const { return data.size(); }
};

struct ConvSpec {
    int filters = 0;
    int kernel = 0;
    int stride = 0;

    bool operator==(const ConvSpec&) const = default;
};

// Fixed architecture: three valid convolutions with rectifiers, one rectified
// dense layer, and a linear head with one output per action.
struct NetConfig {
    int in_channels = 3;
    int in_h = 64;
    int in_w = 64;
    std::array<ConvSpec, 3> conv{{{32, 8, 4}, {64, 4, 2}, {64, 3, 1}}};
    int dense_units = 512;
    int outputs = 3;

    static NetConfig paper(); // 64x64 input, 32/64/64 filters, dense 512
    static NetConfig desk();  // 32x32 input, 16/32/32 filters, dense 256

    struct Shapes {
        std::array<int, 4> h, w; // index 0 = input, 1..3 = after each conv
        int flatten = 0;
    };
    Shapes shapes() const; // throws ConfigError on an inconsistent chain

    bool operator==(const NetConfig&) const = default;
};

inline constexpr int kNumParamTensors = 10;
extern const std::array<const char*, kNumParamTensors> kParamNames;

struct QNetwork {
    NetConfig cfg;
    std::vector<Tensor> params; // conv1_w, conv1_b, ..., dense_w, dense_b, head_w, head_b
};

QNetwork make_network(const NetConfig& cfg); // all parameters zero
// He init for rectified layers (variance 2/fan-in), 1/fan-in for the linear
// head, zero biases; deterministic in the seed.
QNetwork init_network(const NetConfig& cfg, std::uint64_t seed);

struct ForwardCache {
    std::vector<float> input;
    std::array<std::vector<float>, 3> conv_pre, conv_post;
    std::vector<float> dense_pre, dense_post;
    std::vector<float> q;
};

std::vector<float> forward(const QNetwork& net, const std::vector<float>& obs);
ForwardCache forward_full(const QNetwork& net, const std::vector<float>& obs);

// Reverse-mode gradients for every parameter tensor, given dLoss/dq.
std::vector<Tensor> backward(const QNetwork& net, const ForwardCache& cache,
                             const std::vector<float>& grad_q);

std::vector<Tensor> zero_gradients(const NetConfig& cfg);
void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& grads);
void scale_gradients(std::vector<Tensor>& grads, float factor);

enum class UpdateRule { plain, adam };

struct OptimizerState {
    UpdateRule rule = UpdateRule::adam;
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Tensor> m, v; // adam moments, sized on first use
};

// Gradient-descent step with the configured rule (loss-gradient convention:
// parameters move against the gradient). Throws on non-finite gradients,
// naming the offending tensor.
void apply_update(QNetwork& net, const std::vector<Tensor>& grads, OptimizerState& opt);

std::string summary(const QNetwork& net);
// Binary checkpoint (magic, version, dimension table, little-endian float32
// parameters) plus a text summary at path + ".txt".
void save(const QNetwork& net, const std::string& path);
QNetwork load(const std::string& path);

} // namespace prefdrive::nn
