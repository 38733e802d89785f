#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "imagedx/nn/tensor.hpp"

namespace imagedx::nn {

/// Learned weights (trainable) or running statistics (not trainable).
struct Parameter {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::vector<int> dims, float fill, bool is_trainable = true);

    std::size_t numel() const noexcept { return value.size(); }
    void zero_grad() noexcept;
};

using ParamVisitor = std::function<void(const std::string& name, Parameter& p)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Parameter& p)>;

/// 2-D convolution without bias, lowered to GEMM via im2col.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding);

    void init(std::mt19937_64& rng);
    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    int kernel() const noexcept { return k_; }
    int stride() const noexcept { return stride_; }
    int padding() const noexcept { return pad_; }
    int output_extent(int input_extent) const noexcept {
        return (input_extent + 2 * pad_ - k_) / stride_ + 1;
    }

    Tensor forward(const Tensor& x) const;
    /// Accumulates weight.grad and returns d(loss)/d(x).
    Tensor backward(const Tensor& x, const Tensor& dy);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void visit(const std::string& prefix, const ConstParamVisitor& fn) const;

    Parameter weight;

private:
    int in_ = 0;
    int out_ = 0;
    int k_ = 1;
    int stride_ = 1;
    int pad_ = 0;
};

/// Batch normalisation over (N, H, W) per channel.
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

    int channels() const noexcept { return channels_; }

    Tensor forward(const Tensor& x) const;  // running statistics
    /// Normalises with batch statistics and updates the running estimates.
    Tensor forward_train(const Tensor& x);
    /// Recomputes the training-mode output of the last forward_train.
    Tensor renormalize(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void visit(const std::string& prefix, const ConstParamVisitor& fn) const;

    Parameter weight;
    Parameter bias;
    Parameter running_mean;
    Parameter running_var;

private:
    void check(const Tensor& x) const;

    int channels_ = 0;
    float momentum_ = 0.1f;
    float eps_ = 1e-5f;
    std::vector<float> batch_mean_;
    std::vector<float> batch_inv_std_;
};

/// BN followed by ReLU. Caches its input while training.
class BnRelu {
public:
    BnRelu() = default;
    explicit BnRelu(int channels) : bn(channels) {}

    Tensor forward(const Tensor& x) const;
    Tensor forward_train(Tensor x);
    Tensor backward(const Tensor& dy);

    void visit(const std::string& prefix, const ParamVisitor& fn) { bn.visit(prefix, fn); }
    void visit(const std::string& prefix, const ConstParamVisitor& fn) const { bn.visit(prefix, fn); }

    BatchNorm2d bn;

private:
    Tensor input_;
};

/// Composite BN -> ReLU -> Conv. Only the input is cached for backward; the
/// activation is recomputed from the saved batch statistics.
class BnReluConv {
public:
    BnReluConv() = default;
    BnReluConv(int in_channels, int out_channels, int kernel, int stride, int padding);

    void init(std::mt19937_64& rng) { conv.init(rng); }

    Tensor forward(const Tensor& x) const;
    Tensor forward_train(Tensor x);
    Tensor backward(const Tensor& dy);

    void visit(const std::string& prefix, const std::string& norm_name, const std::string& conv_name,
               const ParamVisitor& fn);
    void visit(const std::string& prefix, const std::string& norm_name, const std::string& conv_name,
               const ConstParamVisitor& fn) const;

    BatchNorm2d bn;
    Conv2d conv;

private:
    Tensor input_;
};

class MaxPool2d {
public:
    MaxPool2d(int kernel = 3, int stride = 2, int padding = 1) : k_(kernel), stride_(stride), pad_(padding) {}

    int output_extent(int input_extent) const noexcept {
        return (input_extent + 2 * pad_ - k_) / stride_ + 1;
    }
    Tensor forward(const Tensor& x) const;
    Tensor forward_train(const Tensor& x);
    Tensor backward(const Tensor& dy);

private:
    Tensor pool(const Tensor& x, std::vector<std::uint32_t>* argmax) const;

    int k_;
    int stride_;
    int pad_;
    int in_h_ = 0;
    int in_w_ = 0;
    std::vector<std::uint32_t> argmax_;
};

/// Non-overlapping 2x2 average pooling (transition downsampling).
class AvgPool2d {
public:
    explicit AvgPool2d(int kernel = 2) : k_(kernel) {}

    int output_extent(int input_extent) const noexcept { return input_extent / k_; }
    Tensor forward(const Tensor& x) const;
    Tensor forward_train(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    int k_;
    int in_h_ = 0;
    int in_w_ = 0;
};

/// (N, C, H, W) -> (N, C, 1, 1)
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, int h, int w);

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features);

    void init(std::mt19937_64& rng);
    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }

    /// x: (N, in, 1, 1) -> (N, out, 1, 1)
    Tensor forward(const Tensor& x) const;
    Tensor forward_train(Tensor x);
    Tensor backward(const Tensor& dy);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    void visit(const std::string& prefix, const ConstParamVisitor& fn) const;

    Parameter weight;
    Parameter bias;

private:
    int in_ = 0;
    int out_ = 0;
    Tensor input_;
};

/// Row-wise softmax of (N, K, 1, 1) logits, computed in double precision.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

}  // namespace imagedx::nn
