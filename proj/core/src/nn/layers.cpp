#include "imagedx/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace imagedx::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void im2col(const float* x, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            float* col) {
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < channels; ++c) {
        const float* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    float* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, ow, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            float* x) {
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < channels; ++c) {
        float* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = row + static_cast<std::size_t>(oy) * ow;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void relu_inplace(Tensor& t) noexcept {
    for (auto& v : t.values()) v = v > 0.0f ? v : 0.0f;
}

/// dy *= (activation > 0)
void relu_mask(Tensor& dy, const Tensor& activation) noexcept {
    auto g = dy.values();
    auto a = activation.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(a[i] > 0.0f)) g[i] = 0.0f;
    }
}

void check_channels(const Tensor& x, int expected, const char* what) {
    if (x.c() != expected) {
        throw ShapeMismatch(fmt::format("{} expects {} input channels, got {}", what, expected, x.shape_string()));
    }
}

}  // namespace

Parameter::Parameter(std::vector<int> dims, float fill, bool is_trainable)
    : shape(std::move(dims)), trainable(is_trainable) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    value.assign(n, fill);
    if (trainable) grad.assign(n, 0.0f);
}

void Parameter::zero_grad() noexcept { std::fill(grad.begin(), grad.end(), 0.0f); }

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding)
    : weight({out_channels, in_channels, kernel, kernel}, 0.0f),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
        throw ConfigError("invalid convolution geometry");
    }
}

void Conv2d::init(std::mt19937_64& rng) {
    // He initialisation, fan-in mode.
    const double fan_in = static_cast<double>(in_) * k_ * k_;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : weight.value) v = static_cast<float>(dist(rng));
}

Tensor Conv2d::forward(const Tensor& x) const {
    check_channels(x, in_, "conv");
    const int oh = output_extent(x.h());
    const int ow = output_extent(x.w());
    if (oh <= 0 || ow <= 0) {
        throw ShapeMismatch(fmt::format("conv {}x{} stride {} collapses input {}", k_, k_, stride_, x.shape_string()));
    }
    Tensor y(x.n(), out_, oh, ow);
    const int rows = in_ * k_ * k_;
    const int cols = oh * ow;
    ConstMatMap w(weight.value.data(), out_, rows);
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < x.n(); ++n) {
        const float* src = x.sample(n);
        if (!pointwise) {
            im2col(src, in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
            src = col.data();
        }
        MatMap out(y.sample(n), out_, cols);
        out.noalias() = w * ConstMatMap(src, rows, cols);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
    const int oh = output_extent(x.h());
    const int ow = output_extent(x.w());
    if (dy.n() != x.n() || dy.c() != out_ || dy.h() != oh || dy.w() != ow) {
        throw ShapeMismatch("conv gradient shape " + dy.shape_string() + " does not match forward output");
    }
    const int rows = in_ * k_ * k_;
    const int cols = oh * ow;
    ConstMatMap w(weight.value.data(), out_, rows);
    MatMap dw(weight.grad.data(), out_, rows);
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
    std::vector<float> dcol(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < x.n(); ++n) {
        ConstMatMap g(dy.sample(n), out_, cols);
        if (pointwise) {
            dw.noalias() += g * ConstMatMap(x.sample(n), rows, cols).transpose();
            MatMap(dx.sample(n), rows, cols).noalias() = w.transpose() * g;
        } else {
            im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
            dw.noalias() += g * ConstMatMap(col.data(), rows, cols).transpose();
            MatMap(dcol.data(), rows, cols).noalias() = w.transpose() * g;
            col2im(dcol.data(), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, dx.sample(n));
        }
    }
    return dx;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) { fn(prefix + ".weight", weight); }
void Conv2d::visit(const std::string& prefix, const ConstParamVisitor& fn) const { fn(prefix + ".weight", weight); }

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : weight({channels}, 1.0f),
      bias({channels}, 0.0f),
      running_mean({channels}, 0.0f, false),
      running_var({channels}, 1.0f, false),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

void BatchNorm2d::check(const Tensor& x) const { check_channels(x, channels_, "batch norm"); }

Tensor BatchNorm2d::forward(const Tensor& x) const {
    check(x);
    Tensor y(x.n(), x.c(), x.h(), x.w());
    for (int c = 0; c < channels_; ++c) {
        const float inv_std = 1.0f / std::sqrt(running_var.value[c] + eps_);
        const float scale = weight.value[c] * inv_std;
        const float shift = bias.value[c] - running_mean.value[c] * scale;
        for (int n = 0; n < x.n(); ++n) {
            const float* src = x.channel(n, c);
            float* dst = y.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) dst[i] = src[i] * scale + shift;
        }
    }
    return y;
}

Tensor BatchNorm2d::forward_train(const Tensor& x) {
    check(x);
    const double count = static_cast<double>(x.n()) * static_cast<double>(x.plane());
    batch_mean_.assign(channels_, 0.0f);
    batch_inv_std_.assign(channels_, 0.0f);
    for (int c = 0; c < channels_; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n(); ++n) {
            const float* src = x.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) sum += src[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < x.n(); ++n) {
            const float* src = x.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) {
                const double d = src[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / count;
        batch_mean_[c] = static_cast<float>(mean);
        batch_inv_std_[c] = static_cast<float>(1.0 / std::sqrt(var + eps_));
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        running_mean.value[c] = static_cast<float>((1.0 - momentum_) * running_mean.value[c] + momentum_ * mean);
        running_var.value[c] = static_cast<float>((1.0 - momentum_) * running_var.value[c] + momentum_ * unbiased);
    }
    return renormalize(x);
}

Tensor BatchNorm2d::renormalize(const Tensor& x) const {
    check(x);
    Tensor y(x.n(), x.c(), x.h(), x.w());
    for (int c = 0; c < channels_; ++c) {
        const float scale = weight.value[c] * batch_inv_std_[c];
        const float shift = bias.value[c] - batch_mean_[c] * scale;
        for (int n = 0; n < x.n(); ++n) {
            const float* src = x.channel(n, c);
            float* dst = y.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) dst[i] = src[i] * scale + shift;
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& x, const Tensor& dy) {
    check(x);
    if (!dy.same_shape(x)) {
        throw ShapeMismatch("batch norm gradient shape mismatch");
    }
    const double count = static_cast<double>(x.n()) * static_cast<double>(x.plane());
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    for (int c = 0; c < channels_; ++c) {
        const double mean = batch_mean_[c];
        const double inv_std = batch_inv_std_[c];
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int n = 0; n < x.n(); ++n) {
            const float* xs = x.channel(n, c);
            const float* gs = dy.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) {
                sum_dy += gs[i];
                sum_dy_xhat += gs[i] * (xs[i] - mean) * inv_std;
            }
        }
        weight.grad[c] += static_cast<float>(sum_dy_xhat);
        bias.grad[c] += static_cast<float>(sum_dy);
        const double k = weight.value[c] * inv_std / count;
        for (int n = 0; n < x.n(); ++n) {
            const float* xs = x.channel(n, c);
            const float* gs = dy.channel(n, c);
            float* out = dx.channel(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) {
                const double xhat = (xs[i] - mean) * inv_std;
                out[i] = static_cast<float>(k * (count * gs[i] - sum_dy - xhat * sum_dy_xhat));
            }
        }
    }
    return dx;
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
}

void BatchNorm2d::visit(const std::string& prefix, const ConstParamVisitor& fn) const {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
}

// ---------------------------------------------------------------- BnRelu

Tensor BnRelu::forward(const Tensor& x) const {
    auto y = bn.forward(x);
    relu_inplace(y);
    return y;
}

Tensor BnRelu::forward_train(Tensor x) {
    input_ = std::move(x);
    auto y = bn.forward_train(input_);
    relu_inplace(y);
    return y;
}

Tensor BnRelu::backward(const Tensor& dy) {
    auto z = bn.renormalize(input_);
    Tensor g = dy;
    relu_mask(g, z);
    auto dx = bn.backward(input_, g);
    input_ = Tensor{};
    return dx;
}

// ---------------------------------------------------------------- BnReluConv

BnReluConv::BnReluConv(int in_channels, int out_channels, int kernel, int stride, int padding)
    : bn(in_channels), conv(in_channels, out_channels, kernel, stride, padding) {}

Tensor BnReluConv::forward(const Tensor& x) const {
    auto a = bn.forward(x);
    relu_inplace(a);
    return conv.forward(a);
}

Tensor BnReluConv::forward_train(Tensor x) {
    input_ = std::move(x);
    auto a = bn.forward_train(input_);
    relu_inplace(a);
    return conv.forward(a);
}

Tensor BnReluConv::backward(const Tensor& dy) {
    auto a = bn.renormalize(input_);
    relu_inplace(a);
    auto da = conv.backward(a, dy);
    relu_mask(da, a);
    auto dx = bn.backward(input_, da);
    input_ = Tensor{};
    return dx;
}

void BnReluConv::visit(const std::string& prefix, const std::string& norm_name, const std::string& conv_name,
                       const ParamVisitor& fn) {
    bn.visit(prefix + "." + norm_name, fn);
    conv.visit(prefix + "." + conv_name, fn);
}

void BnReluConv::visit(const std::string& prefix, const std::string& norm_name, const std::string& conv_name,
                       const ConstParamVisitor& fn) const {
    bn.visit(prefix + "." + norm_name, fn);
    conv.visit(prefix + "." + conv_name, fn);
}

// ---------------------------------------------------------------- pooling

Tensor MaxPool2d::pool(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
    const int oh = output_extent(x.h());
    const int ow = output_extent(x.w());
    if (oh <= 0 || ow <= 0) {
        throw ShapeMismatch("max pool collapses input " + x.shape_string());
    }
    Tensor y(x.n(), x.c(), oh, ow);
    if (argmax) argmax->assign(y.size(), 0);
    std::size_t out_index = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.channel(n, c);
            const std::size_t base = static_cast<std::size_t>(src - x.data());
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++out_index) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::size_t best_at = 0;
                    for (int ky = 0; ky < k_; ++ky) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= x.h()) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix < 0 || ix >= x.w()) continue;
                            const std::size_t at = static_cast<std::size_t>(iy) * x.w() + ix;
                            if (src[at] > best) {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    y.data()[out_index] = best;
                    if (argmax) (*argmax)[out_index] = static_cast<std::uint32_t>(base + best_at);
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2d::forward(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool2d::forward_train(const Tensor& x) {
    in_h_ = x.h();
    in_w_ = x.w();
    return pool(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    if (dy.size() != argmax_.size()) {
        throw ShapeMismatch("max pool gradient does not match the cached forward pass");
    }
    Tensor dx(dy.n(), dy.c(), in_h_, in_w_);
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dx.data()[argmax_[i]] += dy.data()[i];
    }
    argmax_.clear();
    return dx;
}

Tensor AvgPool2d::forward(const Tensor& x) const {
    const int oh = output_extent(x.h());
    const int ow = output_extent(x.w());
    if (oh <= 0 || ow <= 0) {
        throw ShapeMismatch("average pool collapses input " + x.shape_string());
    }
    Tensor y(x.n(), x.c(), oh, ow);
    const float norm = 1.0f / static_cast<float>(k_ * k_);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.channel(n, c);
            float* dst = y.channel(n, c);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    float sum = 0.0f;
                    for (int ky = 0; ky < k_; ++ky) {
                        for (int kx = 0; kx < k_; ++kx) {
                            sum += src[static_cast<std::size_t>(oy * k_ + ky) * x.w() + ox * k_ + kx];
                        }
                    }
                    dst[static_cast<std::size_t>(oy) * ow + ox] = sum * norm;
                }
            }
        }
    }
    return y;
}

Tensor AvgPool2d::forward_train(const Tensor& x) {
    in_h_ = x.h();
    in_w_ = x.w();
    return forward(x);
}

Tensor AvgPool2d::backward(const Tensor& dy) const {
    Tensor dx(dy.n(), dy.c(), in_h_, in_w_);
    const float norm = 1.0f / static_cast<float>(k_ * k_);
    for (int n = 0; n < dy.n(); ++n) {
        for (int c = 0; c < dy.c(); ++c) {
            const float* g = dy.channel(n, c);
            float* dst = dx.channel(n, c);
            for (int oy = 0; oy < dy.h(); ++oy) {
                for (int ox = 0; ox < dy.w(); ++ox) {
                    const float v = g[static_cast<std::size_t>(oy) * dy.w() + ox] * norm;
                    for (int ky = 0; ky < k_; ++ky) {
                        for (int kx = 0; kx < k_; ++kx) {
                            dst[static_cast<std::size_t>(oy * k_ + ky) * in_w_ + ox * k_ + kx] += v;
                        }
                    }
                }
            }
        }
    }
    return dx;
}

Tensor global_avg_pool(const Tensor& x) {
    Tensor y(x.n(), x.c(), 1, 1);
    const double norm = 1.0 / static_cast<double>(x.plane());
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.channel(n, c);
            double sum = 0.0;
            for (std::size_t i = 0; i < x.plane(); ++i) sum += src[i];
            y.at(n, c, 0, 0) = static_cast<float>(sum * norm);
        }
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int h, int w) {
    Tensor dx(dy.n(), dy.c(), h, w);
    const float norm = 1.0f / static_cast<float>(h * w);
    for (int n = 0; n < dy.n(); ++n) {
        for (int c = 0; c < dy.c(); ++c) {
            std::fill_n(dx.channel(n, c), dx.plane(), dy.at(n, c, 0, 0) * norm);
        }
    }
    return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}, 0.0f), bias({out_features}, 0.0f), in_(in_features), out_(out_features) {
    if (in_features <= 0 || out_features <= 0) {
        throw ConfigError("linear layer dimensions must be positive");
    }
}

void Linear::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : weight.value) v = static_cast<float>(dist(rng));
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Linear::forward(const Tensor& x) const {
    if (static_cast<int>(x.sample_size()) != in_) {
        throw ShapeMismatch(fmt::format("linear expects {} features per sample, got {}", in_, x.shape_string()));
    }
    Tensor y(x.n(), out_, 1, 1);
    ConstMatMap w(weight.value.data(), out_, in_);
    ConstMatMap xin(x.data(), x.n(), in_);
    MatMap out(y.data(), x.n(), out_);
    out.noalias() = xin * w.transpose();
    for (int n = 0; n < x.n(); ++n) {
        for (int k = 0; k < out_; ++k) out(n, k) += bias.value[k];
    }
    return y;
}

Tensor Linear::forward_train(Tensor x) {
    input_ = std::move(x);
    return forward(input_);
}

Tensor Linear::backward(const Tensor& dy) {
    const int batch = input_.n();
    ConstMatMap g(dy.data(), batch, out_);
    ConstMatMap xin(input_.data(), batch, in_);
    MatMap(weight.grad.data(), out_, in_).noalias() += g.transpose() * xin;
    for (int n = 0; n < batch; ++n) {
        for (int k = 0; k < out_; ++k) bias.grad[k] += g(n, k);
    }
    Tensor dx(batch, input_.c(), input_.h(), input_.w());
    ConstMatMap w(weight.value.data(), out_, in_);
    MatMap(dx.data(), batch, in_).noalias() = g * w;
    input_ = Tensor{};
    return dx;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

void Linear::visit(const std::string& prefix, const ConstParamVisitor& fn) const {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(logits.n()));
    const auto k = logits.sample_size();
    for (int n = 0; n < logits.n(); ++n) {
        const float* row = logits.sample(n);
        const double peak = *std::max_element(row, row + k);
        auto& probs = out[static_cast<std::size_t>(n)];
        probs.resize(k);
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            probs[i] = std::exp(static_cast<double>(row[i]) - peak);
            total += probs[i];
        }
        for (auto& p : probs) p /= total;
    }
    return out;
}

}  // namespace imagedx::nn
