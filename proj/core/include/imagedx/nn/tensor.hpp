#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace imagedx::nn {

/// Dense float tensor in NCHW layout.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f);

    int n() const noexcept { return n_; }
    int c() const noexcept { return c_; }
    int h() const noexcept { return h_; }
    int w() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h_) * w_; }
    std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c_) * plane(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float* sample(int n) noexcept { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }
    const float* sample(int n) const noexcept { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }
    float* channel(int n, int c) noexcept { return sample(n) + static_cast<std::size_t>(c) * plane(); }
    const float* channel(int n, int c) const noexcept { return sample(n) + static_cast<std::size_t>(c) * plane(); }

    float& at(int n, int c, int y, int x) noexcept { return channel(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
    float at(int n, int c, int y, int x) const noexcept {
        return channel(n, c)[static_cast<std::size_t>(y) * w_ + x];
    }

    bool same_shape(const Tensor& other) const noexcept {
        return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
    }
    std::string shape_string() const;

    void fill(float value) noexcept;

private:
    int n_ = 0;
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<float> data_;
};

/// Channel-wise concatenation; all parts must share N, H and W (ShapeMismatch).
Tensor concat_channels(std::span<const Tensor* const> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Copies channels [first, first + count) of every sample.
Tensor slice_channels(const Tensor& t, int first, int count);

/// dst[:, 0:src.c] += src
void add_channels_prefix(Tensor& dst, const Tensor& src);

}  // namespace imagedx::nn
