#include "imagedx/nn/tensor.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace imagedx::nn {

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
        throw ShapeMismatch("negative tensor dimension");
    }
}

std::string Tensor::shape_string() const { return fmt::format("({}, {}, {}, {})", n_, c_, h_, w_); }

void Tensor::fill(float value) noexcept { std::fill(data_.begin(), data_.end(), value); }

Tensor concat_channels(std::span<const Tensor* const> parts) {
    if (parts.empty()) {
        return {};
    }
    const auto& first = *parts.front();
    int channels = 0;
    for (const auto* p : parts) {
        if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w()) {
            throw ShapeMismatch(fmt::format("cannot concatenate {} with {}: batch or spatial dimensions differ",
                                            first.shape_string(), p->shape_string()));
        }
        channels += p->c();
    }
    Tensor out(first.n(), channels, first.h(), first.w());
    for (int n = 0; n < first.n(); ++n) {
        float* dst = out.sample(n);
        for (const auto* p : parts) {
            dst = std::copy_n(p->sample(n), p->sample_size(), dst);
        }
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Tensor* parts[] = {&a, &b};
    return concat_channels(parts);
}

Tensor slice_channels(const Tensor& t, int first, int count) {
    if (first < 0 || count < 0 || first + count > t.c()) {
        throw ShapeMismatch(fmt::format("channel slice [{}, {}) outside {}", first, first + count, t.shape_string()));
    }
    Tensor out(t.n(), count, t.h(), t.w());
    for (int n = 0; n < t.n(); ++n) {
        std::copy_n(t.channel(n, first), out.sample_size(), out.sample(n));
    }
    return out;
}

void add_channels_prefix(Tensor& dst, const Tensor& src) {
    if (src.n() != dst.n() || src.h() != dst.h() || src.w() != dst.w() || src.c() > dst.c()) {
        throw ShapeMismatch("gradient prefix does not fit destination");
    }
    for (int n = 0; n < src.n(); ++n) {
        const float* s = src.sample(n);
        float* d = dst.sample(n);
        for (std::size_t i = 0; i < src.sample_size(); ++i) {
            d[i] += s[i];
        }
    }
}

}  // namespace imagedx::nn
