#pragma once

#include <vector>

#include "imagedx/nn/layers.hpp"

namespace imagedx::nn {

/// Adam with bias correction. Binds to parameters in visit order.
class Adam {
public:
    struct Options {
        double learning_rate = 0.0001;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    explicit Adam(Options options) : options_(options) {}

    /// Applies one update to every trainable parameter in `params`.
    void step(const std::vector<Parameter*>& params);
    long long steps() const noexcept { return t_; }

private:
    Options options_;
    long long t_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

}  // namespace imagedx::nn
