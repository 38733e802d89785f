#include "imagedx/nn/adam.hpp"

#include <cmath>

#include "imagedx/errors.hpp"

namespace imagedx::nn {

void Adam::step(const std::vector<Parameter*>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->value.size(), 0.0f);
            v_[i].assign(params[i]->value.size(), 0.0f);
        }
    } else if (m_.size() != params.size()) {
        throw ConfigError("optimizer parameter set changed between steps");
    }
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double step_size = options_.learning_rate / correction1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g);
            v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * g * g);
            const double denom = std::sqrt(v[j] / correction2) + options_.epsilon;
            p.value[j] = static_cast<float>(p.value[j] - step_size * m[j] / denom);
        }
    }
}

}  // namespace imagedx::nn
