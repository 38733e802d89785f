#include "imagedx/densenet.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"

namespace imagedx {

using nn::Tensor;

void to_json(nlohmann::json& j, const DenseNetConfig& cfg) {
    j = nlohmann::json{{"block_layer_counts", cfg.block_layer_counts},
                       {"growth_rate", cfg.growth_rate},
                       {"initial_channels", cfg.initial_channels},
                       {"bottleneck_width", cfg.bottleneck_width},
                       {"compression", cfg.compression},
                       {"num_classes", cfg.num_classes},
                       {"input_shape", {cfg.input_height, cfg.input_width, cfg.input_channels}}};
}

void from_json(const nlohmann::json& j, DenseNetConfig& cfg) {
    cfg = DenseNetConfig{};
    if (j.contains("block_layer_counts")) cfg.block_layer_counts = j.at("block_layer_counts").get<std::vector<int>>();
    cfg.growth_rate = j.value("growth_rate", cfg.growth_rate);
    cfg.initial_channels = j.value("initial_channels", cfg.initial_channels);
    cfg.bottleneck_width = j.value("bottleneck_width", cfg.bottleneck_width);
    cfg.compression = j.value("compression", cfg.compression);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    if (j.contains("input_shape")) {
        const auto shape = j.at("input_shape").get<std::vector<int>>();
        if (shape.size() != 3) {
            throw ConfigError("input_shape must be [height, width, channels]");
        }
        cfg.input_height = shape[0];
        cfg.input_width = shape[1];
        cfg.input_channels = shape[2];
    }
}

std::int64_t growth_rate_channels(std::int64_t initial, std::int64_t growth, std::int64_t layer) {
    if (layer < 1) {
        throw DomainError(fmt::format("layer index {} must be >= 1", layer));
    }
    if (initial <= 0 || growth <= 0) {
        throw DomainError("initial width and growth rate must be positive");
    }
    return initial + growth * (layer - 1);
}

std::string_view to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::StemConv: return "stem_conv";
        case LayerKind::StemNorm: return "stem_norm";
        case LayerKind::StemPool: return "stem_pool";
        case LayerKind::DenseBottleneck: return "dense_bottleneck";
        case LayerKind::DenseConv: return "dense_conv";
        case LayerKind::TransitionConv: return "transition_conv";
        case LayerKind::TransitionPool: return "transition_pool";
        case LayerKind::FinalNorm: return "final_norm";
        case LayerKind::GlobalPool: return "global_pool";
        case LayerKind::Classifier: return "classifier";
    }
    return "unknown";
}

std::size_t ModelSpec::weighted_layer_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weighted() ? 1 : 0;
    return n;
}

int ModelSpec::head_width() const noexcept { return layers.empty() ? 0 : layers.back().out_channels; }

void to_json(nlohmann::json& j, const LayerDesc& d) {
    j = nlohmann::json{{"kind", to_string(d.kind)},         {"name", d.name},
                       {"in_channels", d.in_channels},      {"out_channels", d.out_channels},
                       {"kernel", d.kernel},                {"stride", d.stride},
                       {"in_hw", {d.in_height, d.in_width}}, {"out_hw", {d.out_height, d.out_width}}};
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
    j = nlohmann::json{{"config", spec.config},
                       {"weighted_layers", spec.weighted_layer_count()},
                       {"block_output_channels", spec.block_output_channels},
                       {"layers", spec.layers}};
}

ModelSpec build_model(const DenseNetConfig& cfg) {
    if (cfg.block_layer_counts.empty()) {
        throw ConfigError("at least one dense block is required");
    }
    for (int n : cfg.block_layer_counts) {
        if (n <= 0) throw ConfigError(fmt::format("dense block layer count {} must be positive", n));
    }
    if (cfg.growth_rate <= 0 || cfg.initial_channels <= 0 || cfg.bottleneck_width <= 0 || cfg.num_classes <= 0) {
        throw ConfigError("growth rate, initial channels, bottleneck width and class count must be positive");
    }
    if (!(cfg.compression > 0.0 && cfg.compression <= 1.0)) {
        throw ConfigError("compression must lie in (0, 1]");
    }
    if (cfg.input_channels != 3 || cfg.input_height <= 0 || cfg.input_width <= 0) {
        throw ConfigError("input shape must be (H, W, 3) with positive H and W");
    }

    ModelSpec spec;
    spec.config = cfg;
    int h = cfg.input_height;
    int w = cfg.input_width;
    int c = cfg.input_channels;

    auto push = [&](LayerKind kind, std::string name, int out_c, int kernel, int stride, int oh, int ow) {
        if (oh <= 0 || ow <= 0) {
            throw ConfigError(fmt::format("input {}x{} collapses to zero size at {}", cfg.input_height,
                                          cfg.input_width, name));
        }
        spec.layers.push_back(LayerDesc{kind, std::move(name), c, out_c, kernel, stride, h, w, oh, ow});
        c = out_c;
        h = oh;
        w = ow;
    };

    push(LayerKind::StemConv, "features.conv0", cfg.initial_channels, 7, 2, (h + 6 - 7) / 2 + 1,
         (w + 6 - 7) / 2 + 1);
    push(LayerKind::StemNorm, "features.norm0", c, 0, 1, h, w);
    push(LayerKind::StemPool, "features.pool0", c, 3, 2, (h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);

    const int bottleneck = cfg.bottleneck_width * cfg.growth_rate;
    for (std::size_t b = 0; b < cfg.block_layer_counts.size(); ++b) {
        const int block_in = c;
        spec.block_input_channels.push_back(block_in);
        for (int l = 1; l <= cfg.block_layer_counts[b]; ++l) {
            const auto prefix = fmt::format("features.denseblock{}.denselayer{}", b + 1, l);
            c = block_in + (l - 1) * cfg.growth_rate;
            push(LayerKind::DenseBottleneck, prefix + ".conv1", bottleneck, 1, 1, h, w);
            push(LayerKind::DenseConv, prefix + ".conv2", cfg.growth_rate, 3, 1, h, w);
        }
        c = block_in + cfg.block_layer_counts[b] * cfg.growth_rate;
        spec.block_output_channels.push_back(c);
        if (b + 1 < cfg.block_layer_counts.size()) {
            const int reduced = static_cast<int>(std::floor(c * cfg.compression));
            if (reduced <= 0) throw ConfigError("transition compression leaves no channels");
            const auto prefix = fmt::format("features.transition{}", b + 1);
            push(LayerKind::TransitionConv, prefix + ".conv", reduced, 1, 1, h, w);
            push(LayerKind::TransitionPool, prefix + ".pool", c, 2, 2, h / 2, w / 2);
        }
    }
    push(LayerKind::FinalNorm, "features.norm5", c, 0, 1, h, w);
    push(LayerKind::GlobalPool, "features.global_pool", c, 0, 1, 1, 1);
    push(LayerKind::Classifier, "classifier", cfg.num_classes, 0, 1, 1, 1);
    return spec;
}

// ---------------------------------------------------------------- DenseLayer

DenseLayer::DenseLayer(int in_channels, int growth, int bottleneck_width)
    : bottleneck(in_channels, bottleneck_width * growth, 1, 1, 0),
      conv(bottleneck_width * growth, growth, 3, 1, 1) {}

void DenseLayer::init(std::mt19937_64& rng) {
    bottleneck.init(rng);
    conv.init(rng);
}

Tensor DenseLayer::forward(const Tensor& x) const { return conv.forward(bottleneck.forward(x)); }

Tensor DenseLayer::forward_train(Tensor x) { return conv.forward_train(bottleneck.forward_train(std::move(x))); }

Tensor DenseLayer::backward(const Tensor& dy) { return bottleneck.backward(conv.backward(dy)); }

void DenseLayer::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    bottleneck.visit(prefix, "norm1", "conv1", fn);
    conv.visit(prefix, "norm2", "conv2", fn);
}

void DenseLayer::visit(const std::string& prefix, const nn::ConstParamVisitor& fn) const {
    bottleneck.visit(prefix, "norm1", "conv1", fn);
    conv.visit(prefix, "norm2", "conv2", fn);
}

Tensor dense_block_forward(std::span<const Tensor> inputs, const DenseLayer& layer) {
    std::vector<const Tensor*> parts;
    parts.reserve(inputs.size());
    for (const auto& t : inputs) parts.push_back(&t);
    const auto stacked = nn::concat_channels(parts);
    if (stacked.c() != layer.in_channels()) {
        throw ShapeMismatch(fmt::format("dense layer expects {} concatenated channels, got {}", layer.in_channels(),
                                        stacked.c()));
    }
    return layer.forward(stacked);
}

Tensor plain_chain_forward(const Tensor& input, std::span<const DenseLayer> layers) {
    Tensor current = input;
    for (const auto& layer : layers) {
        current = layer.forward(current);
    }
    return current;
}

// ---------------------------------------------------------------- DenseBlock

DenseBlock::DenseBlock(int in_channels, int num_layers, int growth, int bottleneck_width)
    : in_channels_(in_channels) {
    layers_.reserve(static_cast<std::size_t>(num_layers));
    for (int l = 0; l < num_layers; ++l) {
        layers_.emplace_back(in_channels + l * growth, growth, bottleneck_width);
    }
}

int DenseBlock::out_channels() const noexcept {
    return layers_.empty() ? in_channels_ : layers_.back().in_channels() + layers_.back().out_channels();
}

void DenseBlock::init(std::mt19937_64& rng) {
    for (auto& l : layers_) l.init(rng);
}

Tensor DenseBlock::forward(const Tensor& x) const {
    Tensor state = x;
    for (const auto& layer : layers_) {
        state = nn::concat_channels(state, layer.forward(state));
    }
    return state;
}

Tensor DenseBlock::forward_train(const Tensor& x) {
    Tensor state = x;
    for (auto& layer : layers_) {
        auto out = layer.forward_train(state);
        state = nn::concat_channels(state, out);
    }
    return state;
}

Tensor DenseBlock::backward(const Tensor& dy) {
    // Walk layers in reverse. When layer l is reached, the slice of `grad`
    // holding its output already has every downstream contribution.
    Tensor grad = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        const auto out_grad = nn::slice_channels(grad, it->in_channels(), it->out_channels());
        const auto in_grad = it->backward(out_grad);
        add_channels_prefix(grad, in_grad);
    }
    return nn::slice_channels(grad, 0, in_channels_);
}

void DenseBlock::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        layers_[l].visit(fmt::format("{}.denselayer{}", prefix, l + 1), fn);
    }
}

void DenseBlock::visit(const std::string& prefix, const nn::ConstParamVisitor& fn) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        layers_[l].visit(fmt::format("{}.denselayer{}", prefix, l + 1), fn);
    }
}

// ---------------------------------------------------------------- DenseNet

DenseNet::DenseNet(const ModelSpec& spec, std::uint64_t seed)
    : spec_(spec),
      conv0_(spec.config.input_channels, spec.config.initial_channels, 7, 2, 3),
      norm0_(spec.config.initial_channels),
      pool0_(3, 2, 1) {
    const auto& cfg = spec_.config;
    int c = cfg.initial_channels;
    for (std::size_t b = 0; b < cfg.block_layer_counts.size(); ++b) {
        blocks_.emplace_back(c, cfg.block_layer_counts[b], cfg.growth_rate, cfg.bottleneck_width);
        c = blocks_.back().out_channels();
        if (b + 1 < cfg.block_layer_counts.size()) {
            const int reduced = static_cast<int>(std::floor(c * cfg.compression));
            transitions_.emplace_back(c, reduced, 1, 1, 0);
            transition_pools_.emplace_back(2);
            c = reduced;
        }
    }
    norm5_ = nn::BnRelu(c);
    classifier_ = nn::Linear(c, cfg.num_classes);

    std::mt19937_64 rng(seed);
    conv0_.init(rng);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].init(rng);
        if (b < transitions_.size()) transitions_[b].init(rng);
    }
    classifier_.init(rng);
}

void DenseNet::check_input(const Tensor& x) const {
    const auto& cfg = spec_.config;
    if (x.c() != cfg.input_channels || x.h() != cfg.input_height || x.w() != cfg.input_width) {
        throw ShapeMismatch(fmt::format("model expects (N, {}, {}, {}) input, got {}", cfg.input_channels,
                                        cfg.input_height, cfg.input_width, x.shape_string()));
    }
}

Tensor DenseNet::forward(const Tensor& x) const {
    check_input(x);
    auto t = pool0_.forward(norm0_.forward(conv0_.forward(x)));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        t = blocks_[b].forward(t);
        if (b < transitions_.size()) {
            t = transition_pools_[b].forward(transitions_[b].forward(t));
        }
    }
    return classifier_.forward(nn::global_avg_pool(norm5_.forward(t)));
}

Tensor DenseNet::forward_train(const Tensor& x) {
    check_input(x);
    input_ = x;
    auto t = conv0_.forward(x);
    t = pool0_.forward_train(norm0_.forward_train(std::move(t)));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        t = blocks_[b].forward_train(t);
        if (b < transitions_.size()) {
            t = transition_pools_[b].forward_train(transitions_[b].forward_train(std::move(t)));
        }
    }
    t = norm5_.forward_train(std::move(t));
    final_h_ = t.h();
    final_w_ = t.w();
    return classifier_.forward_train(nn::global_avg_pool(t));
}

void DenseNet::backward(const Tensor& dlogits) {
    auto g = classifier_.backward(dlogits);
    g = norm5_.backward(nn::global_avg_pool_backward(g, final_h_, final_w_));
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        if (i < transitions_.size()) {
            g = transitions_[i].backward(transition_pools_[i].backward(g));
        }
        g = blocks_[i].backward(g);
    }
    g = norm0_.backward(pool0_.backward(g));
    conv0_.backward(input_, g);
    input_ = Tensor{};
}

void DenseNet::zero_grad() {
    visit([](const std::string&, nn::Parameter& p) { p.zero_grad(); });
}

std::vector<StageShape> DenseNet::trace(const Tensor& x) const {
    check_input(x);
    std::vector<StageShape> shapes;
    auto record = [&shapes](std::string name, const Tensor& t) {
        shapes.push_back(StageShape{std::move(name), t.c(), t.h(), t.w()});
    };
    auto t = conv0_.forward(x);
    record("features.conv0", t);
    t = pool0_.forward(norm0_.forward(t));
    record("features.pool0", t);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        t = blocks_[b].forward(t);
        record(fmt::format("features.denseblock{}", b + 1), t);
        if (b < transitions_.size()) {
            t = transition_pools_[b].forward(transitions_[b].forward(t));
            record(fmt::format("features.transition{}", b + 1), t);
        }
    }
    t = nn::global_avg_pool(norm5_.forward(t));
    record("features.global_pool", t);
    record("classifier", classifier_.forward(t));
    return shapes;
}

void DenseNet::visit(const nn::ParamVisitor& fn) {
    conv0_.visit("features.conv0", fn);
    norm0_.visit("features.norm0", fn);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].visit(fmt::format("features.denseblock{}", b + 1), fn);
        if (b < transitions_.size()) {
            transitions_[b].visit(fmt::format("features.transition{}", b + 1), "norm", "conv", fn);
        }
    }
    norm5_.visit("features.norm5", fn);
    classifier_.visit("classifier", fn);
}

void DenseNet::visit(const nn::ConstParamVisitor& fn) const {
    conv0_.visit("features.conv0", fn);
    norm0_.visit("features.norm0", fn);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].visit(fmt::format("features.denseblock{}", b + 1), fn);
        if (b < transitions_.size()) {
            transitions_[b].visit(fmt::format("features.transition{}", b + 1), "norm", "conv", fn);
        }
    }
    norm5_.visit("features.norm5", fn);
    classifier_.visit("classifier", fn);
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    visit([&n](const std::string&, const nn::Parameter& p) {
        if (p.trainable) n += p.numel();
    });
    return n;
}

}  // namespace imagedx
