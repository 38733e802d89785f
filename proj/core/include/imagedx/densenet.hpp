#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imagedx/nn/layers.hpp"

namespace imagedx {

/// Architecture hyperparameters. Defaults describe DenseNet-121.
struct DenseNetConfig {
    std::vector<int> block_layer_counts{6, 12, 24, 16};
    int growth_rate = 32;        ///< feature maps contributed by each dense layer
    int initial_channels = 64;   ///< stem convolution width
    int bottleneck_width = 4;    ///< 1x1 bottleneck produces bottleneck_width * growth_rate maps
    double compression = 0.5;    ///< transition layers keep floor(c * compression) channels
    int num_classes = 25;
    int input_height = 224;
    int input_width = 224;
    int input_channels = 3;

    bool operator==(const DenseNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const DenseNetConfig& cfg);
void from_json(const nlohmann::json& j, DenseNetConfig& cfg);

/// Feature-map count at layer `layer` (1-based) for initial width
/// `initial` and growth rate `growth`: initial + growth * (layer - 1).
/// Throws DomainError for layer < 1 or non-positive widths.
std::int64_t growth_rate_channels(std::int64_t initial, std::int64_t growth, std::int64_t layer);

enum class LayerKind {
    StemConv,
    StemNorm,
    StemPool,
    DenseBottleneck,  ///< BN-ReLU-Conv 1x1
    DenseConv,        ///< BN-ReLU-Conv 3x3
    TransitionConv,
    TransitionPool,
    FinalNorm,
    GlobalPool,
    Classifier,
};

std::string_view to_string(LayerKind kind) noexcept;

struct LayerDesc {
    LayerKind kind;
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int in_height = 0;
    int in_width = 0;
    int out_height = 0;
    int out_width = 0;
    /// Convolutions and the classifier carry weights; they make up the 121.
    bool weighted() const noexcept {
        return kind == LayerKind::StemConv || kind == LayerKind::DenseBottleneck || kind == LayerKind::DenseConv ||
               kind == LayerKind::TransitionConv || kind == LayerKind::Classifier;
    }

    bool operator==(const LayerDesc&) const = default;
};

/// Ordered layer plan with consistent channel and spatial arithmetic.
struct ModelSpec {
    DenseNetConfig config;
    std::vector<LayerDesc> layers;
    /// Channel count entering / leaving each dense block.
    std::vector<int> block_input_channels;
    std::vector<int> block_output_channels;

    std::size_t weighted_layer_count() const noexcept;
    int head_width() const noexcept;

    bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const LayerDesc& d);
void to_json(nlohmann::json& j, const ModelSpec& spec);

/// Validates `cfg` (ConfigError) and returns the layer plan.
ModelSpec build_model(const DenseNetConfig& cfg);

/// One dense layer: BN-ReLU-Conv1x1 bottleneck then BN-ReLU-Conv3x3 to
/// `growth` maps.
class DenseLayer {
public:
    DenseLayer(int in_channels, int growth, int bottleneck_width);

    int in_channels() const noexcept { return bottleneck.conv.in_channels(); }
    int out_channels() const noexcept { return conv.conv.out_channels(); }

    void init(std::mt19937_64& rng);
    nn::Tensor forward(const nn::Tensor& x) const;
    nn::Tensor forward_train(nn::Tensor x);
    nn::Tensor backward(const nn::Tensor& dy);

    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& fn) const;

    nn::BnReluConv bottleneck;
    nn::BnReluConv conv;
};

/// Applies `layer` to the channel-wise concatenation of all preceding
/// feature maps: E_l = psi_l([E_0, ..., E_{l-1}]). Inference mode.
/// Throws ShapeMismatch when the inputs disagree spatially.
nn::Tensor dense_block_forward(std::span<const nn::Tensor> inputs, const DenseLayer& layer);

/// Reference plain-chain composition E_l = psi_l(E_{l-1}) used to contrast
/// dense connectivity in tests. Each layer must accept the previous output.
nn::Tensor plain_chain_forward(const nn::Tensor& input, std::span<const DenseLayer> layers);

class DenseBlock {
public:
    DenseBlock(int in_channels, int num_layers, int growth, int bottleneck_width);

    int in_channels() const noexcept { return in_channels_; }
    int out_channels() const noexcept;
    std::size_t size() const noexcept { return layers_.size(); }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

    void init(std::mt19937_64& rng);
    nn::Tensor forward(const nn::Tensor& x) const;
    nn::Tensor forward_train(const nn::Tensor& x);
    nn::Tensor backward(const nn::Tensor& dy);

    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& fn) const;

private:
    int in_channels_;
    std::vector<DenseLayer> layers_;
};

struct StageShape {
    std::string name;
    int channels;
    int height;
    int width;
};

/// Trainable network instantiated from a ModelSpec.
class DenseNet {
public:
    DenseNet(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }

    /// Inference: logits (N, num_classes, 1, 1). Safe to call concurrently.
    nn::Tensor forward(const nn::Tensor& x) const;
    /// Training forward; caches activations for backward().
    nn::Tensor forward_train(const nn::Tensor& x);
    /// Accumulates parameter gradients from d(loss)/d(logits).
    void backward(const nn::Tensor& dlogits);
    void zero_grad();

    /// Output shape of every stage for an inference pass over `x`.
    std::vector<StageShape> trace(const nn::Tensor& x) const;

    void visit(const nn::ParamVisitor& fn);
    void visit(const nn::ConstParamVisitor& fn) const;
    std::size_t parameter_count() const;

private:
    void check_input(const nn::Tensor& x) const;

    ModelSpec spec_;
    nn::Conv2d conv0_;
    nn::BnRelu norm0_;
    nn::MaxPool2d pool0_;
    std::vector<DenseBlock> blocks_;
    std::vector<nn::BnReluConv> transitions_;
    std::vector<nn::AvgPool2d> transition_pools_;
    nn::BnRelu norm5_;
    nn::Linear classifier_;
    nn::Tensor input_;
    int final_h_ = 0;
    int final_w_ = 0;
};

}  // namespace imagedx
