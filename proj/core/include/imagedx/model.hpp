#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imagedx/densenet.hpp"
#include "imagedx/image.hpp"
#include "imagedx/label.hpp"

namespace imagedx {

inline constexpr int kModelSchemaVersion = 1;

/// Hyperparameters and provenance recorded with every trained model.
struct TrainingMetadata {
    std::string model_name = "DenseNet121";
    std::string optimizer = "Adam";
    std::string loss = "Cross-Entropy";
    int batch_size = 16;
    double learning_rate = 0.0001;
    int epochs = 100;
    int epochs_completed = 0;
    int best_epoch = 0;
    std::optional<double> best_val_loss;
    std::uint64_t seed = 0;
    bool class_weighting = false;
    std::string initialization = "random";

    bool operator==(const TrainingMetadata&) const = default;
};

void to_json(nlohmann::json& j, const TrainingMetadata& m);
void from_json(const nlohmann::json& j, TrainingMetadata& m);

/// Softmax output in catalog order.
struct ClassProbabilities {
    std::vector<double> probs;
};

struct LabelPrediction {
    HierarchicalLabel label;
    std::size_t class_index = 0;
    double confidence = 0.0;
    ClassProbabilities probabilities;
};

/// A network together with everything needed to reproduce its predictions.
/// Inference is const and may run concurrently.
class TrainedModel {
public:
    TrainedModel(const DenseNetConfig& config, const PreprocessConfig& preprocess, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return network_->spec(); }
    const DenseNet& network() const noexcept { return *network_; }
    DenseNet& network() noexcept { return *network_; }

    const PreprocessConfig& preprocess() const noexcept { return preprocess_; }
    const std::vector<std::string>& catalog_snapshot() const noexcept { return catalog_; }
    const TrainingMetadata& metadata() const noexcept { return metadata_; }
    TrainingMetadata& metadata() noexcept { return metadata_; }

    /// Identifier assigned when the artifact is saved or loaded; empty before.
    const std::string& artifact_id() const noexcept { return artifact_id_; }

private:
    friend void save_model(TrainedModel& model, const std::filesystem::path& dir);
    friend TrainedModel load_model(const std::filesystem::path& dir);

    std::unique_ptr<DenseNet> network_;
    PreprocessConfig preprocess_;
    std::vector<std::string> catalog_;
    TrainingMetadata metadata_;
    std::string artifact_id_;
};

/// Writes `model.json` and `params.bin` under `dir` and sets the artifact id.
/// Throws DiskError.
void save_model(TrainedModel& model, const std::filesystem::path& dir);

/// Throws DiskError, ConfigError (schema or shape mismatch) or
/// ConfigError when the parameter payload does not match its recorded hash.
TrainedModel load_model(const std::filesystem::path& dir);

/// Reads only `model.json` of an artifact.
nlohmann::json read_model_metadata(const std::filesystem::path& dir);

/// Copies every trunk parameter whose name and shape match from the artifact
/// at `dir`; the classifier head is left untouched. Returns copied count.
std::size_t load_pretrained_trunk(TrainedModel& model, const std::filesystem::path& dir);

/// Stacks HWC images into an NCHW batch. Throws ShapeMismatch when shapes differ.
nn::Tensor to_batch(std::span<const ImageTensor* const> images);

ClassProbabilities predict(const TrainedModel& model, const ImageTensor& image);
std::vector<ClassProbabilities> predict_batch(const TrainedModel& model, std::span<const ImageTensor* const> images);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

LabelPrediction label_from_probabilities(const TrainedModel& model, ClassProbabilities probs);
LabelPrediction predict_label(const TrainedModel& model, const ImageTensor& image);

}  // namespace imagedx
