#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imagedx/dataset.hpp"
#include "imagedx/metrics.hpp"
#include "imagedx/model.hpp"

namespace imagedx {

/// Defaults reproduce the reference hyperparameters: Adam, categorical
/// cross-entropy, batch 16, learning rate 0.0001, 100 epochs.
struct TrainingConfig {
    double learning_rate = 0.0001;
    int batch_size = 16;
    int epochs = 100;
    std::uint64_t seed = 42;
    /// Stop after this many epochs without a better selection loss.
    std::optional<int> patience;
    /// When set, the best model so far is saved to `checkpoint_dir/best`.
    std::filesystem::path checkpoint_dir;
    /// Inverse-frequency class weights in the loss. Off by default.
    bool class_weighting = false;
    /// Keep decoded training images in memory across epochs.
    bool cache_images = true;
    /// Optional artifact whose trunk weights initialise the network.
    std::filesystem::path init_from;

    void validate() const;  // ConfigError
};

void to_json(nlohmann::json& j, const TrainingConfig& cfg);
void from_json(const nlohmann::json& j, TrainingConfig& cfg);

struct EpochRecord {
    int epoch = 0;  ///< 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_accuracy;
    double seconds = 0.0;
};

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
};

void to_json(nlohmann::json& j, const TrainingHistory& history);

struct TrainResult {
    TrainedModel model;
    TrainingHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with per-epoch seeded shuffling. Returns the model
/// restored to the epoch with the lowest validation loss (training loss when
/// the manifest has no validation split).
///
/// Throws EmptyDataset, NonFiniteLoss, DiskError, ConfigError.
TrainResult train(const DenseNetConfig& architecture, const PreprocessConfig& preprocess,
                  const DatasetManifest& manifest, const TrainingConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
    EvaluationMetrics metrics;
    ConfusionMatrix confusion;
};

/// Aggregates mean cross-entropy and the confusion matrix from predictions.
Evaluation evaluate_predictions(std::span<const std::size_t> truths, std::span<const ClassProbabilities> predictions,
                                Averaging averaging = Averaging::Weighted);

/// Runs inference over one split, optionally sharded across `workers`
/// threads; the result is identical for any worker count.
/// Throws EmptyDataset.
Evaluation evaluate(const TrainedModel& model, const DatasetManifest& manifest, Split split,
                    Averaging averaging = Averaging::Weighted, std::size_t batch_size = 16,
                    std::size_t workers = 1);

}  // namespace imagedx
