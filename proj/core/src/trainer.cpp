#include "imagedx/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/log.hpp"
#include "imagedx/nn/adam.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace imagedx {
namespace {

struct Sample {
    const SampleEntry* entry;
    std::size_t class_index;
};

std::vector<Sample> collect(const DatasetManifest& manifest, Split split) {
    const auto& cat = catalog();
    std::vector<Sample> out;
    for (const auto* e : manifest.select(split)) {
        out.push_back(Sample{e, cat.index(e->label)});
    }
    return out;
}

/// Decodes on demand, optionally memoising.
class ImageSource {
public:
    ImageSource(const std::vector<Sample>& samples, const PreprocessConfig& cfg, bool cache)
        : samples_(samples), cfg_(cfg), cache_(cache) {
        if (cache_) images_.resize(samples_.size());
    }

    const ImageTensor& get(std::size_t i, ImageTensor& scratch) {
        if (!cache_) {
            scratch = load_sample(*samples_[i].entry, cfg_);
            return scratch;
        }
        if (!images_[i]) images_[i] = load_sample(*samples_[i].entry, cfg_);
        return *images_[i];
    }

private:
    const std::vector<Sample>& samples_;
    PreprocessConfig cfg_;
    bool cache_;
    std::vector<std::optional<ImageTensor>> images_;
};

using Snapshot = std::vector<std::vector<float>>;

Snapshot snapshot(const DenseNet& net) {
    Snapshot s;
    net.visit([&s](const std::string&, const nn::Parameter& p) { s.push_back(p.value); });
    return s;
}

void restore(DenseNet& net, const Snapshot& s) {
    std::size_t i = 0;
    net.visit([&](const std::string&, nn::Parameter& p) { p.value = s[i++]; });
}

struct PassResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

PassResult evaluate_samples(const TrainedModel& model, const std::vector<Sample>& samples, ImageSource& source,
                            std::size_t batch_size) {
    double loss = 0.0;
    std::size_t correct = 0;
    std::vector<ImageTensor> scratch(batch_size);
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const auto end = std::min(samples.size(), start + batch_size);
        std::vector<const ImageTensor*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&source.get(i, scratch[i - start]));
        const auto probs = predict_batch(model, batch);
        for (std::size_t i = start; i < end; ++i) {
            const auto& p = probs[i - start];
            loss += cross_entropy_loss(p, samples[i].class_index);
            correct += argmax(p.probs) == samples[i].class_index ? 1 : 0;
        }
    }
    const double n = static_cast<double>(samples.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience && *patience < 1) throw ConfigError("patience must be >= 1 when set");
}

void to_json(json& j, const TrainingConfig& cfg) {
    j = json{{"optimizer", "adam"},
             {"loss", "categorical_cross_entropy"},
             {"learning_rate", cfg.learning_rate},
             {"batch_size", cfg.batch_size},
             {"epochs", cfg.epochs},
             {"seed", cfg.seed},
             {"patience", cfg.patience ? json(*cfg.patience) : json(nullptr)},
             {"checkpoint_dir", cfg.checkpoint_dir.string()},
             {"class_weighting", cfg.class_weighting},
             {"cache_images", cfg.cache_images},
             {"init_from", cfg.init_from.string()}};
}

void from_json(const json& j, TrainingConfig& cfg) {
    cfg = TrainingConfig{};
    if (const auto opt = j.value("optimizer", std::string("adam")); opt != "adam") {
        throw ConfigError("unsupported optimizer '" + opt + "' (only adam)");
    }
    if (const auto loss = j.value("loss", std::string("categorical_cross_entropy"));
        loss != "categorical_cross_entropy") {
        throw ConfigError("unsupported loss '" + loss + "'");
    }
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("patience") && !j.at("patience").is_null()) cfg.patience = j.at("patience").get<int>();
    cfg.checkpoint_dir = j.value("checkpoint_dir", std::string{});
    cfg.class_weighting = j.value("class_weighting", false);
    cfg.cache_images = j.value("cache_images", true);
    cfg.init_from = j.value("init_from", std::string{});
    cfg.validate();
}

void to_json(json& j, const TrainingHistory& history) {
    j = json::array();
    for (const auto& e : history.epochs) {
        j.push_back(json{{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"train_accuracy", e.train_accuracy},
                         {"val_loss", e.val_loss ? json(*e.val_loss) : json(nullptr)},
                         {"val_accuracy", e.val_accuracy ? json(*e.val_accuracy) : json(nullptr)},
                         {"seconds", e.seconds}});
    }
}

TrainResult train(const DenseNetConfig& architecture, const PreprocessConfig& preprocess,
                  const DatasetManifest& manifest, const TrainingConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const auto train_samples = collect(manifest, Split::Train);
    const auto val_samples = collect(manifest, Split::Val);
    if (train_samples.empty()) throw EmptyDataset("manifest has no training samples");

    TrainedModel model(architecture, preprocess, config.seed);
    if (!config.init_from.empty()) {
        const auto copied = load_pretrained_trunk(model, config.init_from);
        logger()->info("initialised {} trunk tensors from {}", copied, config.init_from.string());
    }
    auto& meta = model.metadata();
    meta.batch_size = config.batch_size;
    meta.learning_rate = config.learning_rate;
    meta.epochs = config.epochs;
    meta.seed = config.seed;
    meta.class_weighting = config.class_weighting;

    std::vector<double> class_weight(kNumClasses, 1.0);
    if (config.class_weighting) {
        std::vector<std::size_t> counts(kNumClasses, 0);
        for (const auto& s : train_samples) ++counts[s.class_index];
        const double n = static_cast<double>(train_samples.size());
        std::size_t present = 0;
        for (auto c : counts) present += c > 0 ? 1 : 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            class_weight[k] = counts[k] ? n / (static_cast<double>(present) * static_cast<double>(counts[k])) : 0.0;
        }
    }

    ImageSource train_images(train_samples, preprocess, config.cache_images);
    ImageSource val_images(val_samples, preprocess, config.cache_images);

    std::vector<nn::Parameter*> params;
    model.network().visit([&params](const std::string&, nn::Parameter& p) { params.push_back(&p); });
    nn::Adam optimizer({.learning_rate = config.learning_rate});

    std::mt19937_64 shuffle_rng(config.seed);
    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainingHistory history;
    Snapshot best = snapshot(model.network());
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int since_best = 0;
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    std::vector<ImageTensor> scratch(batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const auto end = std::min(order.size(), start + batch_size);
            const auto count = end - start;
            std::vector<const ImageTensor*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_images.get(order[i], scratch[i - start]));

            model.network().zero_grad();
            const auto logits = model.network().forward_train(to_batch(batch));
            const auto probs = nn::softmax_rows(logits);

            nn::Tensor dlogits(logits.n(), logits.c(), 1, 1);
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < count; ++b) {
                const auto truth = train_samples[order[start + b]].class_index;
                const double w = class_weight[truth];
                const double ce = cross_entropy_loss(probs[b], truth);
                batch_loss += w * ce;
                correct += argmax(probs[b]) == truth ? 1 : 0;
                for (std::size_t k = 0; k < probs[b].size(); ++k) {
                    const double target = k == truth ? 1.0 : 0.0;
                    dlogits.at(static_cast<int>(b), static_cast<int>(k), 0, 0) =
                        static_cast<float>(w * (probs[b][k] - target) / static_cast<double>(count));
                }
            }
            if (!std::isfinite(batch_loss)) {
                throw NonFiniteLoss(fmt::format("non-finite loss at epoch {} batch {} (learning rate {})", epoch,
                                                start / batch_size + 1, config.learning_rate));
            }
            loss_sum += batch_loss;
            model.network().backward(dlogits);
            optimizer.step(params);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(order.size());
        record.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!val_samples.empty()) {
            const auto val = evaluate_samples(model, val_samples, val_images, batch_size);
            record.val_loss = val.loss;
            record.val_accuracy = val.accuracy;
        }
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.epochs.push_back(record);

        logger()->info("epoch {}/{}: loss {:.4f} acc {:.4f}{}", epoch, config.epochs, record.train_loss,
                       record.train_accuracy,
                       record.val_loss ? fmt::format(" | val loss {:.4f} acc {:.4f}", *record.val_loss,
                                                     *record.val_accuracy)
                                       : std::string{});
        if (on_epoch) on_epoch(record);

        const double selection = record.val_loss.value_or(record.train_loss);
        if (selection < best_loss) {
            best_loss = selection;
            best_epoch = epoch;
            since_best = 0;
            best = snapshot(model.network());
            meta.epochs_completed = epoch;
            meta.best_epoch = epoch;
            meta.best_val_loss = record.val_loss;
            if (!config.checkpoint_dir.empty()) {
                save_model(model, config.checkpoint_dir / "best");
            }
        } else if (config.patience && ++since_best >= *config.patience) {
            logger()->info("early stop after epoch {} (best epoch {})", epoch, best_epoch);
            break;
        }
    }
    meta.epochs_completed = static_cast<int>(history.epochs.size());

    restore(model.network(), best);
    meta.best_epoch = best_epoch;
    return TrainResult{std::move(model), std::move(history)};
}

Evaluation evaluate_predictions(std::span<const std::size_t> truths, std::span<const ClassProbabilities> predictions,
                                Averaging averaging) {
    if (truths.size() != predictions.size()) {
        throw LengthMismatch(fmt::format("{} truths but {} predictions", truths.size(), predictions.size()));
    }
    if (truths.empty()) throw EmptyDataset("nothing to evaluate");
    const std::size_t k = predictions.front().probs.size();
    ConfusionMatrix cm(k);
    double loss = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        loss += cross_entropy_loss(predictions[i], truths[i]);
        cm.add(truths[i], argmax(predictions[i].probs));
    }
    auto metrics = metrics_from_confusion(cm, averaging);
    metrics.loss = loss / static_cast<double>(truths.size());
    return Evaluation{std::move(metrics), std::move(cm)};
}

Evaluation evaluate(const TrainedModel& model, const DatasetManifest& manifest, Split split, Averaging averaging,
                    std::size_t batch_size, std::size_t workers) {
    const auto samples = collect(manifest, split);
    if (samples.empty()) {
        throw EmptyDataset(fmt::format("manifest has no {} samples", to_string(split)));
    }
    batch_size = std::max<std::size_t>(1, batch_size);
    workers = std::clamp<std::size_t>(workers, 1, samples.size());

    // Shards are whole batches, concatenated in order, so every sample sees
    // the same batch composition whatever the worker count.
    struct Shard {
        std::size_t begin = 0;
        std::size_t end = 0;
        std::vector<ClassProbabilities> predictions;
        std::exception_ptr error;
    };
    const std::size_t batches = (samples.size() + batch_size - 1) / batch_size;
    workers = std::min(workers, batches);
    std::vector<Shard> shards(workers);
    const std::size_t per = (batches + workers - 1) / workers * batch_size;
    for (std::size_t w = 0; w < workers; ++w) {
        shards[w].begin = std::min(samples.size(), w * per);
        shards[w].end = std::min(samples.size(), (w + 1) * per);
    }
    auto run = [&](Shard& shard) {
        try {
            for (std::size_t start = shard.begin; start < shard.end; start += batch_size) {
                const auto end = std::min(shard.end, start + batch_size);
                std::vector<ImageTensor> images;
                images.reserve(end - start);
                for (std::size_t i = start; i < end; ++i) {
                    images.push_back(load_sample(*samples[i].entry, model.preprocess()));
                }
                std::vector<const ImageTensor*> batch;
                for (const auto& img : images) batch.push_back(&img);
                for (auto& p : predict_batch(model, batch)) shard.predictions.push_back(std::move(p));
            }
        } catch (...) {
            shard.error = std::current_exception();
        }
    };
    if (workers == 1) {
        run(shards.front());
    } else {
        std::vector<std::thread> threads;
        for (auto& shard : shards) threads.emplace_back(run, std::ref(shard));
        for (auto& t : threads) t.join();
    }

    std::vector<std::size_t> truths;
    std::vector<ClassProbabilities> predictions;
    truths.reserve(samples.size());
    predictions.reserve(samples.size());
    for (auto& shard : shards) {
        if (shard.error) std::rethrow_exception(shard.error);
        for (std::size_t i = shard.begin; i < shard.end; ++i) truths.push_back(samples[i].class_index);
        for (auto& p : shard.predictions) predictions.push_back(std::move(p));
    }
    return evaluate_predictions(truths, predictions, averaging);
}

}  // namespace imagedx
