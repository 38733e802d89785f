#include "imagedx/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace imagedx {
namespace {

constexpr char kParamsMagic[8] = {'I', 'M', 'D', 'X', 'P', 'R', 'M', '1'};
constexpr const char* kParamsFile = "params.bin";
constexpr const char* kMetadataFile = "model.json";

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw ConfigError("parameter payload is truncated");
    return value;
}

void write_params(const DenseNet& net, const fs::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DiskError("cannot write " + file.string());
    std::uint32_t count = 0;
    net.visit([&count](const std::string&, const nn::Parameter&) { ++count; });
    out.write(kParamsMagic, sizeof(kParamsMagic));
    put<std::uint32_t>(out, count);
    net.visit([&out](const std::string& name, const nn::Parameter& p) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) put<std::int32_t>(out, d);
        put<std::uint64_t>(out, p.value.size());
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    });
    if (!out.flush()) throw DiskError("failed writing " + file.string());
}

struct StoredParam {
    std::vector<int> shape;
    std::vector<float> value;
};

std::vector<std::pair<std::string, StoredParam>> read_params(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DiskError("cannot open " + file.string());
    char magic[sizeof(kParamsMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0) {
        throw ConfigError(file.string() + " is not an imagedx parameter payload");
    }
    const auto count = get<std::uint32_t>(in);
    std::vector<std::pair<std::string, StoredParam>> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get<std::uint32_t>(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        StoredParam p;
        p.shape.resize(get<std::uint32_t>(in));
        for (auto& d : p.shape) d = get<std::int32_t>(in);
        p.value.resize(get<std::uint64_t>(in));
        in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
        if (!in) throw ConfigError("parameter payload is truncated at " + name);
        params.emplace_back(std::move(name), std::move(p));
    }
    return params;
}

json metadata_document(const TrainedModel& model, const std::string& params_sha) {
    return json{{"format", "imagedx-model"},
                {"schema_version", kModelSchemaVersion},
                {"params_file", kParamsFile},
                {"params_sha256", params_sha},
                {"architecture", model.spec().config},
                {"layer_plan", model.spec()},
                {"catalog", model.catalog_snapshot()},
                {"preprocess", model.preprocess()},
                {"training", model.metadata()}};
}

std::string compute_artifact_id(const json& doc_without_id) {
    return sha256_hex(doc_without_id.dump()).substr(0, 16);
}

}  // namespace

void to_json(json& j, const TrainingMetadata& m) {
    j = json{{"model_name", m.model_name},
             {"optimizer", m.optimizer},
             {"loss", m.loss},
             {"batch_size", m.batch_size},
             {"learning_rate", m.learning_rate},
             {"epochs", m.epochs},
             {"epochs_completed", m.epochs_completed},
             {"best_epoch", m.best_epoch},
             {"best_val_loss", m.best_val_loss ? json(*m.best_val_loss) : json(nullptr)},
             {"seed", m.seed},
             {"class_weighting", m.class_weighting},
             {"initialization", m.initialization}};
}

void from_json(const json& j, TrainingMetadata& m) {
    m = TrainingMetadata{};
    m.model_name = j.value("model_name", m.model_name);
    m.optimizer = j.value("optimizer", m.optimizer);
    m.loss = j.value("loss", m.loss);
    m.batch_size = j.value("batch_size", m.batch_size);
    m.learning_rate = j.value("learning_rate", m.learning_rate);
    m.epochs = j.value("epochs", m.epochs);
    m.epochs_completed = j.value("epochs_completed", 0);
    m.best_epoch = j.value("best_epoch", 0);
    if (j.contains("best_val_loss") && !j.at("best_val_loss").is_null()) {
        m.best_val_loss = j.at("best_val_loss").get<double>();
    }
    m.seed = j.value("seed", std::uint64_t{0});
    m.class_weighting = j.value("class_weighting", false);
    m.initialization = j.value("initialization", m.initialization);
}

TrainedModel::TrainedModel(const DenseNetConfig& config, const PreprocessConfig& preprocess, std::uint64_t seed)
    : network_(std::make_unique<DenseNet>(build_model(config), seed)),
      preprocess_(preprocess),
      catalog_(catalog().strings()) {
    preprocess_.validate();
    if (static_cast<std::size_t>(config.num_classes) != catalog_.size()) {
        throw ConfigError(fmt::format("a trained model needs one output per catalog entry ({}), got {}",
                                      catalog_.size(), config.num_classes));
    }
    if (preprocess_.target_height != config.input_height || preprocess_.target_width != config.input_width) {
        throw ConfigError(fmt::format("preprocess target {}x{} differs from network input {}x{}",
                                      preprocess_.target_height, preprocess_.target_width, config.input_height,
                                      config.input_width));
    }
    metadata_.seed = seed;
}

void save_model(TrainedModel& model, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DiskError("cannot create model directory " + dir.string() + ": " + ec.message());

    const auto params_path = dir / kParamsFile;
    write_params(model.network(), params_path);
    auto doc = metadata_document(model, sha256_file(params_path));
    model.artifact_id_ = compute_artifact_id(doc);
    doc["artifact_id"] = model.artifact_id_;

    const auto meta_path = dir / kMetadataFile;
    std::ofstream out(meta_path, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << '\n';
    if (!out.flush()) throw DiskError("failed writing " + meta_path.string());
}

json read_model_metadata(const fs::path& dir) {
    const auto meta_path = dir / kMetadataFile;
    std::ifstream in(meta_path, std::ios::binary);
    if (!in) throw DiskError("cannot open " + meta_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(meta_path.string() + ": " + e.what());
    }
    if (doc.value("format", std::string{}) != "imagedx-model") {
        throw ConfigError(meta_path.string() + " is not an imagedx model artifact");
    }
    if (doc.value("schema_version", 0) != kModelSchemaVersion) {
        throw ConfigError(fmt::format("unsupported model schema_version {}", doc.value("schema_version", 0)));
    }
    return doc;
}

TrainedModel load_model(const fs::path& dir) {
    const auto doc = read_model_metadata(dir);
    const auto params_path = dir / doc.value("params_file", std::string(kParamsFile));
    const auto actual_sha = sha256_file(params_path);
    if (actual_sha != doc.at("params_sha256").get<std::string>()) {
        throw ConfigError("parameter payload " + params_path.string() + " does not match model.json (hash mismatch)");
    }

    TrainedModel model(doc.at("architecture").get<DenseNetConfig>(), doc.at("preprocess").get<PreprocessConfig>(),
                       0);
    model.metadata_ = doc.at("training").get<TrainingMetadata>();
    model.catalog_ = doc.at("catalog").get<std::vector<std::string>>();
    if (static_cast<int>(model.catalog_.size()) != model.spec().head_width()) {
        throw ConfigError("catalog snapshot size does not match the classifier width");
    }

    const auto stored = read_params(params_path);
    std::size_t i = 0;
    model.network().visit([&](const std::string& name, nn::Parameter& p) {
        if (i >= stored.size() || stored[i].first != name || stored[i].second.shape != p.shape) {
            throw ConfigError("parameter payload does not match the layer plan at " + name);
        }
        p.value = stored[i].second.value;
        ++i;
    });
    if (i != stored.size()) throw ConfigError("parameter payload has extra entries");

    auto expected = doc;
    expected.erase("artifact_id");
    model.artifact_id_ = compute_artifact_id(expected);
    if (doc.contains("artifact_id") && doc.at("artifact_id").get<std::string>() != model.artifact_id_) {
        throw ConfigError("model.json artifact_id does not match its contents");
    }
    return model;
}

std::size_t load_pretrained_trunk(TrainedModel& model, const fs::path& dir) {
    const auto doc = read_model_metadata(dir);
    const auto params_path = dir / doc.value("params_file", std::string(kParamsFile));
    std::map<std::string, StoredParam> stored;
    for (auto& [name, p] : read_params(params_path)) stored.emplace(name, std::move(p));
    std::size_t copied = 0;
    model.network().visit([&](const std::string& name, nn::Parameter& p) {
        if (name.starts_with("classifier.")) return;
        if (auto it = stored.find(name); it != stored.end() && it->second.shape == p.shape) {
            p.value = it->second.value;
            ++copied;
        }
    });
    model.metadata().initialization = "pretrained:" + doc.value("artifact_id", std::string("unknown"));
    return copied;
}

nn::Tensor to_batch(std::span<const ImageTensor* const> images) {
    if (images.empty()) return {};
    const auto& first = *images.front();
    nn::Tensor batch(static_cast<int>(images.size()), first.channels, first.height, first.width);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = *images[n];
        if (img.height != first.height || img.width != first.width || img.channels != first.channels) {
            throw ShapeMismatch("images in a batch must share one shape");
        }
        for (int c = 0; c < img.channels; ++c) {
            float* dst = batch.channel(static_cast<int>(n), c);
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    dst[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
                }
            }
        }
    }
    return batch;
}

std::vector<ClassProbabilities> predict_batch(const TrainedModel& model, std::span<const ImageTensor* const> images) {
    const auto& pre = model.preprocess();
    for (const auto* img : images) {
        if (img->height != pre.target_height || img->width != pre.target_width || img->channels != 3) {
            throw ShapeMismatch(fmt::format("image ({}, {}, {}) does not match model input ({}, {}, 3)", img->height,
                                            img->width, img->channels, pre.target_height, pre.target_width));
        }
    }
    std::vector<ClassProbabilities> out;
    if (images.empty()) return out;
    for (auto& row : nn::softmax_rows(model.network().forward(to_batch(images)))) {
        out.push_back(ClassProbabilities{std::move(row)});
    }
    return out;
}

ClassProbabilities predict(const TrainedModel& model, const ImageTensor& image) {
    const ImageTensor* one[] = {&image};
    return std::move(predict_batch(model, one).front());
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

LabelPrediction label_from_probabilities(const TrainedModel& model, ClassProbabilities probs) {
    const auto idx = argmax(probs.probs);
    const auto& snapshot = model.catalog_snapshot();
    if (idx >= snapshot.size()) {
        throw IndexError(fmt::format("predicted class {} has no catalog entry", idx));
    }
    LabelPrediction out;
    out.label = parse_label(snapshot[idx]);
    out.class_index = idx;
    out.confidence = probs.probs[idx];
    out.probabilities = std::move(probs);
    return out;
}

LabelPrediction predict_label(const TrainedModel& model, const ImageTensor& image) {
    return label_from_probabilities(model, predict(model, image));
}

}  // namespace imagedx
