#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imagedx/dataset.hpp"
#include "imagedx/llm.hpp"
#include "imagedx/model.hpp"

namespace imagedx::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

std::filesystem::path golden_path(const std::string& name);
std::string read_text(const std::filesystem::path& file);
void write_text(const std::filesystem::path& file, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& file);

/// Tiny variant: one dense layer per block, 32x32 input.
DenseNetConfig tiny_config(int side = 32);
PreprocessConfig tiny_preprocess(int side = 32);

/// A 2-train / 1-val image per class fixture and a model overfit to it.
/// Built once per process and shared.
struct OverfitBundle {
    std::filesystem::path root;
    DatasetManifest manifest;
    TrainedModel* model;
    std::filesystem::path model_dir;
};
const OverfitBundle& overfit_bundle();

/// First training image of `label` in the overfit fixture.
std::filesystem::path fixture_image(const std::string& label);

/// One scripted answer of the stub chat-completions server.
struct StubReply {
    int status = 200;
    std::string body;
    std::optional<std::string> retry_after;
    std::chrono::milliseconds delay{0};

    static StubReply completion(const std::string& text, const std::string& model = "stub-model");
    static StubReply error(int status, const std::string& body = "{}");
};

/// Local OpenAI-style server on a free port. Replies follow the script in
/// order; the last one repeats.
class StubLlm {
public:
    explicit StubLlm(std::vector<StubReply> script);
    ~StubLlm();
    StubLlm(const StubLlm&) = delete;
    StubLlm& operator=(const StubLlm&) = delete;

    std::string url() const;
    int port() const;
    int calls() const;
    int peak_concurrency() const;
    std::vector<std::string> request_bodies() const;
    std::vector<std::string> authorization_headers() const;
    void set_models_reply(StubReply reply);

private:
    struct State;
    std::unique_ptr<State> state_;
};

/// Points the remote backend at `url` with fast retries.
LlmConfig stub_llm_config(const std::string& url);

/// Sets an environment variable for the scope.
class ScopedEnv {
public:
    ScopedEnv(const char* name, const char* value);
    ~ScopedEnv();
    ScopedEnv(const ScopedEnv&) = delete;
    ScopedEnv& operator=(const ScopedEnv&) = delete;

private:
    std::string name_;
    std::optional<std::string> previous_;
};

}  // namespace imagedx::testing
