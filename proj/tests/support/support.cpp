#include "support.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <httplib.h>

#include "imagedx/fixture.hpp"
#include "imagedx/trainer.hpp"

namespace fs = std::filesystem;

namespace imagedx::testing {

TempDir::TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / fmt::format("imagedx-test-{:08x}{:08x}", rd(), rd());
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path golden_path(const std::string& name) { return fs::path(IMAGEDX_GOLDEN_DIR) / name; }

std::string read_text(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    out << text;
}

nlohmann::json read_json(const fs::path& file) { return nlohmann::json::parse(read_text(file)); }

DenseNetConfig tiny_config(int side) {
    DenseNetConfig cfg;
    cfg.block_layer_counts = {1, 1, 1, 1};
    cfg.input_height = side;
    cfg.input_width = side;
    return cfg;
}

PreprocessConfig tiny_preprocess(int side) {
    PreprocessConfig pre;
    pre.target_height = side;
    pre.target_width = side;
    return pre;
}

namespace {

struct BundleStorage {
    TempDir dir;
    OverfitBundle bundle;
    std::unique_ptr<TrainedModel> model;
};

BundleStorage& storage() {
    static std::unique_ptr<BundleStorage> s = [] {
        auto st = std::make_unique<BundleStorage>();
        auto& b = st->bundle;
        b.root = st->dir / "fixture";
        FixtureOptions fx;
        fx.counts = uniform_counts(2, 1);
        generate_fixture(b.root, fx);
        b.manifest = scan_directory(b.root);

        TrainingConfig tc;
        tc.learning_rate = 1e-3;
        tc.epochs = 60;
        tc.seed = 42;
        auto train_only = b.manifest;
        std::erase_if(train_only.entries, [](const SampleEntry& e) { return e.split != Split::Train; });
        auto result = train(tiny_config(), tiny_preprocess(), train_only, tc);
        st->model = std::make_unique<TrainedModel>(std::move(result.model));
        b.model_dir = st->dir / "model";
        save_model(*st->model, b.model_dir);
        b.model = st->model.get();
        return st;
    }();
    return *s;
}

}  // namespace

const OverfitBundle& overfit_bundle() { return storage().bundle; }

fs::path fixture_image(const std::string& label) {
    const auto& b = overfit_bundle();
    for (const auto& e : b.manifest.entries) {
        if (e.split == Split::Train && format_label(e.label) == label) return e.image_path;
    }
    throw std::runtime_error("no fixture image for " + label);
}

StubReply StubReply::completion(const std::string& text, const std::string& model) {
    const nlohmann::json doc{
        {"id", "chatcmpl-stub"},
        {"object", "chat.completion"},
        {"model", model},
        {"choices", nlohmann::json::array({{{"index", 0},
                                             {"message", {{"role", "assistant"}, {"content", text}}},
                                             {"finish_reason", "stop"}}})},
        {"usage", {{"prompt_tokens", 120}, {"completion_tokens", 80}, {"total_tokens", 200}}}};
    return StubReply{200, doc.dump(), std::nullopt, std::chrono::milliseconds{0}};
}

StubReply StubReply::error(int status, const std::string& body) {
    return StubReply{status, body, std::nullopt, std::chrono::milliseconds{0}};
}

struct StubLlm::State {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    mutable std::mutex mutex;
    std::vector<StubReply> script;
    StubReply models{200, R"({"object":"list","data":[{"id":"stub-model"}]})", std::nullopt, {}};
    int calls = 0;
    int active = 0;
    int peak = 0;
    std::vector<std::string> bodies;
    std::vector<std::string> auth;
};

namespace {

void send(const StubReply& r, httplib::Response& res) {
    if (r.delay.count() > 0) std::this_thread::sleep_for(r.delay);
    res.status = r.status;
    if (r.retry_after) res.set_header("Retry-After", *r.retry_after);
    res.set_content(r.body, "application/json");
}

}  // namespace

StubLlm::StubLlm(std::vector<StubReply> script) : state_(std::make_unique<State>()) {
    if (script.empty()) throw std::invalid_argument("stub script must not be empty");
    state_->script = std::move(script);
    auto* st = state_.get();
    st->server.Post("/v1/chat/completions", [st](const httplib::Request& req, httplib::Response& res) {
        StubReply reply;
        {
            std::lock_guard lock(st->mutex);
            reply = st->script[std::min<std::size_t>(st->calls, st->script.size() - 1)];
            ++st->calls;
            st->peak = std::max(st->peak, ++st->active);
            st->bodies.push_back(req.body);
            st->auth.push_back(req.get_header_value("Authorization"));
        }
        send(reply, res);
        std::lock_guard lock(st->mutex);
        --st->active;
    });
    st->server.Get("/v1/models", [st](const httplib::Request& req, httplib::Response& res) {
        StubReply reply;
        {
            std::lock_guard lock(st->mutex);
            reply = st->models;
            st->auth.push_back(req.get_header_value("Authorization"));
        }
        send(reply, res);
    });
    st->port = st->server.bind_to_any_port("127.0.0.1");
    if (st->port <= 0) throw std::runtime_error("stub server could not bind");
    st->thread = std::thread([st] { st->server.listen_after_bind(); });
    st->server.wait_until_ready();
}

StubLlm::~StubLlm() {
    state_->server.stop();
    if (state_->thread.joinable()) state_->thread.join();
}

std::string StubLlm::url() const { return fmt::format("http://127.0.0.1:{}/v1/chat/completions", state_->port); }
int StubLlm::port() const { return state_->port; }

int StubLlm::calls() const {
    std::lock_guard lock(state_->mutex);
    return state_->calls;
}

int StubLlm::peak_concurrency() const {
    std::lock_guard lock(state_->mutex);
    return state_->peak;
}

std::vector<std::string> StubLlm::request_bodies() const {
    std::lock_guard lock(state_->mutex);
    return state_->bodies;
}

std::vector<std::string> StubLlm::authorization_headers() const {
    std::lock_guard lock(state_->mutex);
    return state_->auth;
}

void StubLlm::set_models_reply(StubReply reply) {
    std::lock_guard lock(state_->mutex);
    state_->models = std::move(reply);
}

LlmConfig stub_llm_config(const std::string& url) {
    LlmConfig cfg;
    cfg.backend = LlmBackend::Remote;
    cfg.endpoint_url = url;
    cfg.model_name = "stub-model";
    cfg.timeout_seconds = 2.0;
    cfg.backoff_base_seconds = 0.01;
    cfg.backoff_max_seconds = 0.05;
    return cfg;
}

ScopedEnv::ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) previous_ = old;
    if (value) {
        ::setenv(name, value, 1);
    } else {
        ::unsetenv(name);
    }
}

ScopedEnv::~ScopedEnv() {
    if (previous_) {
        ::setenv(name_.c_str(), previous_->c_str(), 1);
    } else {
        ::unsetenv(name_.c_str());
    }
}

}  // namespace imagedx::testing
