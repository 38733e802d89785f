#include <random>

#include <benchmark/benchmark.h>

#include "imagedx/densenet.hpp"
#include "imagedx/label.hpp"
#include "imagedx/metrics.hpp"
#include "imagedx/nn/layers.hpp"
#include "imagedx/prompt.hpp"
#include "imagedx/report.hpp"

using namespace imagedx;

static void BM_ParseLabel(benchmark::State& state) {
    const auto strings = catalog().strings();
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_label(strings[i++ % strings.size()]));
    }
}
BENCHMARK(BM_ParseLabel);

static void BM_MetricsFromConfusion(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    std::vector<std::size_t> truths(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
        truths[i] = rng() % kNumClasses;
        preds[i] = rng() % 4 == 0 ? rng() % kNumClasses : truths[i];
    }
    for (auto _ : state) {
        const auto cm = confusion_matrix(truths, preds);
        benchmark::DoNotOptimize(metrics_from_confusion(cm, Averaging::Weighted));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_MetricsFromConfusion)->Arg(1000)->Arg(30599);

static void BM_Conv3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    nn::Conv2d conv(c, 32, 3, 1, 1);
    std::mt19937_64 rng(2);
    conv.init(rng);
    nn::Tensor x(1, c, 28, 28, 0.5f);
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
}
BENCHMARK(BM_Conv3x3)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_ForwardTiny32(benchmark::State& state) {
    DenseNetConfig cfg;
    cfg.block_layer_counts = {1, 1, 1, 1};
    cfg.input_height = cfg.input_width = 32;
    DenseNet net(build_model(cfg), 3);
    nn::Tensor x(static_cast<int>(state.range(0)), 3, 32, 32, 0.1f);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_ForwardTiny32)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_ForwardDenseNet121(benchmark::State& state) {
    DenseNet net(build_model(DenseNetConfig{}), 3);
    nn::Tensor x(1, 3, 224, 224, 0.1f);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_ForwardDenseNet121)->Unit(benchmark::kMillisecond)->Iterations(3);

static void BM_GeneratePromptAndSplit(benchmark::State& state) {
    const auto label = catalog().label_at(7);
    for (auto _ : state) {
        const auto prompt = generate_prompt(label);
        benchmark::DoNotOptimize(split_sections(prompt.text));
    }
}
BENCHMARK(BM_GeneratePromptAndSplit);
BENCHMARK_MAIN();
