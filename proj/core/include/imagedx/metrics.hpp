#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "imagedx/model.hpp"

namespace imagedx {

/// K x K counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = kNumClasses);

    std::size_t num_classes() const noexcept { return k_; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
    void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);
    void merge(const ConfusionMatrix& other);

    std::uint64_t total() const noexcept;
    std::uint64_t trace() const noexcept;
    std::uint64_t row_sum(std::size_t truth) const noexcept;
    std::uint64_t col_sum(std::size_t pred) const noexcept;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

enum class Averaging { Macro, Weighted };

std::string_view to_string(Averaging a) noexcept;

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
    /// Set when the metric's denominator was zero and 0 was substituted.
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
};

struct EvaluationMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    /// Headline values under `averaging`.
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    Averaging averaging = Averaging::Weighted;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::uint64_t samples = 0;
};

/// -ln(max(probs[true_class], 1e-12)). Throws IndexError.
double cross_entropy_loss(const ClassProbabilities& probs, std::size_t true_class);
double cross_entropy_loss(std::span<const double> probs, std::size_t true_class);

/// Throws LengthMismatch or IndexError.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                 std::size_t num_classes = kNumClasses);

/// Throws EmptyMatrix when the matrix holds no samples. `loss` is left at 0.
EvaluationMetrics metrics_from_confusion(const ConfusionMatrix& cm, Averaging averaging = Averaging::Weighted);

/// Metrics file: line-oriented key=value text followed by the matrix.
/// The exact layout is documented in docs/formats.md.
void write_metrics_file(const EvaluationMetrics& metrics, const ConfusionMatrix& cm, std::string_view split,
                        const std::filesystem::path& file);
std::string format_metrics(const EvaluationMetrics& metrics, const ConfusionMatrix& cm, std::string_view split);

struct MetricsFile {
    std::map<std::string, std::string> values;
    ConfusionMatrix matrix;
};
MetricsFile read_metrics_file(const std::filesystem::path& file);

}  // namespace imagedx
