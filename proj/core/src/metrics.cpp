#include "imagedx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace imagedx {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
    if (truth >= k_ || pred >= k_) {
        throw IndexError(fmt::format("class pair ({}, {}) outside a {}-class matrix", truth, pred, k_));
    }
    counts_[truth * k_ + pred] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw LengthMismatch("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const noexcept {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += counts_[i * k_ + i];
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const noexcept {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += counts_[truth * k_ + p];
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const noexcept {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += counts_[t * k_ + pred];
    return s;
}

std::string_view to_string(Averaging a) noexcept { return a == Averaging::Macro ? "macro" : "weighted"; }

double cross_entropy_loss(std::span<const double> probs, std::size_t true_class) {
    if (true_class >= probs.size()) {
        throw IndexError(fmt::format("true class {} outside [0, {})", true_class, probs.size()));
    }
    return -std::log(std::max(probs[true_class], 1e-12));
}

double cross_entropy_loss(const ClassProbabilities& probs, std::size_t true_class) {
    return cross_entropy_loss(probs.probs, true_class);
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                 std::size_t num_classes) {
    if (truths.size() != preds.size()) {
        throw LengthMismatch(fmt::format("{} truths but {} predictions", truths.size(), preds.size()));
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truths.size(); ++i) cm.add(truths[i], preds[i]);
    return cm;
}

EvaluationMetrics metrics_from_confusion(const ConfusionMatrix& cm, Averaging averaging) {
    const auto total = cm.total();
    if (total == 0) throw EmptyMatrix("confusion matrix holds no samples");

    EvaluationMetrics m;
    m.averaging = averaging;
    m.samples = total;
    m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

    const auto k = cm.num_classes();
    m.per_class.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        auto& pc = m.per_class[c];
        const auto tp = static_cast<double>(cm.at(c, c));
        const auto predicted = static_cast<double>(cm.col_sum(c));
        pc.support = cm.row_sum(c);
        if (predicted > 0) {
            pc.precision = tp / predicted;
        } else {
            pc.precision_undefined = true;
        }
        if (pc.support > 0) {
            pc.recall = tp / static_cast<double>(pc.support);
        } else {
            pc.recall_undefined = true;
        }
        if (pc.precision + pc.recall > 0) {
            pc.f1 = 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall);
        } else {
            pc.f1_undefined = true;
        }
        m.macro_precision += pc.precision;
        m.macro_recall += pc.recall;
        m.macro_f1 += pc.f1;
        const double w = static_cast<double>(pc.support);
        m.weighted_precision += w * pc.precision;
        m.weighted_recall += w * pc.recall;
        m.weighted_f1 += w * pc.f1;
    }
    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(total);
    m.macro_precision /= kd;
    m.macro_recall /= kd;
    m.macro_f1 /= kd;
    m.weighted_precision /= nd;
    m.weighted_recall /= nd;
    m.weighted_f1 /= nd;

    if (averaging == Averaging::Macro) {
        m.precision = m.macro_precision;
        m.recall = m.macro_recall;
        m.f1 = m.macro_f1;
    } else {
        m.precision = m.weighted_precision;
        m.recall = m.weighted_recall;
        m.f1 = m.weighted_f1;
    }
    return m;
}

std::string format_metrics(const EvaluationMetrics& m, const ConfusionMatrix& cm, std::string_view split) {
    std::string out;
    auto line = [&out](std::string_view key, const auto& value) { out += fmt::format("{}={}\n", key, value); };
    auto real = [&line](std::string_view key, double value) { line(key, fmt::format("{:.6f}", value)); };

    out += "# imagedx-metrics v1\n";
    line("split", split);
    line("samples", m.samples);
    line("averaging", to_string(m.averaging));
    real("loss", m.loss);
    real("accuracy", m.accuracy);
    real("precision", m.precision);
    real("recall", m.recall);
    real("f1", m.f1);
    real("macro_precision", m.macro_precision);
    real("macro_recall", m.macro_recall);
    real("macro_f1", m.macro_f1);
    real("weighted_precision", m.weighted_precision);
    real("weighted_recall", m.weighted_recall);
    real("weighted_f1", m.weighted_f1);

    const auto& cat = catalog();
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto& pc = m.per_class[c];
        const auto prefix = fmt::format("class.{:02d}", c);
        line(prefix + ".label", c < cat.size() && cm.num_classes() == cat.size() ? format_label(cat.label_at(c))
                                                                                 : fmt::format("class-{}", c));
        real(prefix + ".precision", pc.precision);
        real(prefix + ".recall", pc.recall);
        real(prefix + ".f1", pc.f1);
        line(prefix + ".support", pc.support);
        std::string flags;
        if (pc.precision_undefined) flags += "precision,";
        if (pc.recall_undefined) flags += "recall,";
        if (pc.f1_undefined) flags += "f1,";
        if (!flags.empty()) {
            flags.pop_back();
            line(prefix + ".undefined", flags);
        }
    }

    line("confusion_matrix.classes", cm.num_classes());
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
        std::string row;
        for (std::size_t p = 0; p < cm.num_classes(); ++p) {
            if (p) row.push_back(' ');
            row += std::to_string(cm.at(t, p));
        }
        line(fmt::format("confusion_matrix.row.{:02d}", t), row);
    }
    return out;
}

void write_metrics_file(const EvaluationMetrics& metrics, const ConfusionMatrix& cm, std::string_view split,
                        const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << format_metrics(metrics, cm, split);
    if (!out.flush()) throw DiskError("cannot write metrics file " + file.string());
}

MetricsFile read_metrics_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DiskError("cannot open metrics file " + file.string());
    MetricsFile result;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed metrics line: " + line);
        result.values.emplace(line.substr(0, eq), line.substr(eq + 1));
    }
    const auto it = result.values.find("confusion_matrix.classes");
    if (it == result.values.end()) throw ConfigError("metrics file lacks confusion_matrix.classes");
    const auto k = static_cast<std::size_t>(std::stoul(it->second));
    result.matrix = ConfusionMatrix(k);
    for (std::size_t t = 0; t < k; ++t) {
        const auto row = result.values.find(fmt::format("confusion_matrix.row.{:02d}", t));
        if (row == result.values.end()) throw ConfigError(fmt::format("metrics file lacks matrix row {}", t));
        std::istringstream cells(row->second);
        for (std::size_t p = 0; p < k; ++p) {
            std::uint64_t v = 0;
            if (!(cells >> v)) throw ConfigError(fmt::format("matrix row {} is short", t));
            result.matrix.add(t, p, v);
        }
    }
    return result;
}

}  // namespace imagedx
