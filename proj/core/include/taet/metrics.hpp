#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taet/attacks.hpp"
#include "taet/data.hpp"
#include "taet/model.hpp"

namespace taet {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);

    void add(Label truth, Label predicted);
    std::size_t num_classes() const { return classes_; }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
    std::uint64_t row_total(std::size_t truth) const;
    std::uint64_t total() const;
    std::uint64_t trace() const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_from_predictions(std::span<const Label> truth, std::span<const Label> predicted,
                                           std::size_t num_classes);

/// Argmax predictions (ties to the lowest index) tallied over the dataset,
/// evaluated in fixed-size chunks.
ConfusionMatrix confusion(const Model& model, const Dataset& data);

/// Predictions on adversarial inputs generated per evaluation chunk; sample
/// ids are dataset indices so the result does not depend on chunking.
ConfusionMatrix attacked_confusion(const Model& model, const Dataset& data, const AttackSpec& attack);

/// Per-class recall TP/(TP+FN); nullopt for classes without test samples.
std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& cm);

/// Mean recall over classes with at least one sample. Classes without samples
/// are excluded and a warning is printed to stderr.
double balanced_accuracy(const ConfusionMatrix& cm);
double standard_accuracy(const ConfusionMatrix& cm);

double balanced_robustness(const Model& model, const Dataset& data, const AttackSpec& attack);

struct AttackedMetrics {
    std::string name;
    ConfusionMatrix cm;
    double balanced_robustness;
    double standard_robustness;
    std::vector<std::optional<double>> per_class;
    double tail_robustness;
};

struct MetricsReport {
    std::size_t num_classes = 0;
    std::vector<std::size_t> test_class_counts;
    std::string test_distribution;
    std::size_t tail_k = 0;

    ConfusionMatrix clean_cm{2};
    double balanced_accuracy = 0.0;
    double standard_accuracy = 0.0;
    std::vector<std::optional<double>> per_class_accuracy;
    double tail_accuracy = 0.0;

    std::vector<AttackedMetrics> attacks;
};

/// Mean of per-class rates over the last k classes that have samples.
double tail_mean(std::span<const std::optional<double>> per_class, std::size_t k);

/// Clean metrics plus one attacked matrix per attack. tail_k == 0 selects C/2.
MetricsReport report(const Model& model, const Dataset& data, std::span<const AttackSpec> attacks,
                     std::size_t tail_k = 0);

std::string report_to_json(const MetricsReport& r);
/// One row per class: class,count,clean_recall,<attack>_recall...
void write_report_csv(const MetricsReport& r, const std::filesystem::path& path);

}  // namespace taet
