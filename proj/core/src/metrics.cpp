#include "taet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace taet {

namespace {
constexpr std::size_t kEvalChunk = 256;
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : classes_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(Label truth, Label predicted) {
    const auto c = static_cast<Label>(classes_);
    if (truth < 0 || truth >= c || predicted < 0 || predicted >= c) {
        throw std::invalid_argument("confusion matrix label out of range");
    }
    ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
    return s;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < classes_; ++c) s += at(c, c);
    return s;
}

ConfusionMatrix confusion_from_predictions(std::span<const Label> truth, std::span<const Label> predicted,
                                           std::size_t num_classes) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("prediction count mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
    return cm;
}

namespace {

template <typename InputsFor>
ConfusionMatrix chunked_confusion(const Model& model, const Dataset& data, InputsFor&& inputs_for) {
    if (data.num_classes() != model.spec().num_classes) {
        throw std::invalid_argument("dataset and model disagree on class count");
    }
    ConfusionMatrix cm(data.num_classes());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
        const std::size_t end = std::min(data.size(), start + kEvalChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = gather(data, idx);
        const auto pred = predicted_classes(forward(model, inputs_for(b)));
        for (std::size_t k = 0; k < pred.size(); ++k) cm.add(b.labels[k], pred[k]);
    }
    return cm;
}

}  // namespace

ConfusionMatrix confusion(const Model& model, const Dataset& data) {
    return chunked_confusion(model, data, [](const Batch& b) { return b.inputs; });
}

ConfusionMatrix attacked_confusion(const Model& model, const Dataset& data, const AttackSpec& attack) {
    return chunked_confusion(model, data, [&](const Batch& b) {
        return run_attack(model, b.inputs, b.labels, attack, b.indices);
    });
}

std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(cm.num_classes());
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const auto n = cm.row_total(c);
        if (n > 0) out[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    }
    return out;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
    const auto recall = per_class_recall(cm);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < recall.size(); ++c) {
        if (!recall[c]) {
            std::cerr << "warning: class " << c << " has no test samples; excluded from balanced metrics\n";
            continue;
        }
        sum += *recall[c];
        ++present;
    }
    if (present == 0) throw std::invalid_argument("balanced accuracy of an empty confusion matrix");
    return sum / static_cast<double>(present);
}

double standard_accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw std::invalid_argument("standard accuracy of an empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double balanced_robustness(const Model& model, const Dataset& data, const AttackSpec& attack) {
    return balanced_accuracy(attacked_confusion(model, data, attack));
}

double tail_mean(std::span<const std::optional<double>> per_class, std::size_t k) {
    double sum = 0.0;
    std::size_t n = 0;
    const std::size_t first = per_class.size() > k ? per_class.size() - k : 0;
    for (std::size_t c = first; c < per_class.size(); ++c) {
        if (per_class[c]) {
            sum += *per_class[c];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

MetricsReport report(const Model& model, const Dataset& data, std::span<const AttackSpec> attacks,
                     std::size_t tail_k) {
    MetricsReport r;
    r.num_classes = data.num_classes();
    r.test_class_counts = data.class_counts();
    r.test_distribution = data.observed_ir() == 1.0 ? "balanced" : "imbalanced";
    r.tail_k = tail_k == 0 ? std::max<std::size_t>(1, r.num_classes / 2) : std::min(tail_k, r.num_classes);

    r.clean_cm = confusion(model, data);
    r.balanced_accuracy = balanced_accuracy(r.clean_cm);
    r.standard_accuracy = standard_accuracy(r.clean_cm);
    r.per_class_accuracy = per_class_recall(r.clean_cm);
    r.tail_accuracy = tail_mean(r.per_class_accuracy, r.tail_k);

    for (const auto& spec : attacks) {
        ConfusionMatrix cm = attacked_confusion(model, data, spec);
        auto per_class = per_class_recall(cm);
        const double tail = tail_mean(per_class, r.tail_k);
        const double bal = balanced_accuracy(cm);
        const double std_rob = standard_accuracy(cm);
        r.attacks.push_back({spec.name, std::move(cm), bal, std_rob, std::move(per_class), tail});
    }
    return r;
}

namespace {

nlohmann::ordered_json cm_json(const ConfusionMatrix& cm) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t p = 0; p < cm.num_classes(); ++p) row.push_back(cm.at(t, p));
        rows.push_back(row);
    }
    return rows;
}

nlohmann::ordered_json rates_json(const std::vector<std::optional<double>>& v) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& x : v) {
        if (x) {
            a.push_back(*x);
        } else {
            a.push_back(nullptr);
        }
    }
    return a;
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["num_classes"] = r.num_classes;
    j["test_class_counts"] = r.test_class_counts;
    j["test_distribution"] = r.test_distribution;
    j["tail_k"] = r.tail_k;
    j["clean"] = {{"balanced_accuracy", r.balanced_accuracy},
                  {"standard_accuracy", r.standard_accuracy},
                  {"tail_accuracy", r.tail_accuracy},
                  {"per_class_accuracy", rates_json(r.per_class_accuracy)},
                  {"confusion", cm_json(r.clean_cm)}};
    auto attacks = nlohmann::ordered_json::array();
    for (const auto& a : r.attacks) {
        attacks.push_back({{"name", a.name},
                           {"balanced_robustness", a.balanced_robustness},
                           {"standard_robustness", a.standard_robustness},
                           {"tail_robustness", a.tail_robustness},
                           {"per_class_robustness", rates_json(a.per_class)},
                           {"confusion", cm_json(a.cm)}});
    }
    j["attacks"] = attacks;
    return j.dump(2) + "\n";
}

void write_report_csv(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "class,count,clean_recall";
    for (const auto& a : r.attacks) out << ',' << a.name << "_recall";
    out << '\n';
    auto cell = [&](const std::optional<double>& v) {
        if (v) out << *v;
    };
    for (std::size_t c = 0; c < r.num_classes; ++c) {
        out << c << ',' << r.test_class_counts[c] << ',';
        cell(r.per_class_accuracy[c]);
        for (const auto& a : r.attacks) {
            out << ',';
            cell(a.per_class[c]);
        }
        out << '\n';
    }
}

}  // namespace taet
