#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "taet/losses.hpp"
#include "taet/tensor.hpp"

namespace taet {

/// Immutable labeled sample collection. Features are rows of an [N x dim]
/// tensor. `declared_ir` is 1 for balanced sets.
class Dataset {
public:
    Dataset(Tensor features, std::vector<Label> labels, std::size_t num_classes, double declared_ir = 1.0);

    const Tensor& features() const { return features_; }
    const std::vector<Label>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    std::size_t feature_dim() const { return features_.cols(); }
    std::size_t num_classes() const { return num_classes_; }
    double declared_ir() const { return declared_ir_; }
    const std::vector<std::size_t>& class_counts() const { return class_counts_; }

    /// max(count) / min(non-zero count).
    double observed_ir() const;

    Dataset subset(std::span<const std::size_t> indices, double declared_ir) const;

private:
    Tensor features_;
    std::vector<Label> labels_;
    std::size_t num_classes_;
    double declared_ir_;
    std::vector<std::size_t> class_counts_;
};

/// Exponential long-tail profile: count[i] = round(n_max * ir^(-i/(C-1))).
struct ImbalanceProfile {
    std::size_t num_classes = 10;
    std::size_t n_max = 5000;
    double ir = 1.0;
};

std::vector<std::size_t> longtail_counts(const ImbalanceProfile& profile);

/// Indices into `source` chosen by a seeded per-class subsample without
/// replacement, returned in ascending order.
std::vector<std::size_t> subsample_indices(const Dataset& source, const ImbalanceProfile& profile,
                                           std::uint64_t seed);
Dataset subsample_longtail(const Dataset& source, const ImbalanceProfile& profile, std::uint64_t seed);

struct GaussianMixtureSpec {
    std::size_t num_classes = 5;
    std::size_t dim = 10;
    double class_separation = 4.0;
    std::size_t samples_per_class = 100;
};

/// Balanced Gaussian mixture with unit isotropic noise. Class means sit on
/// scaled coordinate axes (pairwise distance = separation) when C <= dim and
/// on a circle in the first two coordinates otherwise. Features are min-max
/// normalised into [0, 1] per coordinate. Samples are class-major.
Dataset gen_gaussian_mixture(const GaussianMixtureSpec& spec, std::uint64_t seed);

/// Splits off the first `per_class` samples of each class (in dataset order).
struct DatasetSplit {
    Dataset head;
    Dataset rest;
};
DatasetSplit split_per_class(const Dataset& data, std::size_t per_class);

// ---------------------------------------------------------------------------
// External files.

enum class ExternalFormat { idx, csv };

struct IdxArray {
    std::uint8_t type_code = 0;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;
};

/// Reads an IDX file (big-endian magic, dims, payload). Only unsigned-byte
/// payloads (type 0x08) are supported.
IdxArray read_idx(const std::filesystem::path& path);

struct LoadedDataset {
    Dataset data;
    /// original label -> contiguous label
    std::map<long long, Label> label_mapping;
    bool remapped = false;
};

/// CSV: header row, label column first. IDX: `path` holds the samples and
/// `labels_path` the matching 0x00000801 label file. Features are scaled into
/// [0, 1] (ubyte / 255 for IDX, per-column min-max for CSV).
LoadedDataset load_external(const std::filesystem::path& path, ExternalFormat format,
                            const std::filesystem::path& labels_path = {});

/// Reads a CSV written by save_csv as-is: no rescaling and no label remapping.
Dataset read_dataset_csv(const std::filesystem::path& path, std::size_t num_classes, double declared_ir = 1.0);

/// Writes the CSV schema read by load_external: "label,f0,f1,...".
void save_csv(const Dataset& data, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Batching.

struct Batch {
    Tensor inputs;
    std::vector<Label> labels;
    std::vector<std::size_t> indices;
};

/// Per-epoch permutation keyed by (seed, epoch) cut into batches; the last
/// partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);
Batch gather(const Dataset& data, std::span<const std::size_t> indices);
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

}  // namespace taet
