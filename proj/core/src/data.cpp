#include "taet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "taet/rng.hpp"

namespace taet {

Dataset::Dataset(Tensor features, std::vector<Label> labels, std::size_t num_classes, double declared_ir)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      declared_ir_(declared_ir),
      class_counts_(num_classes, 0) {
    if (num_classes_ == 0) throw std::invalid_argument("dataset needs at least one class");
    if (features_.rank() != 2 || features_.rows() != labels_.size()) {
        throw std::invalid_argument("dataset features " + features_.shape_string() + " do not match " +
                                    std::to_string(labels_.size()) + " labels");
    }
    if (!(declared_ir_ >= 1.0)) throw std::invalid_argument("declared imbalance ratio must be >= 1");
    for (Label y : labels_) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
            throw std::invalid_argument("dataset label " + std::to_string(y) + " out of range");
        }
        ++class_counts_[static_cast<std::size_t>(y)];
    }
}

double Dataset::observed_ir() const {
    std::size_t hi = 0;
    std::size_t lo = std::numeric_limits<std::size_t>::max();
    for (std::size_t c : class_counts_) {
        if (c == 0) continue;
        hi = std::max(hi, c);
        lo = std::min(lo, c);
    }
    if (hi == 0) return 1.0;
    return static_cast<double>(hi) / static_cast<double>(lo);
}

Dataset Dataset::subset(std::span<const std::size_t> indices, double declared_ir) const {
    const std::size_t dim = feature_dim();
    std::vector<double> feats;
    feats.reserve(indices.size() * dim);
    std::vector<Label> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw std::out_of_range("dataset subset index out of range");
        auto r = features_.row(i);
        feats.insert(feats.end(), r.begin(), r.end());
        labels.push_back(labels_[i]);
    }
    if (indices.empty()) throw std::invalid_argument("dataset subset is empty");
    return Dataset(Tensor({indices.size(), dim}, std::move(feats)), std::move(labels), num_classes_, declared_ir);
}

std::vector<std::size_t> longtail_counts(const ImbalanceProfile& profile) {
    if (profile.num_classes < 2) throw std::invalid_argument("imbalance profile needs at least 2 classes");
    if (profile.n_max < 1) throw std::invalid_argument("imbalance profile n_max must be at least 1");
    if (!(profile.ir >= 1.0)) throw std::invalid_argument("imbalance ratio must be >= 1");
    const double last = static_cast<double>(profile.num_classes - 1);
    std::vector<std::size_t> counts(profile.num_classes);
    for (std::size_t i = 0; i < profile.num_classes; ++i) {
        const double v =
            static_cast<double>(profile.n_max) * std::pow(profile.ir, -static_cast<double>(i) / last);
        const auto c = static_cast<long long>(std::llround(v));
        if (c < 1) {
            throw std::invalid_argument("imbalance profile gives class " + std::to_string(i) + " zero samples");
        }
        counts[i] = static_cast<std::size_t>(c);
    }
    return counts;
}

std::vector<std::size_t> subsample_indices(const Dataset& source, const ImbalanceProfile& profile,
                                           std::uint64_t seed) {
    if (profile.num_classes != source.num_classes()) {
        throw std::invalid_argument("profile class count does not match source dataset");
    }
    const auto counts = longtail_counts(profile);
    std::vector<std::vector<std::size_t>> by_class(source.num_classes());
    for (std::size_t i = 0; i < source.size(); ++i) {
        by_class[static_cast<std::size_t>(source.labels()[i])].push_back(i);
    }
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& pool = by_class[c];
        if (pool.size() < counts[c]) {
            throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                                        " source samples, profile needs " + std::to_string(counts[c]));
        }
        auto rng = make_rng({seed, kSubsampleStream, c});
        std::shuffle(pool.begin(), pool.end(), rng);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(counts[c]));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

Dataset subsample_longtail(const Dataset& source, const ImbalanceProfile& profile, std::uint64_t seed) {
    const auto idx = subsample_indices(source, profile, seed);
    return source.subset(idx, profile.ir);
}

namespace {

void minmax_normalize(Tensor& feats) {
    const std::size_t rows = feats.rows();
    const std::size_t cols = feats.cols();
    for (std::size_t j = 0; j < cols; ++j) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t i = 0; i < rows; ++i) {
            lo = std::min(lo, feats(i, j));
            hi = std::max(hi, feats(i, j));
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < rows; ++i) {
            feats(i, j) = range > 0 ? (feats(i, j) - lo) / range : 0.0;
        }
    }
}

}  // namespace

Dataset gen_gaussian_mixture(const GaussianMixtureSpec& spec, std::uint64_t seed) {
    if (spec.num_classes < 2) throw std::invalid_argument("gaussian mixture needs at least 2 classes");
    if (spec.dim < 2) throw std::invalid_argument("gaussian mixture needs dim >= 2");
    if (spec.samples_per_class < 1) throw std::invalid_argument("gaussian mixture needs samples_per_class >= 1");
    if (!(spec.class_separation >= 0)) throw std::invalid_argument("class separation must be non-negative");

    const std::size_t C = spec.num_classes;
    const std::size_t d = spec.dim;
    Tensor means = Tensor::matrix(C, d);
    if (C <= d) {
        const double scale = spec.class_separation / std::numbers::sqrt2;
        for (std::size_t c = 0; c < C; ++c) means(c, c) = scale;
    } else {
        const double radius = spec.class_separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(C)));
        for (std::size_t c = 0; c < C; ++c) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
            means(c, 0) = radius * std::cos(a);
            means(c, 1) = radius * std::sin(a);
        }
    }

    const std::size_t n = C * spec.samples_per_class;
    Tensor feats = Tensor::matrix(n, d);
    std::vector<Label> labels(n);
    auto rng = make_rng({seed, kMixtureStream});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            const std::size_t i = c * spec.samples_per_class + s;
            labels[i] = static_cast<Label>(c);
            for (std::size_t j = 0; j < d; ++j) feats(i, j) = means(c, j) + noise(rng);
        }
    }
    minmax_normalize(feats);
    return Dataset(std::move(feats), std::move(labels), C, 1.0);
}

DatasetSplit split_per_class(const Dataset& data, std::size_t per_class) {
    std::vector<std::size_t> taken(data.num_classes(), 0);
    std::vector<std::size_t> head;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto c = static_cast<std::size_t>(data.labels()[i]);
        if (taken[c] < per_class) {
            ++taken[c];
            head.push_back(i);
        } else {
            rest.push_back(i);
        }
    }
    for (std::size_t c = 0; c < taken.size(); ++c) {
        if (taken[c] < per_class) {
            throw std::invalid_argument("class " + std::to_string(c) + " has only " + std::to_string(taken[c]) +
                                        " samples, split needs " + std::to_string(per_class));
        }
    }
    return {data.subset(head, 1.0), data.subset(rest, data.declared_ir())};
}

// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t pos) {
    return (std::uint32_t{b[pos]} << 24) | (std::uint32_t{b[pos + 1]} << 16) | (std::uint32_t{b[pos + 2]} << 8) |
           std::uint32_t{b[pos + 3]};
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    const std::string where = path.string() + ": ";
    if (bytes.size() < 4) {
        throw std::runtime_error(where + "IDX header truncated at byte " + std::to_string(bytes.size()) +
                                 ", expected 4 magic bytes");
    }
    if (bytes[0] != 0 || bytes[1] != 0) throw std::runtime_error(where + "bad IDX magic at byte 0");
    IdxArray out;
    out.type_code = bytes[2];
    if (out.type_code != 0x08) {
        throw std::runtime_error(where + "unsupported IDX element type 0x" + std::to_string(out.type_code) +
                                 " at byte 2 (only 0x08 unsigned byte)");
    }
    const std::size_t ndims = bytes[3];
    if (ndims == 0) throw std::runtime_error(where + "IDX declares zero dimensions at byte 3");
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header) {
        throw std::runtime_error(where + "IDX header truncated: expected " + std::to_string(header) +
                                 " bytes, got " + std::to_string(bytes.size()));
    }
    std::size_t payload = 1;
    for (std::size_t k = 0; k < ndims; ++k) {
        out.dims.push_back(read_be32(bytes, 4 + 4 * k));
        payload *= out.dims.back();
    }
    const std::size_t actual = bytes.size() - header;
    if (actual != payload) {
        throw std::runtime_error(where + "IDX payload size mismatch: expected " + std::to_string(payload) +
                                 " bytes after header at byte " + std::to_string(header) + ", got " +
                                 std::to_string(actual));
    }
    out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

namespace {

LoadedDataset remap_labels(std::vector<double> feats, std::size_t dim, const std::vector<long long>& raw) {
    const std::set<long long> distinct(raw.begin(), raw.end());
    std::map<long long, Label> mapping;
    Label next = 0;
    for (long long v : distinct) mapping[v] = next++;
    const bool remapped = *distinct.begin() != 0 || *distinct.rbegin() != next - 1;
    std::vector<Label> labels;
    labels.reserve(raw.size());
    for (long long v : raw) labels.push_back(mapping.at(v));
    return {Dataset(Tensor({raw.size(), dim}, std::move(feats)), std::move(labels), distinct.size()),
            std::move(mapping), remapped};
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

struct CsvRows {
    std::vector<double> features;
    std::vector<long long> labels;
    std::size_t dim = 0;
};

CsvRows parse_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const std::string where = path.string() + ":";
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(where + "1: missing header row");
    const auto header = split_fields(line);
    if (header.size() < 2 || trim(header[0]) != "label") {
        throw std::runtime_error(where + "1: header must start with 'label' followed by feature columns");
    }
    CsvRows rows;
    rows.dim = header.size() - 1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw std::runtime_error(where + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, found " +
                                     std::to_string(fields.size()));
        }
        const std::string lab = trim(fields[0]);
        long long y = 0;
        auto [p, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), y);
        if (ec != std::errc() || p != lab.data() + lab.size()) {
            throw std::runtime_error(where + std::to_string(line_no) + ": label '" + lab + "' is not an integer");
        }
        rows.labels.push_back(y);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            const std::string f = trim(fields[j]);
            double v = 0.0;
            auto [q, ec2] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec2 != std::errc() || q != f.data() + f.size() || !std::isfinite(v)) {
                throw std::runtime_error(where + std::to_string(line_no) + ": column " + std::to_string(j + 1) +
                                         " value '" + f + "' is not a finite number");
            }
            rows.features.push_back(v);
        }
    }
    if (rows.labels.empty()) throw std::runtime_error(where + std::to_string(line_no) + ": no data rows");
    return rows;
}

LoadedDataset load_csv(const std::filesystem::path& path) {
    CsvRows rows = parse_csv(path);
    Tensor t({rows.labels.size(), rows.dim}, std::move(rows.features));
    minmax_normalize(t);
    return remap_labels(std::vector<double>(t.values()), rows.dim, rows.labels);
}

LoadedDataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels_path) {
    if (labels_path.empty()) throw std::invalid_argument("IDX ingestion needs a labels file");
    const IdxArray img = read_idx(images);
    const IdxArray lab = read_idx(labels_path);
    if (lab.dims.size() != 1) throw std::runtime_error(labels_path.string() + ": label file must be 1-D");
    if (lab.dims[0] != img.dims[0]) {
        throw std::runtime_error("IDX sample count " + std::to_string(img.dims[0]) + " does not match label count " +
                                 std::to_string(lab.dims[0]));
    }
    const std::size_t n = img.dims[0];
    if (n == 0) throw std::runtime_error(images.string() + ": IDX holds no samples");
    const std::size_t dim = img.values.size() / n;
    std::vector<double> feats(img.values.size());
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = img.values[i] / 255.0;
    std::vector<long long> raw(lab.values.begin(), lab.values.end());
    return remap_labels(std::move(feats), dim, raw);
}

}  // namespace

LoadedDataset load_external(const std::filesystem::path& path, ExternalFormat format,
                            const std::filesystem::path& labels_path) {
    switch (format) {
        case ExternalFormat::csv:
            return load_csv(path);
        case ExternalFormat::idx:
            return load_idx_pair(path, labels_path);
    }
    throw std::invalid_argument("unknown external format");
}

Dataset read_dataset_csv(const std::filesystem::path& path, std::size_t num_classes, double declared_ir) {
    CsvRows rows = parse_csv(path);
    std::vector<Label> labels;
    labels.reserve(rows.labels.size());
    for (long long y : rows.labels) {
        if (y < 0 || y >= static_cast<long long>(num_classes)) {
            throw std::runtime_error(path.string() + ": label " + std::to_string(y) + " outside [0, " +
                                     std::to_string(num_classes) + ")");
        }
        labels.push_back(static_cast<Label>(y));
    }
    const std::size_t n = labels.size();
    return Dataset(Tensor({n, rows.dim}, std::move(rows.features)), std::move(labels), num_classes, declared_ir);
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "label";
    for (std::size_t j = 0; j < data.feature_dim(); ++j) out << ",f" << j;
    out << '\n';
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data.labels()[i];
        for (double v : data.features().row(i)) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    std::vector<std::size_t> perm(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
    auto rng = make_rng({seed, kShuffleStream, epoch});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < dataset_size; start += batch_size) {
        const std::size_t end = std::min(dataset_size, start + batch_size);
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
    const std::size_t dim = data.feature_dim();
    Batch b{Tensor::matrix(indices.size(), dim), {}, {indices.begin(), indices.end()}};
    b.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        auto src = data.features().row(indices[k]);
        std::copy(src.begin(), src.end(), b.inputs.row(k).begin());
        b.labels.push_back(data.labels()[indices[k]]);
    }
    return b;
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<Batch> out;
    for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) out.push_back(gather(data, idx));
    return out;
}

}  // namespace taet
