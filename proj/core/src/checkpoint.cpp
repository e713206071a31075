#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

#include "taet/digest.hpp"
#include "taet/trainer.hpp"

namespace taet {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::size_t kFixedBytes = 112;

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > bytes_.size()) throw std::runtime_error("checkpoint truncated");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void put_params(Writer& w, const LayerParams& layers) {
    for (const auto& l : layers) {
        for (double v : l.weight.data()) w.put(v);
        for (double v : l.bias.data()) w.put(v);
    }
}

void get_params(Reader& r, LayerParams& layers) {
    for (auto& l : layers) {
        for (double& v : l.weight.data()) v = r.get<double>();
        for (double& v : l.bias.data()) v = r.get<double>();
    }
}

}  // namespace

std::size_t checkpoint_size(const ModelSpec& spec, std::size_t param_count) {
    return kFixedBytes + 8 * spec.hidden_dims.size() + 16 * param_count;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const ModelSpec& spec = state.model.spec();
    Writer w;
    for (char c : kMagic) w.put(c);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(spec.activation));
    w.put(static_cast<std::uint64_t>(spec.input_dim));
    w.put(static_cast<std::uint64_t>(spec.num_classes));
    w.put(static_cast<std::uint64_t>(spec.hidden_dims.size()));
    for (auto h : spec.hidden_dims) w.put(static_cast<std::uint64_t>(h));
    w.put(static_cast<std::int64_t>(state.next_epoch));
    w.put(state.optimizer.learning_rate);
    w.put(state.optimizer.momentum);
    w.put(state.optimizer.weight_decay);
    w.put(static_cast<std::uint64_t>(state.model.parameter_count()));
    put_params(w, state.model.layers());
    put_params(w, state.optimizer.velocity);
    const Sha256 digest = sha256(w.bytes);
    w.bytes.insert(w.bytes.end(), digest.begin(), digest.end());

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const std::string where = path.string() + ": ";
    if (bytes.size() < kFixedBytes || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(where + "not a checkpoint file or truncated");
    }
    const std::size_t body = bytes.size() - 32;
    const Sha256 expected = sha256(std::span<const std::uint8_t>(bytes).first(body));
    if (std::memcmp(expected.data(), bytes.data() + body, 32) != 0) {
        throw std::runtime_error(where + "checksum mismatch (file corrupt or truncated)");
    }
    Reader r(std::span<const std::uint8_t>(bytes).first(body));
    r.get<std::uint64_t>();  // magic
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error(where + "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
    ModelSpec spec;
    const auto act = r.get<std::uint32_t>();
    if (act != static_cast<std::uint32_t>(Activation::relu)) throw std::runtime_error(where + "unknown activation");
    spec.input_dim = r.get<std::uint64_t>();
    spec.num_classes = r.get<std::uint64_t>();
    const auto hidden = r.get<std::uint64_t>();
    if (hidden > (body - r.position()) / 8) throw std::runtime_error(where + "corrupt hidden layer count");
    for (std::uint64_t k = 0; k < hidden; ++k) spec.hidden_dims.push_back(r.get<std::uint64_t>());
    spec.validate();
    const auto next_epoch = r.get<std::int64_t>();
    const double lr = r.get<double>();
    const double momentum = r.get<double>();
    const double wd = r.get<double>();
    const auto param_count = r.get<std::uint64_t>();

    // Shapes come from the spec; the zero model is overwritten below.
    std::vector<Layer> layers;
    std::size_t in_dim = spec.input_dim;
    for (std::size_t k = 0; k <= spec.hidden_dims.size(); ++k) {
        const std::size_t out = k < spec.hidden_dims.size() ? spec.hidden_dims[k] : spec.num_classes;
        layers.push_back({Tensor::matrix(out, in_dim), Tensor::vector(out)});
        in_dim = out;
    }
    Model model(spec, std::move(layers));
    if (model.parameter_count() != param_count || bytes.size() != checkpoint_size(spec, param_count)) {
        throw std::runtime_error(where + "parameter count does not match architecture");
    }
    get_params(r, model.mutable_layers());
    OptimizerState opt{lr, momentum, wd, zeros_like(model)};
    get_params(r, opt.velocity);
    return {std::move(model), std::move(opt), static_cast<int>(next_epoch)};
}

}  // namespace taet
