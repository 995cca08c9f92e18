#include "spagan/checkpoint.hpp"

#include "spagan/text.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace spagan {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'G', 'A', 'N', 'C', 'K'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <typename T>
    void pod(T v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void bytes(const std::string& s) { buf_ += s; }
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t limit, std::string source)
        : buf_(buf), limit_(limit), source_(std::move(source)) {}

    template <typename T>
    T pod() {
        T v{};
        need(sizeof(T));
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void raw(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == limit_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > limit_) {
            throw CheckpointError("truncated checkpoint " + source_);
        }
    }
    const std::string& buf_;
    std::size_t limit_;
    std::size_t pos_ = 0;
    std::string source_;
};

template <typename Scalar>
void putTensor(Writer& w, const std::string& name, const Planes<Scalar>& m) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = m.template cast<float>();
    w.raw(f.data(), static_cast<std::size_t>(f.size()) * sizeof(float));
}

struct RawTensor {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> values;
};

struct Decoded {
    std::string metadata;
    std::map<std::string, RawTensor> tensors;
};

Decoded decode(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < sizeof(kMagic) + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a checkpoint file: " + path.string());
    }
    const std::size_t body = buf.size() - 8;
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, 8);
    if (stored != fnv1a(buf.substr(0, body))) {
        throw CheckpointError("checkpoint checksum mismatch (corrupted file): " + path.string());
    }
    Reader r(buf, body, path.string());
    r.bytes(sizeof(kMagic));
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Decoded d;
    d.metadata = r.bytes(r.pod<std::uint64_t>());
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.pod<std::uint32_t>());
        RawTensor t;
        t.rows = r.pod<std::uint32_t>();
        t.cols = r.pod<std::uint32_t>();
        t.values.resize(static_cast<std::size_t>(t.rows) * t.cols);
        r.raw(t.values.data(), t.values.size() * sizeof(float));
        d.tensors.emplace(name, std::move(t));
    }
    if (!r.done()) {
        throw CheckpointError("trailing bytes in checkpoint " + path.string());
    }
    return d;
}

// Splits metadata into config lines and the bookkeeping keys.
std::pair<std::string, std::map<std::string, std::string>> splitMetadata(const std::string& metadata) {
    std::istringstream in(metadata);
    std::string line;
    std::string configText;
    std::map<std::string, std::string> extra;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const std::string key(trim(std::string_view(line).substr(0, eq)));
        if (key == "step" || key.rfind("adam_steps.", 0) == 0 || key == "format") {
            extra[key] = std::string(trim(std::string_view(line).substr(eq + 1)));
        } else {
            configText += line + "\n";
        }
    }
    return {configText, extra};
}

template <typename Scalar>
void restore(const Decoded& d, const std::string& name, Planes<Scalar>& target) {
    const auto it = d.tensors.find(name);
    if (it == d.tensors.end()) {
        throw CheckpointError("checkpoint is missing tensor " + name);
    }
    const RawTensor& t = it->second;
    if (t.rows != target.rows() || t.cols != target.cols()) {
        throw CheckpointError("tensor " + name + " has shape " + std::to_string(t.rows) + "x" +
                              std::to_string(t.cols) + ", expected " + std::to_string(target.rows()) + "x" +
                              std::to_string(target.cols()));
    }
    const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> src(
        t.values.data(), t.rows, t.cols);
    target = src.template cast<Scalar>();
}

} // namespace

template <typename Scalar>
void saveCheckpoint(const std::filesystem::path& path, ModelSet<Scalar>& models, const TrainConfig& cfg) {
    std::string metadata = "format = spagan-checkpoint\n" + cfg.toText();
    metadata += "step = " + std::to_string(models.step) + "\n";
    for (auto [prefix, opt] : models.optimizers()) {
        metadata += std::string("adam_steps.") + prefix + " = " + std::to_string(opt->steps()) + "\n";
    }
    std::vector<std::pair<std::string, const Planes<Scalar>*>> tensors;
    for (auto [prefix, net] : models.networks()) {
        for (auto& p : net->parameters()) {
            tensors.emplace_back(std::string(prefix) + "." + p.name, &p.param->value);
        }
    }
    for (std::size_t n = 0; n < 4; ++n) {
        const auto [prefix, net] = models.networks()[n];
        auto* opt = models.optimizers()[n].second;
        const auto params = net->parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::string name = std::string(prefix) + "." + params[i].name;
            tensors.emplace_back("adam.m." + name, &opt->firstMoments()[i]);
            tensors.emplace_back("adam.v." + name, &opt->secondMoments()[i]);
        }
    }
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint64_t>(metadata.size());
    w.bytes(metadata);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        putTensor(w, name, *m);
    }
    w.pod<std::uint64_t>(fnv1a(w.buffer()));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) {
            throw CheckpointError("cannot write checkpoint " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader readCheckpointHeader(const std::filesystem::path& path) {
    const Decoded d = decode(path);
    const auto [configText, extra] = splitMetadata(d.metadata);
    CheckpointHeader h;
    try {
        h.config = parseConfig(configText);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
    }
    h.step = extra.count("step") != 0 ? parseLong(extra.at("step")) : 0;
    return h;
}

template <typename Scalar>
ModelSet<Scalar> loadCheckpoint(const std::filesystem::path& path, TrainConfig* config) {
    const Decoded d = decode(path);
    const auto [configText, extra] = splitMetadata(d.metadata);
    TrainConfig cfg;
    try {
        cfg = parseConfig(configText);
        cfg.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
    }
    std::mt19937_64 unused(0);
    ModelSet<Scalar> models(cfg.generatorSpec(), cfg.discriminatorSpec(), cfg.adamConfig(), unused);
    for (std::size_t n = 0; n < 4; ++n) {
        const auto [prefix, net] = models.networks()[n];
        auto* opt = models.optimizers()[n].second;
        const auto params = net->parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::string name = std::string(prefix) + "." + params[i].name;
            restore(d, name, params[i].param->value);
            restore(d, "adam.m." + name, opt->firstMoments()[i]);
            restore(d, "adam.v." + name, opt->secondMoments()[i]);
        }
        const std::string key = std::string("adam_steps.") + prefix;
        opt->setSteps(extra.count(key) != 0 ? parseLong(extra.at(key)) : 0);
    }
    models.step = extra.count("step") != 0 ? parseLong(extra.at("step")) : 0;
    if (config != nullptr) {
        *config = cfg;
    }
    return models;
}

template void saveCheckpoint<float>(const std::filesystem::path&, ModelSet<float>&, const TrainConfig&);
template void saveCheckpoint<double>(const std::filesystem::path&, ModelSet<double>&, const TrainConfig&);
template ModelSet<float> loadCheckpoint<float>(const std::filesystem::path&, TrainConfig*);
template ModelSet<double> loadCheckpoint<double>(const std::filesystem::path&, TrainConfig*);

} // namespace spagan
