#include "spagan/config.hpp"

#include "spagan/text.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace spagan {

namespace {

bool parseBool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

double parseReal(const std::string& key, const std::string& v) {
    try {
        return parseDouble(v);
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

long parseInt(const std::string& key, const std::string& v) {
    try {
        return parseLong(v);
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

std::string boolText(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"preset", [](TrainConfig& c, const std::string&, const std::string& v) {
             if (v == "custom") {
                 c.preset = v;
             } else {
                 c = ablationPreset(v, c);
             }
         }},
        {"attention_enabled", [](TrainConfig& c, const std::string& k, const std::string& v) { c.attentionEnabled = parseBool(k, v); }},
        {"attention_mode", [](TrainConfig& c, const std::string&, const std::string& v) {
             try {
                 c.attentionMode = parseAttentionMode(v);
             } catch (const AttentionError& e) {
                 throw ConfigError(std::string("config key 'attention_mode': ") + e.what());
             }
         }},
        {"fm_loss_enabled", [](TrainConfig& c, const std::string& k, const std::string& v) { c.fmLossEnabled = parseBool(k, v); }},
        {"fm_tap_layer", [](TrainConfig& c, const std::string&, const std::string& v) {
             try {
                 c.fmTapLayer = parseTapLayer(v);
             } catch (const TapError& e) {
                 throw ConfigError(std::string("config key 'fm_tap_layer': ") + e.what());
             }
         }},
        {"lambda_cyc", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambdaCyc = parseReal(k, v); }},
        {"lambda_fm", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambdaFm = parseReal(k, v); }},
        {"learning_rate", [](TrainConfig& c, const std::string& k, const std::string& v) { c.learningRate = parseReal(k, v); }},
        {"adam_beta1", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamBeta1 = parseReal(k, v); }},
        {"adam_beta2", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamBeta2 = parseReal(k, v); }},
        {"total_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.totalSteps = parseInt(k, v); }},
        {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) {
             const long s = parseInt(k, v);
             if (s < 0) throw ConfigError("config key 'seed' must be non-negative");
             c.seed = static_cast<std::uint64_t>(s);
         }},
        {"checkpoint_every", [](TrainConfig& c, const std::string& k, const std::string& v) { c.checkpointEvery = parseInt(k, v); }},
        {"attention_dump_every", [](TrainConfig& c, const std::string& k, const std::string& v) { c.attentionDumpEvery = parseInt(k, v); }},
        {"attention_upsample", [](TrainConfig& c, const std::string&, const std::string& v) {
             try {
                 c.attentionUpsample = parseUpsampleMethod(v);
             } catch (const AttentionError& e) {
                 throw ConfigError(std::string("config key 'attention_upsample': ") + e.what());
             }
         }},
        {"fm_normalization", [](TrainConfig& c, const std::string&, const std::string& v) {
             if (v == "plane_sum") c.fmNormalization = FeatureNorm::PlaneSum;
             else if (v == "spatial_mean") c.fmNormalization = FeatureNorm::SpatialMean;
             else throw ConfigError("config key 'fm_normalization': expected plane_sum or spatial_mean");
         }},
        {"attend_cycle_path", [](TrainConfig& c, const std::string& k, const std::string& v) { c.attendCyclePath = parseBool(k, v); }},
        {"lr_linear_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lrLinearDecay = parseBool(k, v); }},
        {"pool_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.poolSize = static_cast<int>(parseInt(k, v)); }},
        {"image_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.imageSize = static_cast<int>(parseInt(k, v)); }},
        {"gen_base_width", [](TrainConfig& c, const std::string& k, const std::string& v) { c.genBaseWidth = static_cast<int>(parseInt(k, v)); }},
        {"gen_residual_blocks", [](TrainConfig& c, const std::string& k, const std::string& v) { c.genResidualBlocks = static_cast<int>(parseInt(k, v)); }},
        {"disc_base_width", [](TrainConfig& c, const std::string& k, const std::string& v) { c.discBaseWidth = static_cast<int>(parseInt(k, v)); }},
        {"disc_layer_count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.discLayerCount = static_cast<int>(parseInt(k, v)); }},
    };
    return table;
}

// "${\cal{L}}_{fm}$-$D^1$" -> "L_fm-D1"
std::string canonicalPresetName(const std::string& name) {
    std::string s = name;
    for (const std::string token : {"\\mathcal", "\\cal"}) {
        for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token)) {
            s.erase(pos, token.size());
        }
    }
    std::string out;
    for (char ch : s) {
        if (ch != '$' && ch != '{' && ch != '}' && ch != '^' && ch != ' ') {
            out += ch;
        }
    }
    if (out == "SPA-GAN") {
        return "SPA-GAN-L_fm-D1";
    }
    return out;
}

} // namespace

void TrainConfig::validate() const {
    try {
        weights.validate();
    } catch (const LossError&) {
        throw ConfigError("lambda_cyc and lambda_fm must be finite and >= 0");
    }
    if (!(learningRate > 0) || !std::isfinite(learningRate)) throw ConfigError("learning_rate must be > 0");
    if (adamBeta1 < 0 || adamBeta1 >= 1 || adamBeta2 < 0 || adamBeta2 >= 1) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (totalSteps < 1) throw ConfigError("total_steps must be >= 1");
    if (checkpointEvery < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (attentionDumpEvery < 0) throw ConfigError("attention_dump_every must be >= 0");
    if (poolSize < 0) throw ConfigError("pool_size must be >= 0");
    try {
        generatorSpec().validate();
        discriminatorSpec().validate();
    } catch (const SpecError& e) {
        throw ConfigError(e.what());
    }
}

GeneratorSpec TrainConfig::generatorSpec() const {
    return {genBaseWidth, genResidualBlocks, imageSize, 3, fmTapLayer};
}

DiscriminatorSpec TrainConfig::discriminatorSpec() const { return {discBaseWidth, discLayerCount, imageSize, 3}; }

AdamConfig TrainConfig::adamConfig() const { return {learningRate, adamBeta1, adamBeta2, 1e-8}; }

double TrainConfig::learningRateAt(long completedSteps) const {
    if (!lrLinearDecay) {
        return learningRate;
    }
    const long decayStart = totalSteps / 2;
    if (completedSteps < decayStart) {
        return learningRate;
    }
    const double span = static_cast<double>(totalSteps - decayStart);
    return learningRate * std::max(0.0, 1.0 - static_cast<double>(completedSteps - decayStart) / span);
}

std::map<std::string, std::string> TrainConfig::toKeyValues() const {
    return {
        {"preset", preset},
        {"attention_enabled", boolText(attentionEnabled)},
        {"attention_mode", std::string(modeName(attentionMode))},
        {"fm_loss_enabled", boolText(fmLossEnabled)},
        {"fm_tap_layer", std::string(tapName(fmTapLayer))},
        {"lambda_cyc", formatDouble(weights.lambdaCyc)},
        {"lambda_fm", formatDouble(weights.lambdaFm)},
        {"learning_rate", formatDouble(learningRate)},
        {"adam_beta1", formatDouble(adamBeta1)},
        {"adam_beta2", formatDouble(adamBeta2)},
        {"total_steps", std::to_string(totalSteps)},
        {"seed", std::to_string(seed)},
        {"checkpoint_every", std::to_string(checkpointEvery)},
        {"attention_dump_every", std::to_string(attentionDumpEvery)},
        {"attention_upsample", std::string(upsampleName(attentionUpsample))},
        {"fm_normalization", fmNormalization == FeatureNorm::PlaneSum ? "plane_sum" : "spatial_mean"},
        {"attend_cycle_path", boolText(attendCyclePath)},
        {"lr_linear_decay", boolText(lrLinearDecay)},
        {"pool_size", std::to_string(poolSize)},
        {"image_size", std::to_string(imageSize)},
        {"gen_base_width", std::to_string(genBaseWidth)},
        {"gen_residual_blocks", std::to_string(genResidualBlocks)},
        {"disc_base_width", std::to_string(discBaseWidth)},
        {"disc_layer_count", std::to_string(discLayerCount)},
    };
}

std::string TrainConfig::toText() const {
    std::string out;
    // preset first so that re-parsing does not clobber later keys.
    const auto kv = toKeyValues();
    out += "preset = " + kv.at("preset") + "\n";
    for (const auto& [k, v] : kv) {
        if (k != "preset") {
            out += k + " = " + v + "\n";
        }
    }
    return out;
}

void applyConfigValue(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    it->second(cfg, key, value);
}

TrainConfig parseConfig(const std::string& text, const TrainConfig& base) {
    TrainConfig cfg = base;
    std::istringstream in(text);
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        std::string_view view = line;
        if (const auto hash = view.find('#'); hash != std::string_view::npos) {
            view = view.substr(0, hash);
        }
        view = trim(view);
        if (view.empty()) {
            continue;
        }
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineNo) + ": expected key = value");
        }
        applyConfigValue(cfg, std::string(trim(view.substr(0, eq))), std::string(trim(view.substr(eq + 1))));
    }
    return cfg;
}

TrainConfig loadConfigFile(const std::filesystem::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parseConfig(ss.str(), base);
}

const std::vector<std::string>& ablationPresetNames() {
    static const std::vector<std::string> names = {
        "CycleGAN",        "SPA-GAN-wo-A_D",  "SPA-GAN-wo-L_fm", "SPA-GAN-L_fm-E1",
        "SPA-GAN-L_fm-D4", "SPA-GAN-A_max",   "SPA-GAN-L_fm-D1",
    };
    return names;
}

TrainConfig ablationPreset(const std::string& name, const TrainConfig& base) {
    const std::string key = canonicalPresetName(name);
    TrainConfig cfg = base;
    cfg.preset = key;
    cfg.attentionMode = AttentionMode::Sum;
    if (key == "CycleGAN") {
        cfg.attentionEnabled = false;
        cfg.fmLossEnabled = false;
    } else if (key == "SPA-GAN-wo-A_D") {
        cfg.attentionEnabled = false;
        cfg.fmLossEnabled = true;
        cfg.fmTapLayer = TapLayer::DEC1;
    } else if (key == "SPA-GAN-wo-L_fm") {
        cfg.attentionEnabled = true;
        cfg.fmLossEnabled = false;
    } else if (key == "SPA-GAN-L_fm-E1" || key == "SPA-GAN-L_fm-D1" || key == "SPA-GAN-L_fm-D4") {
        cfg.attentionEnabled = true;
        cfg.fmLossEnabled = true;
        cfg.fmTapLayer = key.back() == '1' ? (key[key.size() - 2] == 'E' ? TapLayer::ENC1 : TapLayer::DEC1)
                                           : TapLayer::DEC4;
    } else if (key == "SPA-GAN-A_max") {
        cfg.attentionEnabled = true;
        cfg.attentionMode = AttentionMode::Max;
        cfg.fmLossEnabled = true;
        cfg.fmTapLayer = TapLayer::DEC1;
    } else {
        std::string valid;
        for (const auto& n : ablationPresetNames()) {
            valid += (valid.empty() ? "" : ", ") + n;
        }
        throw ConfigError("unknown preset '" + name + "'; valid presets: " + valid);
    }
    return cfg;
}

} // namespace spagan
