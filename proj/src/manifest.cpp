#include "spagan/manifest.hpp"

#include "spagan/evaluation.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace spagan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utcTimestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string RunManifest::toJson() const {
    json j;
    j["command"] = command;
    j["config"] = configSnapshot.toKeyValues();
    j["config_text"] = configSnapshot.toText();
    j["dataset_fingerprint"] = datasetFingerprint;
    j["toolkit_version"] = toolkitVersion;
    j["started_at"] = startedAt;
    j["finished_at"] = finishedAt ? json(*finishedAt) : json(nullptr);
    j["deterministic"] = deterministic;
    j["status"] = status;
    return j.dump(2) + "\n";
}

RunManifest RunManifest::fromJson(const std::string& text) {
    const json j = json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.configSnapshot = parseConfig(j.at("config_text").get<std::string>());
    m.datasetFingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.toolkitVersion = j.at("toolkit_version").get<std::string>();
    m.startedAt = j.at("started_at").get<std::string>();
    if (!j.at("finished_at").is_null()) {
        m.finishedAt = j.at("finished_at").get<std::string>();
    }
    m.deterministic = j.value("deterministic", false);
    m.status = j.value("status", "running");
    return m;
}

RunManifest readManifest(const fs::path& outDir) {
    std::ifstream in(outDir / "manifest.json");
    if (!in) {
        throw std::runtime_error("no manifest.json in " + outDir.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return RunManifest::fromJson(ss.str());
}

void writeManifest(const fs::path& outDir, const RunManifest& manifest) {
    fs::create_directories(outDir);
    const fs::path path = outDir / "manifest.json";
    if (fs::exists(path) && readManifest(outDir).finishedAt) {
        throw std::runtime_error(path.string() + " is finalized; use a fresh output directory");
    }
    writeFileAtomic(path, manifest.toJson());
}

void finalizeManifest(const fs::path& outDir, RunManifest& manifest, const std::string& status) {
    RunManifest done = manifest;
    done.status = status;
    done.finishedAt = utcTimestamp();
    writeManifest(outDir, done);
    manifest = std::move(done);
}

} // namespace spagan
