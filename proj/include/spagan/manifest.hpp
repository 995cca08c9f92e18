#pragma once

#include "spagan/config.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace spagan {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Provenance record written next to every command's outputs.
struct RunManifest {
    std::string command;
    TrainConfig configSnapshot;
    std::string datasetFingerprint;
    std::string toolkitVersion = kToolkitVersion;
    std::string startedAt;
    std::optional<std::string> finishedAt;
    bool deterministic = false;
    std::string status = "running";

    std::string toJson() const;
    static RunManifest fromJson(const std::string& text);
};

/// UTC, ISO 8601, second resolution.
std::string utcTimestamp();

/// Writes outDir/manifest.json. Refuses to touch a manifest that is already finalized.
void writeManifest(const std::filesystem::path& outDir, const RunManifest& manifest);

RunManifest readManifest(const std::filesystem::path& outDir);

/// Stamps finishedAt and status, then rewrites the manifest.
void finalizeManifest(const std::filesystem::path& outDir, RunManifest& manifest, const std::string& status);

} // namespace spagan
