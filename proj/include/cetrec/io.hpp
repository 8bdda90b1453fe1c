#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cetrec/datagen.hpp"
#include "cetrec/encoding.hpp"

namespace cetrec {

namespace files {
inline constexpr const char* kCatalog = "catalog.json";
inline constexpr const char* kSequences = "sequences.jsonl";
inline constexpr const char* kSplits = "splits.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kEpochs = "epochs.jsonl";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kSensitivity = "sensitivity.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace files

inline constexpr const char* kToolVersion = "0.1.0";

nlohmann::json catalog_to_json(const Catalog& catalog);
Catalog catalog_from_json(const nlohmann::json& j);

nlohmann::json example_to_json(const Example& example);
Example example_from_json(const nlohmann::json& j);

/// Writes atomically enough for our purposes: truncate and write.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);
/// Pretty JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
Catalog read_catalog(const std::filesystem::path& path);
void write_sequences(const std::filesystem::path& path, std::span<const InteractionSequence> sequences);
std::vector<InteractionSequence> read_sequences(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& path);

/// catalog.json, sequences.jsonl and splits.json in `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// IoError naming the first missing file.
Dataset read_dataset(const std::filesystem::path& dir);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Run manifest: resolved config, seeds, content hashes of inputs and
/// outputs (by file name), tool version and a creation timestamp.
struct Manifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
};

/// Hashes the files and writes manifest.json into `dir`.
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);

}  // namespace cetrec
