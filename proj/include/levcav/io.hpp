#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace levcav {

// Shortest decimal string that round-trips to the same double. Used for
// every numeric field we write, so re-reading and re-emitting a file is
// byte-identical.
std::string fmt_double(double value);

double parse_double(const std::string& text); // throws IoError on garbage

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Minimal CSV support for the flat numeric tables this tool emits.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string csv_to_string(const CsvTable& table);
CsvTable csv_from_string(const std::string& text);
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

// Cheap stateless mixer for deriving independent RNG streams from one user
// seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Provenance record written next to every command's outputs. Reruns with an
// identical manifest reproduce identical numbers.
struct RunManifest {
    std::string command;        // subcommand plus significant flags
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string tool_version;
    std::string created_utc;    // ISO 8601
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::string& path, const RunManifest& manifest);

} // namespace levcav
