#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cpift {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string read_text(const std::filesystem::path& path);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// Writes through a temporary file and renames, so readers never observe a
// half-written artifact. Creates parent directories.
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);
void write_json(const std::filesystem::path& path, const ordered_json& value);

}  // namespace cpift
