#pragma once

#include <filesystem>
#include <string>

namespace aoes {

// Both throw Error(kIo) on failure. Writes create parent directories.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace aoes
