#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "aoes/trm.hpp"

namespace aoes {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ScoringModel& model, const std::filesystem::path& path);
ScoringModel load_checkpoint(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace aoes
