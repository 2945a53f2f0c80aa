#ifndef SSMI_SHA256_HPP
#define SSMI_SHA256_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace ssmi {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::filesystem::path& path);

} // namespace ssmi

#endif
