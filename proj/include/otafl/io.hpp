#pragma once

#include <string>

namespace otafl {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
void ensure_directory(const std::string& path);

}  // namespace otafl
