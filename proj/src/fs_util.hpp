#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace layerfuse::detail {

// Write to "<path>.tmp.<pid>" then rename over `path`, creating parent dirs.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_text(const std::filesystem::path& path);

}  // namespace layerfuse::detail
