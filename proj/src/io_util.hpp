#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace halprobe::detail {

/// Write to `<path>.tmp` then rename over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace halprobe::detail
