#include "io_util.hpp"

#include <fstream>
#include <sstream>

#include "halprobe/error.hpp"

namespace halprobe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::INVALID_ARGUMENT: return "INVALID_ARGUMENT";
    case ErrorCode::IO_ERROR: return "IO_ERROR";
    case ErrorCode::PARSE_ERROR: return "PARSE_ERROR";
    case ErrorCode::UNKNOWN_TASK: return "UNKNOWN_TASK";
    case ErrorCode::MISSING_FIELD: return "MISSING_FIELD";
    case ErrorCode::SMALL_STRATUM: return "SMALL_STRATUM";
    case ErrorCode::INVALID_DUMP: return "INVALID_DUMP";
    case ErrorCode::DIMENSION_MISMATCH: return "DIMENSION_MISMATCH";
    case ErrorCode::UNDEFINED_METRIC: return "UNDEFINED_METRIC";
    case ErrorCode::DEGENERATE_LABELS: return "DEGENERATE_LABELS";
    case ErrorCode::TRAINING_DIVERGED: return "TRAINING_DIVERGED";
    case ErrorCode::MISSING_FEATURES: return "MISSING_FEATURES";
    case ErrorCode::INVALID_DISTRIBUTION: return "INVALID_DISTRIBUTION";
    case ErrorCode::MISSING_PER_TOKEN: return "MISSING_PER_TOKEN";
    case ErrorCode::MISSING_TASK: return "MISSING_TASK";
    case ErrorCode::LEAKAGE: return "LEAKAGE";
    case ErrorCode::DIMENSION_TOO_SMALL: return "DIMENSION_TOO_SMALL";
  }
  return "UNKNOWN";
}

namespace detail {

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IO_ERROR, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IO_ERROR, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IO_ERROR, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail
}  // namespace halprobe
