#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace halprobe {

/// Runs the command line; 0 on success, 1 on usage errors, 2 on data errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

/// Edit distance used for unknown-flag suggestions.
std::size_t levenshtein(const std::string& a, const std::string& b);

}  // namespace halprobe
