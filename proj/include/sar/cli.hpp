#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace sar {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitIo = 2, kExitNumeric = 3 };

// Flat key=value text. '#' starts a comment line; blank lines are skipped.
// FormatError on a line without '=' or a repeated key.
std::map<std::string, std::string> parse_key_values(std::string_view text);

// Entry point of the sar tool. Progress goes to `err`, tables (gradcheck) to
// `out`, artifacts only to files under --out.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sar
