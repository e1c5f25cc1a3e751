#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seaseg::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Parses and runs one command line. Data goes to `out`, progress and errors to `err`.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace seaseg::cli
