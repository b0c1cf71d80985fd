#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "jamba/errors.hpp"

namespace jamba {

// 0 success; 1 validation error, bad flag or bad input; 2 runtime or numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

int exit_code_for(ErrorKind kind);

// Parses and runs one command. Diagnostics go to `err` as single lines.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jamba
