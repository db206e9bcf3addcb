#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dpf::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kNumericalError = 3, kInfeasibleDesign = 4 };

// Parses the command line and runs one subcommand. Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(const std::string& bytes);
std::string format_number(double v);

}  // namespace dpf::cli
