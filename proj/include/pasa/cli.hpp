#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pasa {

/// Exit codes: 0 ok, 1 usage or validation error, 2 verification failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace pasa
