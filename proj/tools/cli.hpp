#pragma once

// `mtpet` command-line front end. Subcommands: prepare-data, train,
// detect-conclusions, evaluate, learning-curve. Exit codes: 0 success,
// 2 usage/configuration, 3 data, 4 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace mtpet::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mtpet::cli
