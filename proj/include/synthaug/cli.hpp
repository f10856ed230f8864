// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace synthaug::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitPartial = 4;

/// Parses arguments, runs one command and maps failures to exit codes.
int run(int argc, const char* const* argv);

}  // namespace synthaug::cli
