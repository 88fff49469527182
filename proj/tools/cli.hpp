#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fasm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCollision = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSolver = 3;

/// Entry point shared by the executable and the tests. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Sets the global log level from FASM_LOG_LEVEL (error | info | debug).
void configure_logging();

}  // namespace fasm::cli
