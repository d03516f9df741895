#pragma once

#include <ostream>

namespace drc {

// Entry point of the drclab command. Errors end up on `err` as one JSON
// line {"error": <code>, "message": <text>} and a nonzero return.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drc
