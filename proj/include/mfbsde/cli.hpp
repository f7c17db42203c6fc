#pragma once

#include <iosfwd>

namespace mfbsde {

/// Entry point of the `mfbsde` command line tool.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 a condition check
/// failed, 3 the solver diverged or hit max_outer, 4 a deviation test failed.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mfbsde
