#pragma once

#include <ostream>

namespace pmvs::tools {

// Quick oracle checks of the installed build. Prints one line per check.
bool run_selftest(std::ostream& out);

}  // namespace pmvs::tools
