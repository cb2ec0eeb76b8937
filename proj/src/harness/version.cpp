#include "remap/harness/experiment.hpp"

#ifndef REMAP_CODE_HASH
#define REMAP_CODE_HASH "unknown"
#endif

namespace remap::harness {

std::string code_version() { return "remap-0.1+" REMAP_CODE_HASH; }

}  // namespace remap::harness
