#pragma once

#include <cstdint>

namespace fcac {

#ifdef FCAC_USE_FLOAT
using Real = float;
#else
using Real = double;
#endif

using ClassId = std::uint32_t;

}  // namespace fcac
