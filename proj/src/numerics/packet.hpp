#pragma once

#include <cstddef>

namespace ito::detail {

// Rounds up so Eigen's packet loops cover every element of an aligned buffer. Each element
// then goes through the same code path wherever it sits, keeping results layout-independent.
inline std::size_t padded_length(std::size_t n) { return (n + 15) / 16 * 16; }

}  // namespace ito::detail
