#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace tfm {

using Shape = std::vector<std::size_t>;

/// Product of extents. Throws ShapeError on a zero extent or on overflow.
std::size_t element_count(const Shape& shape);

/// "[2, 104, 104]"
std::string to_string(const Shape& shape);

}  // namespace tfm
