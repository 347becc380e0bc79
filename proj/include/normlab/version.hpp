#pragma once

namespace normlab {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace normlab
