#pragma once

namespace masksurf {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace masksurf
