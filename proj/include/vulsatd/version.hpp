#pragma once

namespace vulsatd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vulsatd
