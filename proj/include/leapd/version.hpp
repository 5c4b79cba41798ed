#pragma once

namespace leapd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace leapd
