#pragma once

namespace eedvit {

inline constexpr const char* version = "0.1.0";

} // namespace eedvit
