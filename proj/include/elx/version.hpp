#pragma once

#include <string_view>

namespace elx {

inline constexpr std::string_view kVersion = "elx 0.1.0";

}  // namespace elx
