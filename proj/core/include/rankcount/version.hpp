#pragma once

namespace rankcount {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rankcount
