#pragma once

namespace fullanno {

inline constexpr const char* kEngineVersion = "0.3.0";

}  // namespace fullanno
