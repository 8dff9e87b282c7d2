#pragma once

namespace funcspace {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace funcspace
