#pragma once

namespace ddsense {

inline constexpr const char* version = "0.1.0";

} // namespace ddsense
