#pragma once

#include <array>
#include <cctype>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "ddsense/errors.hpp"

namespace ddsense {

enum class Protocol {
    CP,
    CPMG,
    APCP,
    XY4,
    XY8,
    XY16,
    XY32,
    XY64,
    MLEV8,
    MLEV32,
    MLEV8Y,
    MLEV32Y,
};

inline constexpr std::array<Protocol, 12> all_protocols = {
    Protocol::CP,    Protocol::CPMG,   Protocol::APCP,   Protocol::XY4,
    Protocol::XY8,   Protocol::XY16,   Protocol::XY32,   Protocol::XY64,
    Protocol::MLEV8, Protocol::MLEV32, Protocol::MLEV8Y, Protocol::MLEV32Y,
};

namespace detail {

// One block of pi-pulse phases per protocol.  'x','y' are the +x/+y Bloch
// axes, capital letters the negated axes.
inline const char* phase_block(Protocol p) {
    switch (p) {
    case Protocol::CP:   return "xx";
    case Protocol::CPMG: return "yy";
    case Protocol::APCP: return "xX";
    case Protocol::XY4:  return "xyxy";
    case Protocol::XY8:  return "xyxyyxyx";
    case Protocol::XY16: return "xyxyyxyxXYXYYXYX";
    case Protocol::XY32: return "xyxyyxyxXYXYYXYX"
                                "XYXYYXYXxyxyyxyx";
    case Protocol::XY64: return "xyxyyxyxXYXYYXYX"
                                "XYXYYXYXxyxyyxyx"
                                "XYXYYXYXxyxyyxyx"
                                "xyxyyxyxXYXYYXYX";
    case Protocol::MLEV8:   return "xxXXXxxX";
    case Protocol::MLEV32:  return "xxXXXxxXXXxxxXXx"
                                   "xxxXXXxxXXXxxxXX";
    case Protocol::MLEV8Y:  return "yyYYYyyY";
    case Protocol::MLEV32Y: return "yyYYYyyYYYyyyYYy"
                                   "yyyYYYyyYYYyyyYY";
    }
    return "";
}

inline double axis_phase(char c) {
    switch (c) {
    case 'x': return 0.0;
    case 'y': return std::numbers::pi / 2.0;
    case 'X': return std::numbers::pi;
    case 'Y': return 3.0 * std::numbers::pi / 2.0;
    }
    throw invalid_input("unknown phase axis");
}

} // namespace detail

inline int block_length(Protocol p) {
    return static_cast<int>(std::string_view(detail::phase_block(p)).size());
}

inline std::string to_string(Protocol p) {
    switch (p) {
    case Protocol::CP:      return "CP";
    case Protocol::CPMG:    return "CPMG";
    case Protocol::APCP:    return "APCP";
    case Protocol::XY4:     return "XY4";
    case Protocol::XY8:     return "XY8";
    case Protocol::XY16:    return "XY16";
    case Protocol::XY32:    return "XY32";
    case Protocol::XY64:    return "XY64";
    case Protocol::MLEV8:   return "MLEV8";
    case Protocol::MLEV32:  return "MLEV32";
    case Protocol::MLEV8Y:  return "MLEV8Y";
    case Protocol::MLEV32Y: return "MLEV32Y";
    }
    return "?";
}

// Case-insensitive lookup of the Table-style protocol labels.
inline Protocol protocol_from_string(std::string_view name) {
    std::string up;
    up.reserve(name.size());
    for (char c : name)
        up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    for (Protocol p : all_protocols)
        if (up == to_string(p))
            return p;
    throw invalid_input("unknown protocol '" + std::string(name) + "'");
}

// Phases (radians) of the n pi pulses: the protocol block repeated n/block
// times.  n must be a positive multiple of the block length (hence even).
inline std::vector<double> protocol_phases(Protocol p, int n) {
    const std::string_view block = detail::phase_block(p);
    const int b = static_cast<int>(block.size());
    if (n <= 0 || n % b != 0)
        throw invalid_input("pulse count " + std::to_string(n) + " invalid for "
                            + to_string(p) + ": must be a positive multiple of "
                            + std::to_string(b));
    std::vector<double> phases;
    phases.reserve(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k)
        phases.push_back(detail::axis_phase(block[static_cast<size_t>(k % b)]));
    return phases;
}

} // namespace ddsense
