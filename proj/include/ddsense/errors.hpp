#pragma once

#include <stdexcept>
#include <string>

namespace ddsense {

// Bad arguments to a library call (non-Hermitian input, dimension mismatch,
// invalid pulse counts, overlapping pulses, ...).
class invalid_input : public std::invalid_argument {
  public:
    explicit invalid_input(const std::string& what) : std::invalid_argument(what) {}
};

// Schedule and engine options disagree (e.g. delta engine fed finite-width
// pulses, leak engine fed a delta schedule).
class model_mismatch : public std::logic_error {
  public:
    explicit model_mismatch(const std::string& what) : std::logic_error(what) {}
};

} // namespace ddsense
