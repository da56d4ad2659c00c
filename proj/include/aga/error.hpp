#pragma once

#include <stdexcept>
#include <string>

namespace aga {

// Configuration problems: bad field values, unknown keys, invalid combinations.
// Carried messages include the offending field path. Maps to AGA_ERR_CONFIG.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing or unreadable/unwritable files. Maps to AGA_ERR_IO.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace aga
