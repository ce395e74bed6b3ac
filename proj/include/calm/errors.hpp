#pragma once

#include <stdexcept>

namespace calm {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Sequence longer than the configured model limits.
class LengthError : public std::length_error {
public:
    using std::length_error::length_error;
};

// Invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class HeadIndexError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// A metric whose denominator is zero.
class MetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace calm
