// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace persona {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible matrix or factor shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid or unknown configuration, CLI flags, or registry lookups.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Missing or malformed input files.
class DataError : public Error {
public:
    using Error::Error;
};

// Singular systems, non-finite values.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace persona
