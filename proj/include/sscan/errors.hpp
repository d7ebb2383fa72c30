// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace sscan {

// Base for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/window dimension mismatches. Messages name the offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad arguments, contract violations, config validation failures.
class ValueError : public Error {
public:
    using Error::Error;
};

// Filesystem and on-disk format problems.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace sscan
