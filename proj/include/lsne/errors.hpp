#pragma once

#include <stdexcept>
#include <string>

namespace lsne {

// File, format, or schema problem. The CLI maps these to exit code 2.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or parameters during a numerical procedure. Exit code 3.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lsne
