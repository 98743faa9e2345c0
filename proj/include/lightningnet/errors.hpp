#pragma once

#include <stdexcept>
#include <string>

namespace lnet {

// Error hierarchy; exit_code() maps onto the CLI's process exit codes.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 1; }
};

class validation_error : public error {
public:
    using error::error;
    int exit_code() const override { return 2; }
};

class data_error : public error {
public:
    using error::error;
    int exit_code() const override { return 3; }
};

class numeric_error : public error {
public:
    using error::error;
    int exit_code() const override { return 4; }
};

class io_error : public error {
public:
    using error::error;
    int exit_code() const override { return 5; }
};

} // namespace lnet
