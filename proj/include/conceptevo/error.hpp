#pragma once

#include <stdexcept>
#include <string>

namespace conceptevo {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    dependency = 4,
};

/// Base of all engine errors. Each subclass maps to one exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept = 0;
    virtual const char* kind() const noexcept = 0;
};

/// Bad arguments or configuration (k <= 0, empty class, unknown stage, ...).
class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
    const char* kind() const noexcept override { return "config"; }
};

/// Malformed or inconsistent data on disk.
class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
    const char* kind() const noexcept override { return "data"; }
};

/// File length does not match the manifest-declared shape.
class CorruptFileError : public DataError {
public:
    CorruptFileError(std::string path, std::size_t expected, std::size_t actual);
    const char* kind() const noexcept override { return "corrupt-file"; }
    const std::string& path() const noexcept { return path_; }
    std::size_t expected_bytes() const noexcept { return expected_; }
    std::size_t actual_bytes() const noexcept { return actual_; }

private:
    std::string path_;
    std::size_t expected_;
    std::size_t actual_;
};

/// NaN or infinity found in a tensor.
class DataQualityError : public DataError {
public:
    DataQualityError(std::string path, std::size_t image, std::size_t neuron);
    const char* kind() const noexcept override { return "data-quality"; }
    std::size_t image() const noexcept { return image_; }
    std::size_t neuron() const noexcept { return neuron_; }

private:
    std::size_t image_;
    std::size_t neuron_;
};

/// A required input file (or stage output) is missing.
class DependencyError : public Error {
public:
    explicit DependencyError(std::string path);
    DependencyError(std::string path, const std::string& what);
    ExitCode exit_code() const noexcept override { return ExitCode::dependency; }
    const char* kind() const noexcept override { return "dependency"; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A neuron whose stimuli have neither direct nor indirect image vectors.
class UnrepresentableNeuronError : public DataError {
public:
    using DataError::DataError;
    const char* kind() const noexcept override { return "unrepresentable-neuron"; }
};

}  // namespace conceptevo
