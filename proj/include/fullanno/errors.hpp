#pragma once

#include <stdexcept>
#include <string>

namespace fullanno {

/// Base class for every error the engine raises. `kind()` is the stable
/// machine-readable name used in CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define FULLANNO_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                       \
    public:                                                           \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    };

FULLANNO_DEFINE_ERROR(DegenerateBox)
FULLANNO_DEFINE_ERROR(InvariantViolation)
FULLANNO_DEFINE_ERROR(IdCollision)
FULLANNO_DEFINE_ERROR(UnknownSource)
FULLANNO_DEFINE_ERROR(EmptyCategory)
FULLANNO_DEFINE_ERROR(StageViolation)
FULLANNO_DEFINE_ERROR(EmptyBundle)
FULLANNO_DEFINE_ERROR(MalformedResponse)
FULLANNO_DEFINE_ERROR(EmptyResponse)
FULLANNO_DEFINE_ERROR(ConfigError)
FULLANNO_DEFINE_ERROR(CheckpointMismatch)
FULLANNO_DEFINE_ERROR(IoError)

#undef FULLANNO_DEFINE_ERROR

/// Schema problem in an input document. `path` is a JSON path such as
/// `$.annotations[3].bbox`; `line` is 1-based for line-oriented files, 0 otherwise.
class SchemaError : public Error {
public:
    SchemaError(std::string path, const std::string& message, std::size_t line = 0)
        : Error("SchemaError", format(path, message, line)),
          path_(std::move(path)), detail_(message), line_(line) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& detail() const noexcept { return detail_; }
    std::size_t line() const noexcept { return line_; }

private:
    static std::string format(const std::string& path, const std::string& message, std::size_t line) {
        std::string out;
        if (line > 0) out += "line " + std::to_string(line) + ": ";
        out += path + ": " + message;
        return out;
    }

    std::string path_;
    std::string detail_;
    std::size_t line_;
};

/// Failure talking to a model endpoint.
class ClientError : public Error {
public:
    enum class Reason {
        Fatal,            // non-retryable status, or the request itself is bad
        RetriesExhausted  // timeouts / 429 / 5xx used up every attempt
    };

    ClientError(Reason reason, int status, const std::string& message)
        : Error("ClientError", message), reason_(reason), status_(status) {}

    Reason reason() const noexcept { return reason_; }
    int status() const noexcept { return status_; }
    bool retryable() const noexcept { return reason_ == Reason::RetriesExhausted; }

private:
    Reason reason_;
    int status_;
};

}  // namespace fullanno
