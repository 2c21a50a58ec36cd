#pragma once

#include <stdexcept>
#include <string>

namespace dvlm {

// Exit-code category for CLI mapping: usage/config -> 1, runtime/numeric -> 2, io -> 3.
enum class ErrorCategory { usage, runtime, io };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg) : std::runtime_error(msg), cat_(cat) {}
    ErrorCategory category() const { return cat_; }

private:
    ErrorCategory cat_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ErrorCategory::usage, msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class IndexError : public Error {
public:
    explicit IndexError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

// Violated API precondition (non-scalar loss, missing instruction tokens, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class OptimizerError : public Error {
public:
    explicit OptimizerError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class SequenceLengthError : public Error {
public:
    explicit SequenceLengthError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class EvaluationError : public Error {
public:
    explicit EvaluationError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class JudgeProtocolError : public Error {
public:
    explicit JudgeProtocolError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class TransportError : public Error {
public:
    explicit TransportError(const std::string& msg) : Error(ErrorCategory::runtime, msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ErrorCategory::io, msg) {}
};

}  // namespace dvlm
