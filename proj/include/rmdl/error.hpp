#pragma once

#include <stdexcept>
#include <string>

namespace rmdl {

enum class ErrorKind {
    Shape,
    Numeric,
    Label,
    Trace,
    Config,
    Data,
    Format,
    Consistency,
    Version,
    Corruption,
    Divergence,
    Io,
    Corpus,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so front ends can map
/// it to an exit status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Label: return "label error";
    case ErrorKind::Trace: return "trace error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Consistency: return "consistency error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Corruption: return "corruption error";
    case ErrorKind::Divergence: return "divergence error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Corpus: return "corpus error";
    }
    return "error";
}

} // namespace rmdl
