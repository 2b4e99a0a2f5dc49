#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- answer extraction / arithmetic -------------------------------------

class MissingAnswerMarker : public Error {
public:
    explicit MissingAnswerMarker(const std::string& what) : Error(what) {}
};

class MalformedBoxed : public Error {
public:
    explicit MalformedBoxed(const std::string& what) : Error(what) {}
};

class MalformedAnnotation : public Error {
public:
    MalformedAnnotation(const std::string& what, std::size_t offset)
        : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class ArithError : public Error {
public:
    explicit ArithError(const std::string& what) : Error(what) {}
};

class VerifyError : public Error {
public:
    explicit VerifyError(const std::string& what) : Error(what) {}
};

// ---- dataset ingestion / export ------------------------------------------

class IngestError : public Error {
public:
    explicit IngestError(const std::string& what) : Error(what) {}
};

class EmptyDataset : public Error {
public:
    explicit EmptyDataset(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

// ---- llm client / mock -----------------------------------------------------

// Base for everything the HTTP client can throw; pipeline stages that must
// not crash on endpoint trouble catch this.
class ClientError : public Error {
public:
    using Error::Error;
};

class TransientExhausted : public ClientError {
public:
    explicit TransientExhausted(const std::string& what) : ClientError(what) {}
};

class PermanentRejection : public ClientError {
public:
    PermanentRejection(int status, const std::string& body)
        : ClientError("endpoint rejected request with HTTP " + std::to_string(status) +
                      ": " + body),
          status_(status),
          body_(body) {}
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_;
    std::string body_;
};

class ProtocolError : public ClientError {
public:
    explicit ProtocolError(const std::string& what) : ClientError(what) {}
};

class LogprobsUnsupported : public ClientError {
public:
    explicit LogprobsUnsupported(const std::string& what) : ClientError(what) {}
};

class BindError : public Error {
public:
    explicit BindError(const std::string& what) : Error(what) {}
};

// ---- metrics / eval ---------------------------------------------------------

class EmptySequence : public Error {
public:
    explicit EmptySequence(const std::string& what) : Error(what) {}
};

class ScoringUnavailable : public Error {
public:
    explicit ScoringUnavailable(const std::string& what) : Error(what) {}
};

class EvalTransportFailure : public Error {
public:
    explicit EvalTransportFailure(const std::string& what) : Error(what) {}
};

class EmptyExemplars : public Error {
public:
    explicit EmptyExemplars(const std::string& what) : Error(what) {}
};

}  // namespace eit
