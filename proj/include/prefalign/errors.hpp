#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prefalign {

/// Invalid or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input row; carries the 1-based line number and the offending field.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::string field, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + msg),
          line_(line),
          field_(std::move(field)) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

/// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Skip signal: a user's timeline is too short for the requested split.
class InsufficientHistory : public std::runtime_error {
public:
    InsufficientHistory(std::size_t required, std::size_t available)
        : std::runtime_error("insufficient history: need " + std::to_string(required) +
                             " records, have " + std::to_string(available)),
          required_(required),
          available_(available) {}

    std::size_t required() const { return required_; }
    std::size_t available() const { return available_; }

private:
    std::size_t required_;
    std::size_t available_;
};

/// All transport attempts failed. CLI exit code 4.
class TransportExhausted : public std::runtime_error {
public:
    TransportExhausted(int attempts, const std::string& last_error)
        : std::runtime_error("transport exhausted after " + std::to_string(attempts) +
                             " attempts: " + last_error),
          attempts_(attempts) {}

    int attempts() const { return attempts_; }

private:
    int attempts_;
};

/// Endpoint rejected the request with a non-retryable status.
class NonRetryableHttp : public std::runtime_error {
public:
    NonRetryableHttp(int status, const std::string& body)
        : std::runtime_error("endpoint returned status " + std::to_string(status) + ": " + body),
          status_(status) {}

    int status() const { return status_; }

private:
    int status_;
};

/// A mock endpoint could not answer (missing rule, unknown user, ...).
class MockError : public std::runtime_error {
public:
    explicit MockError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Metric requested over zero outcomes.
class UndefinedMetric : public std::runtime_error {
public:
    explicit UndefinedMetric(const std::string& msg) : std::runtime_error(msg) {}
};

/// Export refused: nothing to write.
class EmptyDataset : public std::runtime_error {
public:
    explicit EmptyDataset(const std::string& msg) : std::runtime_error(msg) {}
};

/// Run-store failures: id collisions, immutability, corruption, stage order.
class StoreError : public std::runtime_error {
public:
    enum class Kind { collision, immutability, corruption, stage_order, not_found };

    StoreError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Training loss blew past the divergence guard.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int epoch, double loss)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                             " (loss " + std::to_string(loss) + ")"),
          epoch_(epoch) {}

    int epoch() const { return epoch_; }

private:
    int epoch_;
};

}  // namespace prefalign
