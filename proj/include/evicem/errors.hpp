#pragma once

#include <stdexcept>
#include <string>

namespace evicem {

/// Argument outside the mathematical domain of an operation (x <= 0 for
/// digamma, evidence below 1, non-finite inputs).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Shape or dimension mismatch between tensors, vectors or manifests.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed, truncated or version-mismatched input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss; carries the offending batch.
class NumericAbort : public std::runtime_error {
public:
    NumericAbort(const std::string& what, long epoch, long batch)
        : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
    long epoch() const noexcept { return epoch_; }
    long batch() const noexcept { return batch_; }

private:
    long epoch_;
    long batch_;
};

/// Bad command-line or configuration input.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace evicem
