#ifndef RWKVASR_ERRORS_HPP
#define RWKVASR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rwkvasr {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or out-of-range indices.
struct ShapeError : Error {
    using Error::Error;
};

// A NaN or Inf escaped an exported operation.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file contents (wav/feat/checkpoint/config).
struct FormatError : Error {
    using Error::Error;
};

// API used in an invalid state (backward before forward, feed after close, ...).
struct StateError : Error {
    using Error::Error;
};

// The pruning band disconnects the alignment lattice.
struct BandError : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg, long step) : Error(msg), step(step) {}
    long step;
};

}  // namespace rwkvasr

#endif
