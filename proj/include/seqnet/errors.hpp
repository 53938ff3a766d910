#pragma once

#include <stdexcept>
#include <string>

namespace seqnet {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Misuse of the gradient graph (non-scalar loss, consumed graph, ...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// A ModelSpec, TrainConfig or PoisonConfig violates one of its invariants.
class SpecError : public Error {
public:
    using Error::Error;
};

/// A file could not be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Bad magic, unsupported version or truncated container.
class FormatError : public Error {
public:
    using Error::Error;
};

class ManifestError : public Error {
public:
    using Error::Error;
};

/// Attack preconditions not met (e.g. the sample is not detected to begin with).
class AttackError : public Error {
public:
    using Error::Error;
};

} // namespace seqnet
