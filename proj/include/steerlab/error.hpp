#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad layer, empty corpus, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Container or record is malformed (bad magic, unparsable header, missing field).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Declared tensor shape, offset or length disagrees with the data or config.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// File ends before the data it declares.
class TruncatedError : public Error {
public:
    using Error::Error;
};

/// Two artifacts that must agree on layer/site/model fingerprint do not.
class MismatchError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace steerlab
