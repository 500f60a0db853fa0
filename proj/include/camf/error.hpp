#pragma once

#include <stdexcept>
#include <string>

namespace camf {

// Base class for every error raised by the library. The CLI maps
// InvalidConfig to exit status 2 and everything else to 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

// Malformed input data. Messages name the offending entry id when one exists.
class DataError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

}  // namespace camf
