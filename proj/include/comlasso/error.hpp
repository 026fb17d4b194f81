#pragma once
#include <stdexcept>
#include <string>

namespace comlasso {

// Base of every error the library throws on bad input.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Malformed data, files or parameters supplied by a caller.
class InputError : public Error
{
public:
    using Error::Error;
};

// An internal invariant failed; indicates a bug or a numerically degenerate state.
class InternalError : public Error
{
public:
    using Error::Error;
};

} // namespace comlasso
