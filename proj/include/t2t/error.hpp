#pragma once

#include <stdexcept>
#include <string>

namespace t2t {

// All recoverable failures (bad shapes, bad tokens, malformed files, invalid
// configs) surface as t2t::Error. The CLI maps them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace t2t
