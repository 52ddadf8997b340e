#pragma once

#include <stdexcept>
#include <string>

namespace uqcloud {

// Single exception type for all library failures. The C wrapper catches it
// and surfaces the message through uqc_last_error().
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace uqcloud
