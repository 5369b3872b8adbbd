#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dac {

// Config/usage violations (CLI exit code 2).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failures: shape mismatches, NaN guards, corrupt files (CLI exit code 1).
struct runtime_error : std::runtime_error {
    explicit runtime_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void append_parts(std::ostringstream&) {}
template <typename First, typename... Rest>
void append_parts(std::ostringstream& os, First&& first, Rest&&... rest) {
    os << std::forward<First>(first);
    append_parts(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Parts>
std::string format_msg(Parts&&... parts) {
    std::ostringstream os;
    detail::append_parts(os, std::forward<Parts>(parts)...);
    return os.str();
}

}  // namespace dac

#define DAC_CHECK(cond, ...)                                          \
    do {                                                              \
        if (!(cond)) {                                                \
            throw ::dac::runtime_error(::dac::format_msg(__VA_ARGS__)); \
        }                                                             \
    } while (0)

#define DAC_CHECK_CFG(cond, ...)                                       \
    do {                                                               \
        if (!(cond)) {                                                 \
            throw ::dac::config_error(::dac::format_msg(__VA_ARGS__)); \
        }                                                              \
    } while (0)
