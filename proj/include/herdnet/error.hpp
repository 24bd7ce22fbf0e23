#pragma once

#include <stdexcept>
#include <string>

namespace herdnet {

// Raised on any violated precondition. The message is prefixed with the
// module that rejected the input, e.g. "dataio: target_len 4 < frame count 8".
class Error : public std::runtime_error {
public:
    Error(const std::string& module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(module) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

inline void require(bool ok, const char* module, const std::string& what) {
    if (!ok) throw Error(module, what);
}

}  // namespace herdnet
