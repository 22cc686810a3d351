#pragma once

#include <stdexcept>
#include <string>

namespace hattn {

// Raised when a caller breaks an operation's preconditions (shape mismatch,
// position discontinuity, oversize step, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

[[noreturn]] void contract_failure(const char* expr, const char* file, int line, const std::string& msg);

}  // namespace hattn

#define HATTN_CHECK(cond, msg)                                                  \
    do {                                                                        \
        if (!(cond)) {                                                          \
            ::hattn::contract_failure(#cond, __FILE__, __LINE__, (msg));        \
        }                                                                       \
    } while (false)
