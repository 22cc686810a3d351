#include "hattn/contract.hpp"

namespace hattn {

void contract_failure(const char* expr, const char* file, int line, const std::string& msg) {
    throw ContractViolation(std::string(file) + ":" + std::to_string(line) + ": " + msg + " (" + expr + ")");
}

}  // namespace hattn
