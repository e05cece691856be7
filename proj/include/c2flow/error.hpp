#pragma once

#include <stdexcept>
#include <string>

namespace c2flow {

// Structurally invalid input that cannot be recovered from (bad pcap header,
// malformed JSON model, unknown enum token).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (schema mismatch, class too small
// for k folds, invalid mask).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NotHashableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace c2flow
