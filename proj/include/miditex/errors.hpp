#pragma once

#include <stdexcept>
#include <string>

namespace miditex {

// Coarse classification used by the CLI to pick exit codes: input-side
// problems (bad files, bad requests, out-of-range arguments) exit 1,
// everything else exits 2.
enum class ErrorKind {
    Format,            // malformed SMF / token text / JSON
    EmptyScore,        // no notes where notes are required
    Unsupported,       // well-formed but outside scope (e.g. meter change)
    NotInSubset,       // instrument program unknown to the registry
    IncompleteProfile, // encode given a profile missing a (bar, track) entry
    Grammar,           // token sequence rejected by the grammar automaton
    CorpusTooSmall,    // fit_bins precondition
    BadRequest,        // transfer request inconsistent or out of range
    InfeasibleRegister,// strict octave inference with empty feasible set
    DeadEnd,           // model gives zero mass to every legal token
    OutOfRange,        // index arguments outside the score
    Io,                // filesystem problems
    Internal,          // bugs, invariant breaks
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    bool is_input_error() const {
        return kind_ != ErrorKind::Internal && kind_ != ErrorKind::DeadEnd;
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace miditex
