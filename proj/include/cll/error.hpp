#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cll {

// Error taxonomy shared by the library and the command-line tool.  The tool
// maps these onto its exit-code contract: config/validation problems exit 2,
// gate refusals exit 3, numerical divergence exits 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConstructionError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// A quantitative gate (residual threshold, nilpotency check, WKB margin)
// failed on otherwise well-formed input.
struct GateError : Error {
    using Error::Error;
};

// Input sits on a degenerate locus where the requested quantity is not
// defined (fixed-point slice, nilpotent Higgs pullback, ...).
struct DegeneracyError : GateError {
    using GateError::GateError;
};

// An iteration failed to converge; carries the residual history so callers
// can report it.
struct DivergenceError : Error {
    std::vector<double> residual_history;

    DivergenceError(const std::string& what, std::vector<double> history)
        : Error(what), residual_history(std::move(history)) {}
};

struct SynthesisError : DivergenceError {
    using DivergenceError::DivergenceError;
};

} // namespace cll
