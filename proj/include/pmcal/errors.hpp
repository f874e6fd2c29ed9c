#pragma once

#include <stdexcept>
#include <string>

namespace pmcal {

// Error taxonomy maps onto CLI exit codes: config=2, data=3, numerical=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Grid/shape violations (missing cells, dimension mismatch).
struct StructuralError : DataError {
    explicit StructuralError(const std::string& what) : DataError(what) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// All outcomes in a cell identical: slope unbounded.
struct SeparationError : NumericalError {
    explicit SeparationError(const std::string& what) : NumericalError(what) {}
};

// All prices in a cell identical: design rank < 2.
struct IdentificationError : NumericalError {
    explicit IdentificationError(const std::string& what) : NumericalError(what) {}
};

}  // namespace pmcal
