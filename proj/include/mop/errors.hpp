#pragma once

#include <stdexcept>
#include <string>

namespace mop {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- data / template errors ------------------------------------------------
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct UnknownPlaceholder : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// ---- provider errors --------------------------------------------------------
struct BudgetExhausted : Error { using Error::Error; };
struct TransportError : Error { using Error::Error; };
struct RateLimited : Error { using Error::Error; };
struct MissingScriptEntry : Error { using Error::Error; };

// ---- numeric / clustering errors --------------------------------------------
struct DimensionMismatch : Error { using Error::Error; };
struct DegenerateInput : Error { using Error::Error; };
struct ZeroKernelMass : Error { using Error::Error; };

// ---- search / harness errors -------------------------------------------------
struct EmptyGeneration : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct MissingCell : Error { using Error::Error; };
struct DegenerateTask : Error { using Error::Error; };

}  // namespace mop
