#pragma once

#include <stdexcept>

namespace cfx {

// Data does not conform to the annotation (range, category, missing column).
struct SchemaViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed annotation/CSV/model text, or an annotation breaking a schema invariant.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewPerClass : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProcessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Relative cost requested for a counterfactual identical to its query.
struct ZeroIdealCost : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

struct UnknownInstance : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSchemaMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cfx
