#pragma once
#include <stdexcept>
#include <string>

namespace nrpos {

/// Malformed input document (bad JSON, missing keys, wrong types).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally valid input that violates a model invariant
/// (duplicate ids, missing frequency layer, empty panel list, ...).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nrpos
