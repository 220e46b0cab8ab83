#pragma once

#include <stdexcept>
#include <string>

namespace hlstmat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain of a mathematical function (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A reduction or attention over zero elements.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (feature files, checkpoints, JSONL).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace hlstmat
