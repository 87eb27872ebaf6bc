#pragma once

#include <stdexcept>
#include <string>

namespace symq {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// expression tree
struct CompleteTreeError : Error { using Error::Error; };
struct IncompleteTreeError : Error { using Error::Error; };
struct UnknownOpError : Error { using Error::Error; };
struct TooLongError : Error { using Error::Error; };
struct ConstantCountMismatchError : Error { using Error::Error; };

struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t pos)
      : Error(msg + " at position " + std::to_string(pos)), position(pos) {}
  std::size_t position;
};

// data generation
struct BudgetExceededError : Error { using Error::Error; };
struct DomainTooSmallError : Error { using Error::Error; };

// environment
struct DegenerateTargetError : Error { using Error::Error; };
struct EpisodeFinishedError : Error { using Error::Error; };

// model
struct NonFiniteInputError : Error { using Error::Error; };
struct NonFiniteLossError : Error { using Error::Error; };
struct VersionMismatchError : Error { using Error::Error; };
struct CorruptCheckpointError : Error { using Error::Error; };

// training
struct NoPositivesError : Error { using Error::Error; };
struct EmptyCorpusError : Error { using Error::Error; };

// inference
struct AllRestartsFailedError : Error { using Error::Error; };

// online search
struct EmptyBufferError : Error { using Error::Error; };

// benchmarks
struct UnknownSuiteError : Error { using Error::Error; };
struct EntryMismatchError : Error { using Error::Error; };

}  // namespace symq
