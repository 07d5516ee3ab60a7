#ifndef SDR_ERROR_HPP
#define SDR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sdr {

// Root of every error raised by the library. Callers that only need to
// distinguish "library rejected the input" from everything else catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class RankError : public Error { using Error::Error; };
class PartitionError : public Error { using Error::Error; };
class ZeroVarianceError : public Error { using Error::Error; };
class InfeasibleTargetError : public Error { using Error::Error; };
class SolverError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// A fold's buffered training set has no labeled unit to fit the outcome model.
class StarvationError : public Error {
 public:
  StarvationError(const std::string& what, int fold) : Error(what), fold_(fold) {}
  int fold() const noexcept { return fold_; }

 private:
  int fold_;
};

}  // namespace sdr

#endif  // SDR_ERROR_HPP
