#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mine {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
  InvalidInput,
  NumericDomain,
  Config,
  IntegrationDiverged,
  Shape,
  Capacity,
  BoundViolation,
  TheoremCheck,
  TrainingDiverged,
  DataQuality,
  Provenance,
  Usage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Carries the index of the step (or epoch / atom) at which things went wrong.
class IndexedError : public Error {
 public:
  IndexedError(ErrorKind kind, std::size_t index, const std::string& what)
      : Error(kind, what + " (index " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Keeps freed training temporaries in the heap instead of returning them to
// the OS on every step (glibc only; a no-op elsewhere).
void configure_allocator();

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace mine
