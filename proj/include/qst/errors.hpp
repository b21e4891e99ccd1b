#pragma once

#include <stdexcept>
#include <string>

namespace qst {

/// Coarse failure category. The CLI maps these onto process exit codes.
enum class ErrorKind {
  Validation,  // bad arguments, violated preconditions / invariants
  Numerical,   // decomposition or reconstruction could not be completed
  Io,          // files, manifests, checksums
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define QST_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what)                             \
        : Error(ErrorKind::Kind, std::string(#Name ": ") + what) {}    \
  };

QST_DEFINE_ERROR(ValidationError, Validation)
QST_DEFINE_ERROR(IndexError, Validation)
QST_DEFINE_ERROR(DimensionMismatch, Validation)
QST_DEFINE_ERROR(DomainError, Validation)
QST_DEFINE_ERROR(InconsistentRdms, Validation)
QST_DEFINE_ERROR(IncompleteBasis, Validation)
QST_DEFINE_ERROR(NotRegularTriangular, Validation)
QST_DEFINE_ERROR(RdmMismatch, Validation)
QST_DEFINE_ERROR(ConvergenceFailure, Numerical)
QST_DEFINE_ERROR(DegeneratePencil, Numerical)
QST_DEFINE_ERROR(NonUniqueSuspect, Numerical)
QST_DEFINE_ERROR(PivotFailure, Numerical)
QST_DEFINE_ERROR(IoError, Io)

#undef QST_DEFINE_ERROR

}  // namespace qst
