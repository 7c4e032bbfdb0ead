#include "mine/common.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mine {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::NumericDomain: return "numeric domain";
    case ErrorKind::Config: return "config";
    case ErrorKind::IntegrationDiverged: return "integration diverged";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::BoundViolation: return "bound violation";
    case ErrorKind::TheoremCheck: return "theorem check";
    case ErrorKind::TrainingDiverged: return "training diverged";
    case ErrorKind::DataQuality: return "data quality";
    case ErrorKind::Provenance: return "provenance";
    case ErrorKind::Usage: return "usage";
  }
  return "error";
}

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace mine
