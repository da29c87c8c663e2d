#pragma once

// Scalar type used by every numeric kernel. The default build computes in
// 32-bit floats. Defining ZSSEG_REAL_DOUBLE produces a 64-bit reference build
// (used by the finite-difference gradient checks); its symbols live in a
// separate inline namespace so both builds can be linked into one binary.

#if defined(ZSSEG_REAL_DOUBLE)
#define ZSSEG_PRECISION_NS f64
#else
#define ZSSEG_PRECISION_NS f32
#endif

#define ZSSEG_NAMESPACE_BEGIN \
  namespace zsseg {           \
  inline namespace ZSSEG_PRECISION_NS {
#define ZSSEG_NAMESPACE_END \
  }                         \
  }

ZSSEG_NAMESPACE_BEGIN
#if defined(ZSSEG_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif
ZSSEG_NAMESPACE_END
