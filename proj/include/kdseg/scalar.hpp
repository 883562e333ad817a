#pragma once

// Scalar precision is a build-time choice. The default library is 32-bit; the
// kdseg_f64 target defines KDSEG_USE_F64 and is used only by gradient checks.
// The inline namespace keeps both builds linkable into one binary.

#if defined(KDSEG_USE_F64)
#define KDSEG_SCALAR_NS f64
#else
#define KDSEG_SCALAR_NS f32
#endif

#define KDSEG_BEGIN_NAMESPACE \
  namespace kdseg {           \
  inline namespace KDSEG_SCALAR_NS {
#define KDSEG_END_NAMESPACE \
  }                         \
  }

KDSEG_BEGIN_NAMESPACE

#if defined(KDSEG_USE_F64)
using Scalar = double;
#else
using Scalar = float;
#endif

KDSEG_END_NAMESPACE
