#include <atomic>
#include <cstdlib>
#include <string>

#include "kdseg/error.hpp"
#include "kdseg/kernels.hpp"

KDSEG_BEGIN_NAMESPACE

#if defined(KDSEG_HAVE_AVX2_KERNELS)
const KernelTable& avx2_kernel_table();
#endif

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick_default() {
  const char* env = std::getenv("KDSEG_KERNELS");
  const std::string choice = env ? env : "auto";
  if (choice == "scalar") return &scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{pick_default()};
  return slot;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(KDSEG_HAVE_AVX2_KERNELS)
  static const bool supported = cpu_has_avx2_fma();
  return supported ? &avx2_kernel_table() : nullptr;
#else
  (void)cpu_has_avx2_fma;
  return nullptr;
#endif
}

const KernelTable& active_kernels() { return *active_slot().load(std::memory_order_relaxed); }

void set_active_backend(Backend backend) {
  if (backend == Backend::kScalar) {
    active_slot().store(&scalar_kernels());
    return;
  }
  const KernelTable* t = avx2_kernels();
  if (t == nullptr) throw ConfigError("AVX2 kernels are not available on this build or CPU");
  active_slot().store(t);
}

KDSEG_END_NAMESPACE
