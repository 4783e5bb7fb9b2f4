#include <atomic>
#include <cstdlib>
#include <string>

#include "semtok/error.hpp"
#include "semtok/kernels.hpp"

namespace semtok::kernels {
namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(SEMTOK_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(SEMTOK_HAVE_NEON)
      return true;  // baseline on AArch64
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* pick_default() {
  if (const char* env = std::getenv("SEMTOK_KERNELS")) {
    const std::string want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
      if (want == isa_name(isa) && available(isa)) return &table(isa);
  }
  const auto isas = available_isas();
  return &table(isas.back());
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{pick_default()};
  return current;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool available(Isa isa) { return cpu_supports(isa); }

const KernelTable& table(Isa isa) {
  if (!available(isa))
    throw ContractError("kernel variant '" + std::string(isa_name(isa)) +
                        "' is not available on this machine");
  switch (isa) {
#if defined(SEMTOK_HAVE_AVX2)
    case Isa::avx2: return avx2_table();
#endif
#if defined(SEMTOK_HAVE_NEON)
    case Isa::neon: return neon_table();
#endif
    default: return scalar_table();
  }
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::scalar};
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (available(isa)) out.push_back(isa);
  return out;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace semtok::kernels
