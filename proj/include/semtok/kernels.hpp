#pragma once

// Dense float64 inner loops behind a runtime-selected function table.
//
// Every ISA variant implements the same contract as the scalar reference;
// results may differ only by floating point reassociation inside a reduction.
// All matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>
#include <vector>

namespace semtok::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x p] (+)= A[m x k] * B[k x p]
  void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t p, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[m x p] (+)= A[m x k] * B[p x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t p, const double* a,
                  const double* b, double* c, bool accumulate);
  // C[k x p] (+)= A[m x k]^T * B[m x p]
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t p, const double* a,
                  const double* b, double* c, bool accumulate);
};

const KernelTable& scalar_table();
#if defined(SEMTOK_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(SEMTOK_HAVE_NEON)
const KernelTable& neon_table();
#endif

// True when the variant is compiled in and the running CPU supports it.
bool available(Isa isa);

// Table for a specific variant; throws ContractError when unavailable.
const KernelTable& table(Isa isa);

// Variants usable on this machine, scalar first.
std::vector<Isa> available_isas();

// The table used by tensor ops. Chosen once on first use: the best available
// variant, unless SEMTOK_KERNELS=scalar|avx2|neon overrides it.
const KernelTable& active();

// Replaces the active table (tests and benchmarks).
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace semtok::kernels
