#pragma once

#include <cstddef>

// Low-level vector kernels behind the solver iterations and network forward
// passes. Every kernel has a scalar reference implementation and an AVX2
// variant; one backend is selected per process at first use (CPUID probe,
// overridable via force() or the HTMPC_KERNELS environment variable).
//
// Contracts the rest of the library relies on:
//  - Elementwise kernels (clamp_vec, extrapolate, scaled_sum, axpy) produce
//    bitwise identical results on every backend: same single-rounding ops per
//    element, no reductions, no FMA contraction.
//  - affine/matvec_acc take A in column-major layout (leading dimension =
//    rows) and accumulate each output element over columns in ascending
//    order. The AVX2 variant vectorizes across rows and uses FMA, so results
//    may differ from scalar in the last ulps; order per element is the same.
//  - dot/diff_norm2 are reductions; backends may differ in the last ulps.
namespace htmpc::kernels {

struct Backend {
  const char* name;

  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  /// out = a * x + b * y
  void (*scaled_sum)(double a, const double* x, double b, const double* y, double* out,
                     std::size_t n);
  /// out[i] = min(hi[i], max(x[i], lo[i]))
  void (*clamp_vec)(const double* x, const double* lo, const double* hi, double* out,
                    std::size_t n);
  /// out[i] = u[i] + beta * (u[i] - u_prev[i])
  void (*extrapolate)(const double* u, const double* u_prev, double beta, double* out,
                      std::size_t n);
  /// y = A x + b with column-major A (rows x cols); pass b = nullptr for y = A x.
  void (*affine)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y);
  /// y += A x with column-major A.
  void (*matvec_acc)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                     double* y);
  /// sum((x - y)^2)
  double (*diff_norm2)(const double* x, const double* y, std::size_t n);
};

/// Backend in use. Resolved once: HTMPC_KERNELS env var if set, else CPUID.
const Backend& active();

const Backend& scalar_backend();

/// AVX2 backend, or nullptr when the CPU (or build target) lacks AVX2+FMA.
const Backend* avx2_backend();

/// Override backend selection ("scalar", "avx2", "auto"). Throws on unknown or
/// unavailable names. Intended for tests and the CLI.
void force(const char* name);

}  // namespace htmpc::kernels
