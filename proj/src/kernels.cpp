#include "htmpc/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "htmpc/common.hpp"

namespace htmpc::kernels {

namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scaled_sum_scalar(double a, const double* x, double b, const double* y, double* out,
                       std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void clamp_vec_scalar(const double* x, const double* lo, const double* hi, double* out,
                      std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = x[i];
    v = v < lo[i] ? lo[i] : v;
    v = v > hi[i] ? hi[i] : v;
    out[i] = v;
  }
}

void extrapolate_scalar(const double* u, const double* u_prev, double beta, double* out,
                        std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = u[i] + beta * (u[i] - u_prev[i]);
}

void affine_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   const double* b, double* y) {
  if (b) {
    std::memcpy(y, b, rows * sizeof(double));
  } else {
    std::memset(y, 0, rows * sizeof(double));
  }
  // Column sweep: y[i] accumulates terms in ascending column order, the same
  // per-element order the AVX2 variant uses.
  for (std::size_t j = 0; j < cols; ++j) {
    const double xj = x[j];
    const double* col = a + j * rows;
    for (std::size_t i = 0; i < rows; ++i) y[i] += col[i] * xj;
  }
}

void matvec_acc_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                       double* y) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double xj = x[j];
    const double* col = a + j * rows;
    for (std::size_t i = 0; i < rows; ++i) y[i] += col[i] * xj;
  }
}

double diff_norm2_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

const Backend kScalar = {
    "scalar",         dot_scalar,    axpy_scalar,       scaled_sum_scalar,
    clamp_vec_scalar, extrapolate_scalar, affine_scalar, matvec_acc_scalar,
    diff_norm2_scalar,
};

std::atomic<const Backend*> g_active{nullptr};

const Backend* resolve(const char* name) {
  if (!name || std::strcmp(name, "auto") == 0) {
    const Backend* avx2 = avx2_backend();
    return avx2 ? avx2 : &kScalar;
  }
  if (std::strcmp(name, "scalar") == 0) return &kScalar;
  if (std::strcmp(name, "avx2") == 0) {
    const Backend* avx2 = avx2_backend();
    if (!avx2) throw DataError("kernel backend 'avx2' not available on this CPU/build");
    return avx2;
  }
  throw DataError(std::string("unknown kernel backend '") + name + "'");
}

}  // namespace

const Backend& scalar_backend() { return kScalar; }

const Backend& active() {
  const Backend* b = g_active.load(std::memory_order_acquire);
  if (!b) {
    b = resolve(std::getenv("HTMPC_KERNELS"));
    g_active.store(b, std::memory_order_release);
  }
  return *b;
}

void force(const char* name) { g_active.store(resolve(name), std::memory_order_release); }

}  // namespace htmpc::kernels
