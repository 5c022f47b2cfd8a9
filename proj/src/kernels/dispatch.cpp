#include <atomic>

#include "medmamba/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace medmamba::kernels {

namespace serial {
void linear_forward(LinearDims, std::span<const double>, std::span<const double>, std::span<const double>,
                    std::span<double>);
void linear_backward_input(LinearDims, std::span<const double>, std::span<const double>, std::span<double>);
void linear_backward_weight(LinearDims, std::span<const double>, std::span<const double>, std::span<double>,
                            std::span<double>);
void scan_forward(ScanDims, const ScanArgs&, std::span<double>);
void scan_backward(ScanDims, const ScanArgs&, std::span<const double>, const ScanGrads&);
}  // namespace serial

namespace parallel {
void linear_forward(LinearDims, std::span<const double>, std::span<const double>, std::span<const double>,
                    std::span<double>);
void linear_backward_input(LinearDims, std::span<const double>, std::span<const double>, std::span<double>);
void linear_backward_weight(LinearDims, std::span<const double>, std::span<const double>, std::span<double>,
                            std::span<double>);
void scan_forward(ScanDims, const ScanArgs&, std::span<double>);
void scan_backward(ScanDims, const ScanArgs&, std::span<const double>, const ScanGrads&);
}  // namespace parallel

namespace {
#ifdef _OPENMP
std::atomic<Backend> g_backend{Backend::parallel};
#else
std::atomic<Backend> g_backend{Backend::serial};
#endif
}  // namespace

Backend default_backend() noexcept { return g_backend.load(std::memory_order_relaxed); }

void set_default_backend(Backend backend) noexcept { g_backend.store(backend, std::memory_order_relaxed); }

const char* backend_name(Backend backend) noexcept {
  return backend == Backend::serial ? "serial" : "parallel";
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void linear_forward(Backend backend, LinearDims dims, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  if (backend == Backend::serial) return serial::linear_forward(dims, x, w, bias, y);
  parallel::linear_forward(dims, x, w, bias, y);
}

void linear_backward_input(Backend backend, LinearDims dims, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  if (backend == Backend::serial) return serial::linear_backward_input(dims, dy, w, dx);
  parallel::linear_backward_input(dims, dy, w, dx);
}

void linear_backward_weight(Backend backend, LinearDims dims, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw, std::span<double> dbias) {
  if (backend == Backend::serial) return serial::linear_backward_weight(dims, dy, x, dw, dbias);
  parallel::linear_backward_weight(dims, dy, x, dw, dbias);
}

void scan_forward(Backend backend, ScanDims dims, const ScanArgs& args, std::span<double> y) {
  if (backend == Backend::serial) return serial::scan_forward(dims, args, y);
  parallel::scan_forward(dims, args, y);
}

void scan_backward(Backend backend, ScanDims dims, const ScanArgs& args, std::span<const double> dy,
                   const ScanGrads& grads) {
  if (backend == Backend::serial) return serial::scan_backward(dims, args, dy, grads);
  parallel::scan_backward(dims, args, dy, grads);
}

}  // namespace medmamba::kernels
