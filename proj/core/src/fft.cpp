#include "fft.hpp"

#include <mutex>
#include <new>

namespace tempofuse::detail {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  in_ = fftw_alloc_real(n);
  out_ = fftw_alloc_complex(n / 2 + 1);
  if (in_ == nullptr || out_ == nullptr) throw std::bad_alloc();
  std::lock_guard lock(planner_mutex());
  plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  fftw_free(in_);
  fftw_free(out_);
}

InverseRealFft::InverseRealFft(std::size_t n) : n_(n) {
  in_ = fftw_alloc_complex(n / 2 + 1);
  out_ = fftw_alloc_real(n);
  if (in_ == nullptr || out_ == nullptr) throw std::bad_alloc();
  std::lock_guard lock(planner_mutex());
  plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
}

InverseRealFft::~InverseRealFft() {
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  fftw_free(in_);
  fftw_free(out_);
}

}  // namespace tempofuse::detail
