#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <span>

namespace tempofuse::detail {

/// Owns an FFTW real-to-complex plan and its buffers for one transform size.
/// Planning is serialized internally; execution on distinct instances is
/// thread-safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::span<double> input() noexcept { return {in_, n_}; }
  std::span<const std::complex<double>> output() const noexcept {
    return {reinterpret_cast<const std::complex<double>*>(out_), n_ / 2 + 1};
  }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

/// Complex-to-real inverse (unnormalized).
class InverseRealFft {
 public:
  explicit InverseRealFft(std::size_t n);
  ~InverseRealFft();
  InverseRealFft(const InverseRealFft&) = delete;
  InverseRealFft& operator=(const InverseRealFft&) = delete;

  std::span<std::complex<double>> input() noexcept {
    return {reinterpret_cast<std::complex<double>*>(in_), n_ / 2 + 1};
  }
  std::span<const double> output() const noexcept { return {out_, n_}; }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* in_;
  double* out_;
  fftw_plan plan_;
};

}  // namespace tempofuse::detail
