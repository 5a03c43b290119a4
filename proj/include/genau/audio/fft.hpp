#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <fftw3.h>

#include "genau/core/error.hpp"

namespace genau::audio {

// Real FFT of fixed size backed by FFTW. Plans use FFTW_ESTIMATE so results
// are reproducible run to run. Not thread-safe; use one instance per thread.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        real_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        spec_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    if (n < 2) throw Error("audio-frontend", "FFT size must be at least 2");
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_.get(), spec_.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_.get(), real_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  void forward(std::span<const double> in, std::span<std::complex<double>> out) {
    std::copy(in.begin(), in.end(), real_.get());
    fftw_execute(forward_);
    for (std::size_t k = 0; k < bins(); ++k) out[k] = {spec_.get()[k][0], spec_.get()[k][1]};
  }

  // Inverse including the 1/n normalization.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    for (std::size_t k = 0; k < bins(); ++k) {
      spec_.get()[k][0] = in[k].real();
      spec_.get()[k][1] = in[k].imag();
    }
    fftw_execute(inverse_);
    const double s = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = real_.get()[i] * s;
  }

 private:
  struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
  };
  std::size_t n_;
  std::unique_ptr<double, FftwFree> real_;
  std::unique_ptr<fftw_complex, FftwFree> spec_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace genau::audio
