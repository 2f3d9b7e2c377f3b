#pragma once

// FFT helpers for periodic position grids: momentum samples, exact spectral
// translation and momentum-space matrix elements.

#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

namespace condmeas::spectral {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;

/// One FFT engine per thread; plans are cached inside.
inline Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

inline CVector forward(const CVector& in) {
  CVector out(in.size());
  engine().fwd(out, in);
  return out;
}

/// Inverse transform including the 1/N factor.
inline CVector inverse(const CVector& in) {
  CVector out(in.size());
  engine().inv(out, in);
  return out;
}

/// FFT-ordered signed index: 0, 1, ..., N/2-1, -N/2, ..., -1.
inline long signed_index(long k, long n) { return k < n / 2 ? k : k - n; }

}  // namespace condmeas::spectral
