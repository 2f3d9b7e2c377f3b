#pragma once

// One-dimensional detector phase space: periodic position grids, detector
// states (sampled wavefunctions, grid density matrices, Hermite-Gauss modes
// and their superpositions), Wigner distributions and the decoherence kernels
//
//   gamma(y) = Int dx <x - y/2| rho_D |x + y/2>
//   xi(y)    = Int dx x <x - y/2| rho_D |x + y/2>
//   gamma'(y)
//
// that drive every reduced-system expression.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "condmeas/errors.hpp"
#include "condmeas/hilbert.hpp"
#include "condmeas/polynomials.hpp"
#include "condmeas/spectral.hpp"

namespace condmeas::detector {

inline constexpr int kDefaultGridPoints = 4096;
inline constexpr int kMinGridPoints = 256;
inline constexpr double kNormTol = 1e-10;
/// Squared boundary amplitude allowed for freshly sampled modes.
inline constexpr double kTruncationTol = 1e-16;
inline constexpr int kMaxModeOrder = 20;

/// Periodic position grid x_i = x_min + i dx, i = 0..N-1, dx = (x_max - x_min)/N.
class DetectorGrid {
 public:
  static DetectorGrid make(int n_points, double x_min, double x_max, double hbar = 1.0) {
    if (n_points < kMinGridPoints || (n_points & (n_points - 1)) != 0) {
      std::ostringstream os;
      os << "grid: point count " << n_points << " must be a power of two >= " << kMinGridPoints;
      throw ValidationError(os.str());
    }
    if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max))
      throw ValidationError("grid: x_max must exceed x_min");
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw ValidationError("grid: hbar must be positive");
    return DetectorGrid(n_points, x_min, x_max, hbar);
  }

  static DetectorGrid symmetric(int n_points, double half_width, double hbar = 1.0) {
    return make(n_points, -half_width, half_width, hbar);
  }

  /// Grid wide enough that a width-sigma mode translated by up to
  /// shift_extent keeps 12 sigma of clearance from both boundaries.
  static DetectorGrid for_scenario(double sigma, double shift_extent, double hbar = 1.0,
                                   int n_points = kDefaultGridPoints) {
    if (!(sigma > 0.0)) throw ValidationError("grid: sigma must be positive");
    return symmetric(n_points, 12.0 * sigma + std::abs(shift_extent), hbar);
  }

  int size() const { return n_; }
  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  double hbar() const { return hbar_; }
  double dx() const { return (x_max_ - x_min_) / n_; }
  double x(long i) const { return x_min_ + static_cast<double>(i) * dx(); }
  /// Conjugate momentum in FFT order, spacing 2 pi hbar / (N dx).
  double p(long k) const {
    return 2.0 * M_PI * hbar_ * static_cast<double>(spectral::signed_index(k, n_)) / (n_ * dx());
  }

  RVector positions() const {
    RVector xs(n_);
    for (int i = 0; i < n_; ++i) xs(i) = x(i);
    return xs;
  }
  RVector momenta() const {
    RVector ps(n_);
    for (int k = 0; k < n_; ++k) ps(k) = p(k);
    return ps;
  }

  bool operator==(const DetectorGrid&) const = default;

 private:
  DetectorGrid(int n, double lo, double hi, double hbar) : n_(n), x_min_(lo), x_max_(hi), hbar_(hbar) {}
  int n_ = 0;
  double x_min_ = 0.0;
  double x_max_ = 0.0;
  double hbar_ = 1.0;
};

/// psi(x - a) by exact phase multiplication in the conjugate basis.
inline CVector translate(const CVector& psi, const DetectorGrid& grid, double a) {
  if (a == 0.0) return psi;
  CVector phi = spectral::forward(psi);
  for (int k = 0; k < grid.size(); ++k) phi(k) *= std::exp(-kI * grid.p(k) * a / grid.hbar());
  return spectral::inverse(phi);
}

/// p psi via the conjugate basis (p^power psi for power > 1).
inline CVector apply_momentum(const CVector& psi, const DetectorGrid& grid, int power = 1) {
  CVector phi = spectral::forward(psi);
  for (int k = 0; k < grid.size(); ++k) phi(k) *= std::pow(grid.p(k), power);
  return spectral::inverse(phi);
}

/// max |psi| over the outermost `band` samples at each end.
inline double boundary_amplitude(const CVector& psi, int band = 8) {
  double worst = 0.0;
  const Eigen::Index n = psi.size();
  for (int i = 0; i < band && i < n; ++i) worst = std::max({worst, std::abs(psi(i)), std::abs(psi(n - 1 - i))});
  return worst;
}

enum class StateKind { pure_wavefunction, density_matrix, hg_mode, hg_superposition };

/// A detector state on a grid. Hermite-Gauss kinds keep their analytic
/// description (sigma, m or coefficients) next to the sampled wavefunction.
class DetectorState {
 public:
  static DetectorState pure(CVector psi, const DetectorGrid& grid) {
    if (psi.size() != grid.size()) throw ValidationError("detector: wavefunction length differs from grid size");
    if (!psi.allFinite()) throw ValidationError("detector: non-finite wavefunction samples");
    const double norm = psi.squaredNorm() * grid.dx();
    if (std::abs(norm - 1.0) > kNormTol) {
      std::ostringstream os;
      os << "detector: wavefunction norm " << norm << " differs from 1";
      throw ValidationError(os.str());
    }
    DetectorState s(StateKind::pure_wavefunction, grid);
    s.psi_ = std::move(psi);
    return s;
  }

  /// Position-basis kernel rho(x_i, x_j); unit trace means sum_i rho(x_i, x_i) dx = 1.
  static DetectorState density(CMatrix rho, const DetectorGrid& grid) {
    if (rho.rows() != grid.size() || rho.cols() != grid.size())
      throw ValidationError("detector: density matrix size differs from grid size");
    const double scale = std::max(1.0, hilbert::max_abs(rho));
    if (hilbert::max_abs(rho - rho.adjoint()) > kNormTol * scale)
      throw ValidationError("detector: density matrix not Hermitian");
    const double tr = rho.trace().real() * grid.dx();
    if (std::abs(tr - 1.0) > kNormTol) throw ValidationError("detector: density matrix trace differs from 1");
    CMatrix sym = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(sym * grid.dx());
    if (solver.eigenvalues().minCoeff() < -kNormTol)
      throw ValidationError("detector: density matrix is not positive semidefinite");
    DetectorState s(StateKind::density_matrix, grid);
    for (Eigen::Index k = solver.eigenvalues().size() - 1; k >= 0; --k) {
      const double w = solver.eigenvalues()(k);
      if (w > 1e-15) s.members_.emplace_back(w, solver.eigenvectors().col(k) / std::sqrt(grid.dx()));
    }
    s.rho_ = std::make_shared<const CMatrix>(std::move(sym));
    return s;
  }

  StateKind kind() const { return kind_; }
  const DetectorGrid& grid() const { return grid_; }
  bool is_hermite_gauss() const { return kind_ == StateKind::hg_mode || kind_ == StateKind::hg_superposition; }
  double sigma() const { return sigma_; }
  int mode() const { return mode_; }
  /// Mode coefficients c_m (a single unit entry for hg_mode).
  const std::vector<cplx>& coefficients() const { return coeffs_; }

  /// Sampled wavefunction; throws for density-matrix states.
  const CVector& wavefunction() const {
    if (kind_ == StateKind::density_matrix) throw ValidationError("detector: density-matrix state has no wavefunction");
    return psi_;
  }

  /// Probability-weighted pure members (a single unit-weight member for pure kinds).
  std::vector<std::pair<double, CVector>> ensemble() const {
    if (kind_ == StateKind::density_matrix) return members_;
    return {{1.0, psi_}};
  }

  /// rho(x_i, x_j) for sample indices; zero outside the grid.
  cplx kernel(long i, long j) const {
    const long n = grid_.size();
    if (i < 0 || j < 0 || i >= n || j >= n) return 0.0;
    if (kind_ == StateKind::density_matrix) return (*rho_)(i, j);
    return psi_(i) * std::conj(psi_(j));
  }

  double position_variance() const {
    double mean = 0.0, second = 0.0;
    for (const auto& [w, psi] : ensemble()) {
      for (int i = 0; i < grid_.size(); ++i) {
        const double pr = w * std::norm(psi(i)) * grid_.dx();
        mean += pr * grid_.x(i);
        second += pr * grid_.x(i) * grid_.x(i);
      }
    }
    return second - mean * mean;
  }

 private:
  friend DetectorState hg_wavefunction(int m, double sigma, const DetectorGrid& grid);
  friend DetectorState hg_superposition(std::vector<cplx> c, double sigma, const DetectorGrid& grid);

  DetectorState(StateKind kind, DetectorGrid grid) : kind_(kind), grid_(std::move(grid)) {}

  StateKind kind_;
  DetectorGrid grid_;
  CVector psi_;
  std::shared_ptr<const CMatrix> rho_;
  std::vector<std::pair<double, CVector>> members_;
  double sigma_ = 0.0;
  int mode_ = -1;
  std::vector<cplx> coeffs_;
};

/// Normalized mode psi_m(x) = h_m(x / (sigma sqrt 2)) / sqrt(sigma sqrt 2), where h_m is the
/// normalized Hermite function; psi_0 has position variance sigma^2.
inline double hg_mode_value(int m, double sigma, double x) {
  const double scale = sigma * std::sqrt(2.0);
  return poly::hermite_functions(m, x / scale)[static_cast<std::size_t>(m)] / std::sqrt(scale);
}

inline void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("detector: sigma must be positive");
}

inline void check_truncation(const CVector& psi, const DetectorGrid& grid) {
  const double edge = std::max(std::norm(psi(0)), std::norm(psi(grid.size() - 1)));
  if (edge >= kTruncationTol) {
    std::ostringstream os;
    os << "detector: mode truncated by the grid (boundary density " << edge << ")";
    throw NumericalGuardError(os.str());
  }
}

inline DetectorState hg_wavefunction(int m, double sigma, const DetectorGrid& grid) {
  if (m < 0 || m > kMaxModeOrder) throw ValidationError("detector: mode order must lie in [0, 20]");
  check_sigma(sigma);
  CVector psi(grid.size());
  for (int i = 0; i < grid.size(); ++i) psi(i) = hg_mode_value(m, sigma, grid.x(i));
  check_truncation(psi, grid);
  DetectorState s(StateKind::hg_mode, grid);
  s.psi_ = std::move(psi);
  s.sigma_ = sigma;
  s.mode_ = m;
  s.coeffs_.assign(static_cast<std::size_t>(m) + 1, cplx{0.0});
  s.coeffs_.back() = 1.0;
  return s;
}

/// sum_m c_m psi_m; coefficients must satisfy sum |c_m|^2 = 1 within 1e-12.
inline DetectorState hg_superposition(std::vector<cplx> c, double sigma, const DetectorGrid& grid) {
  if (c.empty() || static_cast<int>(c.size()) > kMaxModeOrder + 1)
    throw ValidationError("detector: superposition needs 1 to 21 coefficients");
  check_sigma(sigma);
  double total = 0.0;
  for (const auto& z : c) total += std::norm(z);
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "detector: superposition coefficients have squared norm " << total;
    throw ValidationError(os.str());
  }
  const int top = static_cast<int>(c.size()) - 1;
  const double scale = sigma * std::sqrt(2.0);
  CVector psi = CVector::Zero(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const auto h = poly::hermite_functions(top, grid.x(i) / scale);
    for (int m = 0; m <= top; ++m) psi(i) += c[static_cast<std::size_t>(m)] * h[static_cast<std::size_t>(m)];
    psi(i) /= std::sqrt(scale);
  }
  check_truncation(psi, grid);
  DetectorState s(StateKind::hg_superposition, grid);
  s.psi_ = std::move(psi);
  s.sigma_ = sigma;
  s.coeffs_ = std::move(c);
  return s;
}

// ---------------------------------------------------------------------------
// Wigner layer
// ---------------------------------------------------------------------------

/// Four-point Lagrange interpolation of the position kernel at fractional indices.
inline cplx interpolate_kernel(const DetectorState& s, double fi, double fj) {
  const long i0 = static_cast<long>(std::floor(fi));
  const long j0 = static_cast<long>(std::floor(fj));
  const double ti = fi - static_cast<double>(i0);
  const double tj = fj - static_cast<double>(j0);
  auto weights = [](double t) {
    return std::array<double, 4>{-t * (t - 1.0) * (t - 2.0) / 6.0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                                 -(t + 1.0) * t * (t - 2.0) / 2.0, (t + 1.0) * t * (t - 1.0) / 6.0};
  };
  const auto wi = weights(ti);
  const auto wj = weights(tj);
  cplx sum = 0.0;
  if (s.kind() == StateKind::density_matrix) {
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) sum += wi[a] * wj[b] * s.kernel(i0 - 1 + a, j0 - 1 + b);
    return sum;
  }
  const CVector& psi = s.wavefunction();
  auto sample = [&](long k) -> cplx { return (k < 0 || k >= psi.size()) ? cplx{0.0} : psi(k); };
  cplx left = 0.0, right = 0.0;
  for (int a = 0; a < 4; ++a) {
    left += wi[a] * sample(i0 - 1 + a);
    right += wj[a] * sample(j0 - 1 + a);
  }
  return left * std::conj(right);
}

/// W~(x, y) = <x - y/2| rho_D |x + y/2>, cubic interpolation between samples.
inline cplx fourier_wigner(const DetectorState& s, double x, double y) {
  const DetectorGrid& g = s.grid();
  const double lo = x - 0.5 * y, hi = x + 0.5 * y;
  const double last = g.x(g.size() - 1);
  if (lo < g.x_min() || lo > last || hi < g.x_min() || hi > last) {
    std::ostringstream os;
    os << "fourier_wigner: arguments x -/+ y/2 = (" << lo << ", " << hi << ") fall outside the grid";
    throw DomainError(os.str());
  }
  return interpolate_kernel(s, (lo - g.x_min()) / g.dx(), (hi - g.x_min()) / g.dx());
}

/// W(x_i, p) by direct summation over y = 2 j dx.
inline double wigner_at(const DetectorState& s, long i, double p) {
  const DetectorGrid& g = s.grid();
  const long n = g.size();
  cplx sum = 0.0;
  for (long j = -n / 2; j < n / 2; ++j) {
    const cplx k = s.kernel(i - j, i + j);
    if (k == 0.0) continue;
    sum += k * std::exp(kI * p * (2.0 * j * g.dx()) / g.hbar());
  }
  return (sum * (2.0 * g.dx()) / (2.0 * M_PI * g.hbar())).real();
}

/// Wigner distribution sampled on (x_i, p_l), p_l = pi hbar l / (N dx), l = -N/2..N/2-1.
struct WignerTable {
  RVector x;
  RVector p;
  Eigen::MatrixXd values;  // rows follow x, columns follow p

  double dx() const { return x(1) - x(0); }
  double dp() const { return p(1) - p(0); }
};

inline constexpr int kMaxWignerGrid = 2048;

inline WignerTable wigner(const DetectorState& s) {
  const DetectorGrid& g = s.grid();
  const int n = g.size();
  if (n > kMaxWignerGrid) throw ValidationError("wigner: full tables are limited to grids of 2048 points");
  WignerTable t;
  t.x = g.positions();
  t.p.resize(n);
  const double dp = M_PI * g.hbar() / (n * g.dx());
  for (int l = 0; l < n; ++l) t.p(l) = (l - n / 2) * dp;
  t.values.resize(n, n);
  const double prefactor = 2.0 * g.dx() / (2.0 * M_PI * g.hbar());
  CVector row(n);
  for (int i = 0; i < n; ++i) {
    // index j (FFT order) carries y = 2 j dx; the inverse FFT supplies e^{+i p y / hbar}
    for (int k = 0; k < n; ++k) {
      const long j = spectral::signed_index(k, n);
      row(k) = s.kernel(i - j, i + j);
    }
    const CVector spec = spectral::inverse(row) * static_cast<double>(n);
    for (int l = 0; l < n; ++l) {
      const int k = (l - n / 2 + n) % n;
      t.values(i, l) = (spec(k) * prefactor).real();
    }
  }
  return t;
}

/// Momentum density |psi~(p)|^2 with psi~(p) = (2 pi hbar)^(-1/2) Int dx psi(x) e^{-i p x / hbar}.
inline double momentum_density(const DetectorState& s, double p) {
  const DetectorGrid& g = s.grid();
  double total = 0.0;
  for (const auto& [w, psi] : s.ensemble()) {
    cplx amp = 0.0;
    for (int i = 0; i < g.size(); ++i) amp += psi(i) * std::exp(-kI * p * g.x(i) / g.hbar());
    amp *= g.dx() / std::sqrt(2.0 * M_PI * g.hbar());
    total += w * std::norm(amp);
  }
  return total;
}

/// G(x, p) = x^2 / 2 sigma^2 + 2 sigma^2 p^2 / hbar^2.
inline double hg_phase_space_radius2(double sigma, double hbar, double x, double p) {
  return x * x / (2.0 * sigma * sigma) + 2.0 * sigma * sigma * p * p / (hbar * hbar);
}

inline double hg_wigner_closed(int m, double sigma, double hbar, double x, double p) {
  const double g = hg_phase_space_radius2(sigma, hbar, x, p);
  const double sign = (m % 2 == 0) ? 1.0 : -1.0;
  return sign / (M_PI * hbar) * poly::laguerre(m, 2.0 * g) * std::exp(-g);
}

/// Complex phase-space coordinate sqrt(2G) e^{i phi}, which is where the angle
/// tan(phi) = -2 p sigma^2 / (hbar x) enters the superposition Wigner function.
/// Using it directly keeps every D^m_n term polynomial in (x, p).
inline cplx hg_phase_coordinate(double sigma, double hbar, double x, double p) {
  return {x / sigma, -2.0 * sigma * p / hbar};
}

inline double superposition_wigner_closed(const std::vector<cplx>& c, double sigma, double hbar, double x, double p) {
  const double g = hg_phase_space_radius2(sigma, hbar, x, p);
  const cplx zeta = hg_phase_coordinate(sigma, hbar, x, p);
  const cplx zbar = std::conj(zeta);
  cplx sum = 0.0;
  const int top = static_cast<int>(c.size());
  for (int m = 0; m < top; ++m) {
    for (int n = 0; n < top; ++n) {
      const cplx weight = c[static_cast<std::size_t>(m)] * std::conj(c[static_cast<std::size_t>(n)]);
      if (weight == 0.0) continue;
      // D^m_n(r) e^{i(m-n) phi} = sum_k coef_k zeta^{m-k} zbar^{n-k}
      cplx poly_term = 0.0;
      for (int k = 0; k <= std::min(m, n); ++k)
        poly_term += poly::dmn_coefficient(m, n, k) * std::pow(zeta, m - k) * std::pow(zbar, n - k);
      const double norm = std::exp(-0.5 * (poly::log_factorial(m) + poly::log_factorial(n)));
      const double sign = (m % 2 == 0) ? 1.0 : -1.0;
      sum += weight * norm * sign * poly_term;
    }
  }
  return (sum * std::exp(-g) / (M_PI * hbar)).real();
}

// ---------------------------------------------------------------------------
// decoherence kernels
// ---------------------------------------------------------------------------

enum class KernelOrigin { closed_form_hg, grid_numeric };

/// gamma, xi and gamma' as functions of the gap variable y (length units).
struct DecoherenceKernel {
  std::function<cplx(double)> gamma;
  std::function<cplx(double)> xi;
  std::function<cplx(double)> gamma_prime;
  KernelOrigin origin = KernelOrigin::grid_numeric;
  std::vector<std::string> warnings;
};

/// <h_n| T_y |h_m> for real modes of width sigma, T_y translating by +y.
inline double hg_displacement_element(int n, int m, double sigma, double y) {
  const double alpha = y / (2.0 * sigma);
  const double norm = std::exp(-0.5 * (poly::log_factorial(m) + poly::log_factorial(n)));
  return poly::dmn_polynomial(m, n, alpha) * norm * std::exp(-0.5 * alpha * alpha);
}

inline double hg_displacement_element_prime(int n, int m, double sigma, double y) {
  const double alpha = y / (2.0 * sigma);
  const double norm = std::exp(-0.5 * (poly::log_factorial(m) + poly::log_factorial(n)));
  const double d = poly::dmn_polynomial(m, n, alpha);
  const double dp = poly::dmn_polynomial_prime(m, n, alpha);
  return norm * std::exp(-0.5 * alpha * alpha) * (dp - alpha * d) / (2.0 * sigma);
}

/// Closed-form kernel of a single Hermite-Gauss mode:
/// gamma_m(y) = L_m(y^2 / 4 sigma^2) exp(-y^2 / 8 sigma^2), xi_m = 0.
inline DecoherenceKernel hg_kernel(int m, double sigma) {
  check_sigma(sigma);
  DecoherenceKernel k;
  k.origin = KernelOrigin::closed_form_hg;
  k.gamma = [m, sigma](double y) -> cplx {
    const double s = y * y / (4.0 * sigma * sigma);
    return poly::laguerre(m, s) * std::exp(-0.5 * s);
  };
  k.xi = [](double) -> cplx { return 0.0; };
  k.gamma_prime = [m, sigma](double y) -> cplx {
    const double s = y * y / (4.0 * sigma * sigma);
    const double ds = y / (2.0 * sigma * sigma);
    return (poly::laguerre_prime(m, s) - 0.5 * poly::laguerre(m, s)) * ds * std::exp(-0.5 * s);
  };
  return k;
}

/// Closed-form kernel of sum_m c_m |h_m>, built from displacement matrix elements.
inline DecoherenceKernel hg_superposition_kernel(std::vector<cplx> c, double sigma) {
  check_sigma(sigma);
  DecoherenceKernel k;
  k.origin = KernelOrigin::closed_form_hg;
  const auto coeffs = std::make_shared<const std::vector<cplx>>(std::move(c));
  k.gamma = [coeffs, sigma](double y) -> cplx {
    cplx sum = 0.0;
    const int top = static_cast<int>(coeffs->size());
    for (int m = 0; m < top; ++m)
      for (int n = 0; n < top; ++n)
        sum += (*coeffs)[m] * std::conj((*coeffs)[n]) * hg_displacement_element(n, m, sigma, y);
    return sum;
  };
  k.gamma_prime = [coeffs, sigma](double y) -> cplx {
    cplx sum = 0.0;
    const int top = static_cast<int>(coeffs->size());
    for (int m = 0; m < top; ++m)
      for (int n = 0; n < top; ++n)
        sum += (*coeffs)[m] * std::conj((*coeffs)[n]) * hg_displacement_element_prime(n, m, sigma, y);
    return sum;
  };
  // <h_n| x |phi> = sigma (sqrt(n) <h_{n-1}|phi> + sqrt(n+1) <h_{n+1}|phi>), and
  // Int x psi(x - y/2) psi*(x + y/2) = <psi| (x - y/2) T_y |psi>
  k.xi = [coeffs, sigma](double y) -> cplx {
    cplx sum = 0.0;
    const int top = static_cast<int>(coeffs->size());
    for (int m = 0; m < top; ++m) {
      for (int n = 0; n < top; ++n) {
        const cplx w = (*coeffs)[m] * std::conj((*coeffs)[n]);
        if (w == 0.0) continue;
        double x_elem = std::sqrt(n + 1.0) * hg_displacement_element(n + 1, m, sigma, y);
        if (n > 0) x_elem += std::sqrt(static_cast<double>(n)) * hg_displacement_element(n - 1, m, sigma, y);
        sum += w * (sigma * x_elem - 0.5 * y * hg_displacement_element(n, m, sigma, y));
      }
    }
    return sum;
  };
  return k;
}

/// Kernel from grid samples: gamma(y) = sum_k w_k e^{-i p_k y / hbar} with
/// momentum weights w_k, xi from spectrally translated copies and gamma' by a
/// five-point central difference with step 1e-4 times the position width.
inline DecoherenceKernel grid_kernel(const DetectorState& s) {
  const DetectorGrid g = s.grid();
  struct Member {
    double weight;
    CVector psi;
    RVector momentum_weights;
  };
  auto members = std::make_shared<std::vector<Member>>();
  for (const auto& [w, psi] : s.ensemble()) {
    const CVector phi = spectral::forward(psi);
    RVector mw(g.size());
    for (int k = 0; k < g.size(); ++k) mw(k) = std::norm(phi(k)) * g.dx() / g.size();
    members->push_back({w, psi, mw});
  }
  const auto momenta = std::make_shared<const RVector>(g.momenta());

  DecoherenceKernel k;
  k.origin = KernelOrigin::grid_numeric;
  k.gamma = [members, momenta, g](double y) -> cplx {
    cplx sum = 0.0;
    for (const auto& mem : *members) {
      cplx part = 0.0;
      for (int i = 0; i < g.size(); ++i) part += mem.momentum_weights(i) * std::exp(-kI * (*momenta)(i) * y / g.hbar());
      sum += mem.weight * part;
    }
    return sum;
  };
  k.xi = [members, g](double y) -> cplx {
    // Int dx' (x' + y/2) psi(x') psi*(x' + y)
    cplx sum = 0.0;
    for (const auto& mem : *members) {
      const CVector ahead = translate(mem.psi, g, -y);
      cplx part = 0.0;
      for (int i = 0; i < g.size(); ++i) part += (g.x(i) + 0.5 * y) * mem.psi(i) * std::conj(ahead(i));
      sum += mem.weight * part * g.dx();
    }
    return sum;
  };
  const double width = std::sqrt(std::max(s.position_variance(), 1e-300));
  const double h = 1e-4 * width;
  auto gamma = k.gamma;
  k.gamma_prime = [gamma, h](double y) -> cplx {
    return (-gamma(y + 2.0 * h) + 8.0 * gamma(y + h) - 8.0 * gamma(y - h) + gamma(y - 2.0 * h)) / (12.0 * h);
  };
  return k;
}

enum class KernelSource { automatic, grid_numeric };

/// Kernel of a detector state. Hermite-Gauss kinds use closed forms unless the
/// grid path is requested; in that case the closed form cross-checks the grid
/// values and a warning is attached when they deviate by more than 1e-6.
inline DecoherenceKernel decoherence_kernel(const DetectorState& s, KernelSource source = KernelSource::automatic) {
  const bool hg = s.is_hermite_gauss();
  if (hg && source == KernelSource::automatic)
    return s.kind() == StateKind::hg_mode ? hg_kernel(s.mode(), s.sigma()) : hg_superposition_kernel(s.coefficients(), s.sigma());
  DecoherenceKernel k = grid_kernel(s);
  if (hg) {
    const DecoherenceKernel ref =
        s.kind() == StateKind::hg_mode ? hg_kernel(s.mode(), s.sigma()) : hg_superposition_kernel(s.coefficients(), s.sigma());
    double worst = 0.0;
    for (double t : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const double y = t * s.sigma();
      worst = std::max({worst, std::abs(k.gamma(y) - ref.gamma(y)), std::abs(k.xi(y) - ref.xi(y))});
    }
    if (worst > 1e-6) {
      std::ostringstream os;
      os << "kernel accuracy: grid kernel deviates from the closed form by " << worst;
      k.warnings.push_back(os.str());
    }
  }
  return k;
}

}  // namespace condmeas::detector
