#pragma once

// Finite-dimensional operator algebra for the measured system: validated
// operators and density matrices, tensor products, partial traces and the
// superoperator calculus built on ad[A] and L[A] = -ad[A]^2 / 2.
//
// Vectorization is column-stacking: vec(B)[j + k d] = B(j, k), so that
// vec(X B Y) = (Y^T (x) X) vec(B).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "condmeas/errors.hpp"

namespace condmeas {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr cplx kI{0.0, 1.0};

namespace hilbert {

/// Soft cap on the system dimension (superoperators are d^2 x d^2).
inline constexpr int kMaxSystemDim = 16;
/// Default budget for dense joint operators built by tensor().
inline constexpr std::ptrdiff_t kMaxJointDim = 4096;

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kPsdFloor = -1e-10;

inline double max_abs(const CMatrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// max |M - M^dagger| relative to max |M| (absolute when M vanishes).
inline double hermiticity_defect(const CMatrix& m) {
  const double scale = std::max(1.0, max_abs(m));
  return max_abs(m - m.adjoint()) / scale;
}

inline bool is_hermitian(const CMatrix& m, double tol = kHermitianTol) {
  return m.rows() == m.cols() && hermiticity_defect(m) <= tol;
}

/// A d x d operator on the system space.
class SystemOperator {
 public:
  /// Accepts any square matrix; the Hermitian flag is detected.
  static SystemOperator general(CMatrix m) {
    check_square(m, "operator");
    const bool herm = hilbert::is_hermitian(m);
    return SystemOperator(std::move(m), herm);
  }

  /// Requires a Hermitian matrix; throws ValidationError otherwise.
  static SystemOperator hermitian(CMatrix m, const std::string& name = "operator") {
    check_square(m, name);
    if (!hilbert::is_hermitian(m)) {
      std::ostringstream os;
      os << name << ": matrix is not Hermitian (defect " << hermiticity_defect(m) << ")";
      throw ValidationError(os.str());
    }
    // symmetrize away rounding so downstream eigensolvers see exact symmetry
    CMatrix sym = 0.5 * (m + m.adjoint());
    return SystemOperator(std::move(sym), true);
  }

  static SystemOperator identity(int d) {
    return hermitian(CMatrix::Identity(d, d), "identity");
  }

  /// |v><v| for a normalized copy of v.
  static SystemOperator projector(const CVector& v, const std::string& name = "projector") {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError(name + ": zero or non-finite vector");
    const CVector u = v / n;
    return hermitian(u * u.adjoint(), name);
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const CMatrix& matrix() const { return m_; }
  bool is_hermitian() const { return hermitian_; }

 private:
  SystemOperator(CMatrix m, bool herm) : m_(std::move(m)), hermitian_(herm) {}

  static void check_square(const CMatrix& m, const std::string& name) {
    if (m.rows() != m.cols() || m.rows() < 1)
      throw ValidationError(name + ": matrix must be square and non-empty");
    if (m.rows() > kMaxSystemDim)
      throw ValidationError(name + ": dimension exceeds the supported cap of 16");
    if (!m.allFinite()) throw ValidationError(name + ": non-finite entries");
  }

  CMatrix m_;
  bool hermitian_ = false;
};

inline SystemOperator pauli(int which) {
  CMatrix m(2, 2);
  switch (which) {
    case 1: m << 0, 1, 1, 0; break;
    case 2: m << 0, -kI, kI, 0; break;
    case 3: m << 1, 0, 0, -1; break;
    default: throw ValidationError("pauli index must be 1, 2 or 3");
  }
  return SystemOperator::hermitian(m, "pauli");
}

/// Eigendecomposition A = V diag(values) V^dagger with ascending eigenvalues.
struct EigenSystem {
  RVector values;
  CMatrix vectors;  // columns are eigenvectors
};

/// Rotates each column so its first non-negligible component is real positive.
inline void fix_phases(CMatrix& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    const double scale = v.col(c).cwiseAbs().maxCoeff();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const cplx z = v(r, c);
      if (std::abs(z) > 1e-10 * scale) {
        v.col(c) *= std::conj(z) / std::abs(z);
        break;
      }
    }
  }
}

inline EigenSystem eig_hermitian(const CMatrix& a) {
  if (!is_hermitian(a)) throw ValidationError("eig_hermitian: matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(0.5 * (a + a.adjoint()));
  if (solver.info() != Eigen::Success) throw NumericalGuardError("eig_hermitian: solver failed");
  EigenSystem es{solver.eigenvalues(), solver.eigenvectors()};
  fix_phases(es.vectors);
  return es;
}

inline EigenSystem eig_hermitian(const SystemOperator& a) { return eig_hermitian(a.matrix()); }

/// A validated density matrix: unit trace, Hermitian, positive semidefinite.
class SystemState {
 public:
  static SystemState from_matrix(const CMatrix& m, const std::string& name = "state") {
    if (m.rows() != m.cols() || m.rows() < 1) throw ValidationError(name + ": density matrix must be square");
    if (m.rows() > kMaxSystemDim) throw ValidationError(name + ": dimension exceeds the supported cap of 16");
    if (!m.allFinite()) throw ValidationError(name + ": non-finite entries");
    const double herm = max_abs(m - m.adjoint());
    if (herm > kHermitianTol) {
      std::ostringstream os;
      os << name << ": density matrix not Hermitian (defect " << herm << ")";
      throw ValidationError(os.str());
    }
    const cplx tr = m.trace();
    if (std::abs(tr - 1.0) > kTraceTol) {
      std::ostringstream os;
      os << name << ": trace " << tr.real() << " differs from 1";
      throw ValidationError(os.str());
    }
    CMatrix sym = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(sym, Eigen::EigenvaluesOnly);
    const double lo = solver.eigenvalues().minCoeff();
    if (lo < kPsdFloor) {
      std::ostringstream os;
      os << name << ": smallest eigenvalue " << lo << " below the PSD floor";
      throw ValidationError(os.str());
    }
    return SystemState(std::move(sym));
  }

  /// Pure state |v><v|; v is normalized here.
  static SystemState from_vector(const CVector& v, const std::string& name = "state") {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError(name + ": zero or non-finite state vector");
    const CVector u = v / n;
    return from_matrix(u * u.adjoint(), name);
  }

  /// Qubit state (1 + r . sigma) / 2; requires |r| <= 1.
  static SystemState from_bloch(double r1, double r2, double r3, const std::string& name = "bloch") {
    const double len = std::sqrt(r1 * r1 + r2 * r2 + r3 * r3);
    if (!std::isfinite(len) || len > 1.0 + 1e-12) {
      std::ostringstream os;
      os << name << ": Bloch vector length " << len << " exceeds 1";
      throw ValidationError(os.str());
    }
    CMatrix m = 0.5 * (CMatrix::Identity(2, 2) + r1 * pauli(1).matrix() + r2 * pauli(2).matrix() +
                       r3 * pauli(3).matrix());
    return from_matrix(m, name);
  }

  static SystemState maximally_mixed(int d) {
    return from_matrix(CMatrix::Identity(d, d) / static_cast<double>(d), "maximally mixed");
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const CMatrix& matrix() const { return m_; }

  /// Bloch components (r1, r2, r3) = Tr[rho sigma_i]; qubits only.
  std::array<double, 3> bloch() const {
    if (dim() != 2) throw ValidationError("bloch: only defined for qubits");
    return {(m_ * pauli(1).matrix()).trace().real(), (m_ * pauli(2).matrix()).trace().real(),
            (m_ * pauli(3).matrix()).trace().real()};
  }

  /// Probability-weighted pure ensemble (eigen-decomposition, zero weights dropped).
  std::vector<std::pair<double, CVector>> ensemble(double drop_below = 1e-15) const {
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(m_);
    std::vector<std::pair<double, CVector>> out;
    for (Eigen::Index k = solver.eigenvalues().size() - 1; k >= 0; --k) {
      const double w = solver.eigenvalues()(k);
      if (w > drop_below) out.emplace_back(w, solver.eigenvectors().col(k));
    }
    return out;
  }

 private:
  explicit SystemState(CMatrix m) : m_(std::move(m)) {}
  CMatrix m_;
};

/// Hygiene report used by the acceptance checks on every produced state.
struct StateDefects {
  double trace_error = 0.0;
  double hermiticity = 0.0;
  double min_eigenvalue = 0.0;

  bool ok(double tol = 1e-10) const {
    return trace_error <= tol && hermiticity <= tol && min_eigenvalue >= -tol;
  }
};

inline StateDefects state_defects(const CMatrix& m) {
  StateDefects d;
  d.trace_error = std::abs(m.trace() - 1.0);
  d.hermiticity = max_abs(m - m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(0.5 * (m + m.adjoint()), Eigen::EigenvaluesOnly);
  d.min_eigenvalue = solver.eigenvalues().minCoeff();
  return d;
}

// ---------------------------------------------------------------------------
// tensor products and partial traces
// ---------------------------------------------------------------------------

inline CMatrix tensor(const CMatrix& a, const CMatrix& b, std::ptrdiff_t max_dim = kMaxJointDim) {
  if (a.rows() != a.cols() || b.rows() != b.cols())
    throw ValidationError("tensor: operands must be square");
  const std::ptrdiff_t joint = a.rows() * b.rows();
  if (joint > max_dim) {
    std::ostringstream os;
    os << "tensor: joint dimension " << joint << " exceeds the budget " << max_dim;
    throw ValidationError(os.str());
  }
  return Eigen::kroneckerProduct(a, b).eval();
}

/// Tr_D of a dense joint density matrix ordered system-major (index s*N + i).
inline SystemState partial_trace_detector(const CMatrix& joint, int sys_dim, std::ptrdiff_t det_dim) {
  if (joint.rows() != joint.cols() || joint.rows() != sys_dim * det_dim)
    throw ValidationError("partial_trace_detector: joint dimension must equal sys_dim * det_dim");
  CMatrix out = CMatrix::Zero(sys_dim, sys_dim);
  for (int a = 0; a < sys_dim; ++a)
    for (int b = 0; b < sys_dim; ++b)
      for (std::ptrdiff_t i = 0; i < det_dim; ++i) out(a, b) += joint(a * det_dim + i, b * det_dim + i);
  return SystemState::from_matrix(out, "partial trace");
}

/// Tr_D |psi><psi| for a joint pure vector ordered system-major.
inline SystemState partial_trace_detector(const CVector& joint, int sys_dim, std::ptrdiff_t det_dim) {
  if (joint.size() != sys_dim * det_dim)
    throw ValidationError("partial_trace_detector: joint dimension must equal sys_dim * det_dim");
  // reshape so column s holds the detector amplitudes of system index s
  const Eigen::Map<const CMatrix> blocks(joint.data(), det_dim, sys_dim);
  CMatrix out = (blocks.transpose() * blocks.conjugate()).eval();
  return SystemState::from_matrix(out, "partial trace");
}

// ---------------------------------------------------------------------------
// superoperators
// ---------------------------------------------------------------------------

inline CVector vec(const CMatrix& m) { return Eigen::Map<const CVector>(m.data(), m.size()); }

inline CMatrix unvec(const CVector& v, int d) {
  if (v.size() != static_cast<Eigen::Index>(d) * d) throw ValidationError("unvec: size mismatch");
  return Eigen::Map<const CMatrix>(v.data(), d, d);
}

/// One eigenvalue of ad[A] labelled by the eigenvector pair it came from.
struct EigenGap {
  int row = 0;   // j
  int col = 0;   // k
  double gap = 0.0;  // a_j - a_k
};

/// A linear map on d x d matrices, stored as a d^2 x d^2 matrix on vec(B),
/// together with an eigen-decomposition used for analytic functions of it.
class Superoperator {
 public:
  /// Generic superoperator; diagonalized numerically.
  static Superoperator from_matrix(CMatrix s) {
    if (s.rows() != s.cols()) throw ValidationError("superoperator must be square");
    const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s.rows()))));
    if (static_cast<Eigen::Index>(d) * d != s.rows())
      throw ValidationError("superoperator size is not a perfect square");
    Eigen::ComplexEigenSolver<CMatrix> solver(s);
    if (solver.info() != Eigen::Success) throw NumericalGuardError("superoperator diagonalization failed");
    CMatrix v = solver.eigenvectors();
    CMatrix vinv = v.inverse();
    return Superoperator(d, std::move(s), solver.eigenvalues(), std::move(v), std::move(vinv), {});
  }

  int sys_dim() const { return d_; }
  const CMatrix& matrix() const { return m_; }
  const CVector& eigenvalues() const { return evals_; }
  const CMatrix& eigenvectors() const { return evecs_; }
  const CMatrix& inverse_eigenvectors() const { return evecs_inv_; }
  /// Populated when built from a Hermitian observable.
  const std::vector<EigenGap>& eigen_gaps() const { return gaps_; }

  CMatrix apply(const CMatrix& b) const {
    if (b.rows() != d_ || b.cols() != d_) throw ValidationError("superoperator: operand dimension mismatch");
    return unvec(m_ * vec(b), d_);
  }

  Superoperator scaled(cplx factor) const {
    return Superoperator(d_, m_ * factor, evals_ * factor, evecs_, evecs_inv_, gaps_);
  }

 private:
  Superoperator(int d, CMatrix m, CVector evals, CMatrix evecs, CMatrix evecs_inv, std::vector<EigenGap> gaps)
      : d_(d), m_(std::move(m)), evals_(std::move(evals)), evecs_(std::move(evecs)),
        evecs_inv_(std::move(evecs_inv)), gaps_(std::move(gaps)) {}

  friend Superoperator adjoint_action(const SystemOperator& a);
  friend Superoperator lindblad_action(const SystemOperator& a);

  static Superoperator from_observable(const SystemOperator& a, bool lindblad) {
    if (!a.is_hermitian()) throw ValidationError("superoperator: observable must be Hermitian");
    const int d = a.dim();
    const CMatrix& am = a.matrix();
    const CMatrix id = CMatrix::Identity(d, d);
    CMatrix ad = Eigen::kroneckerProduct(id, am).eval() - Eigen::kroneckerProduct(am.transpose(), id).eval();

    // vec(|v_j><v_k|) = conj(v_k) (x) v_j sits at column j + k d
    const EigenSystem es = eig_hermitian(am);
    const int d2 = d * d;
    CMatrix evecs(d2, d2);
    CVector evals(d2);
    std::vector<EigenGap> gaps;
    gaps.reserve(d2);
    for (int k = 0; k < d; ++k) {
      for (int j = 0; j < d; ++j) {
        const int idx = j + k * d;
        evecs.col(idx) = Eigen::kroneckerProduct(es.vectors.col(k).conjugate(), es.vectors.col(j)).eval();
        const double gap = es.values(j) - es.values(k);
        evals(idx) = lindblad ? -0.5 * gap * gap : gap;
        gaps.push_back({j, k, gap});
      }
    }
    CMatrix m = lindblad ? CMatrix(-0.5 * ad * ad) : ad;
    CMatrix inv = evecs.adjoint();
    return Superoperator(d, std::move(m), std::move(evals), std::move(evecs), std::move(inv), std::move(gaps));
  }

  int d_ = 0;
  CMatrix m_;
  CVector evals_;
  CMatrix evecs_;
  CMatrix evecs_inv_;
  std::vector<EigenGap> gaps_;
};

/// ad[A](B) = AB - BA.
inline Superoperator adjoint_action(const SystemOperator& a) { return Superoperator::from_observable(a, false); }

/// L[A] = -ad[A]^2 / 2.
inline Superoperator lindblad_action(const SystemOperator& a) { return Superoperator::from_observable(a, true); }

/// f(S)(rho): f is applied to each eigenvalue of S in its eigenbasis.
/// Throws DomainError when f is not finite on an eigenvalue.
inline CMatrix apply_superop_function(const std::function<cplx(cplx)>& f, const Superoperator& s,
                                      const CMatrix& rho) {
  const int d = s.sys_dim();
  if (rho.rows() != d || rho.cols() != d) throw ValidationError("apply_superop_function: dimension mismatch");
  CVector coeffs = s.inverse_eigenvectors() * vec(rho);
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
    const cplx lambda = s.eigenvalues()(i);
    const cplx fl = f(lambda);
    if (!std::isfinite(fl.real()) || !std::isfinite(fl.imag())) {
      std::ostringstream os;
      os << "apply_superop_function: function is singular at eigenvalue (" << lambda.real() << ", "
         << lambda.imag() << ")";
      throw DomainError(os.str());
    }
    coeffs(i) *= fl;
  }
  return unvec(s.eigenvectors() * coeffs, d);
}

}  // namespace hilbert
}  // namespace condmeas
