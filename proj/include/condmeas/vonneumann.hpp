#pragma once

// Brute-force oracle for the conditioned von Neumann measurement. The joint
// state is kept as d detector wavefunctions, one per eigenvector of A, so the
// coupling U_g = exp(g A (x) p / i hbar) is an exact spectral translation of
// row k by g a_k. Conditioned statistics are then read off by direct
// expectation values on the grid.

#include <cmath>
#include <complex>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "condmeas/detector.hpp"
#include "condmeas/errors.hpp"
#include "condmeas/hilbert.hpp"

namespace condmeas::vonneumann {

using detector::DetectorGrid;
using detector::DetectorState;
using hilbert::SystemOperator;
using hilbert::SystemState;

/// Post-selection probabilities below this are treated as impossible.
inline constexpr double kMinPostSelection = 1e-12;
/// Largest detector amplitude tolerated near the grid edges after translation.
inline constexpr double kWraparoundTol = 1e-12;
inline constexpr int kMaxMomentOrder = 4;

/// Coupling strength g (length units) and the measured observable.
struct CouplingConfig {
  double g = 0.0;
  SystemOperator observable;

  CouplingConfig(double coupling, SystemOperator a) : g(coupling), observable(std::move(a)) {
    if (!std::isfinite(g)) throw ValidationError("coupling: g must be finite");
    if (!observable.is_hermitian()) throw ValidationError("coupling: observable must be Hermitian");
  }
};

/// Joint pure state: row k of `amplitudes` is the detector wavefunction attached to basis column k.
struct JointPureState {
  DetectorGrid grid;
  CMatrix basis;       // d x d unitary, columns are system basis vectors
  CMatrix amplitudes;  // d x N

  int sys_dim() const { return static_cast<int>(amplitudes.rows()); }

  double norm() const { return amplitudes.squaredNorm() * grid.dx(); }

  /// |v> (x) |psi> expressed in `basis`.
  static JointPureState product(const CVector& system_vector, const CVector& psi, const DetectorGrid& grid,
                                const CMatrix& basis) {
    if (system_vector.size() != basis.rows() || psi.size() != grid.size())
      throw ValidationError("joint state: dimension mismatch");
    const CVector coeffs = basis.adjoint() * system_vector;
    JointPureState s{grid, basis, CMatrix(coeffs.size(), grid.size())};
    for (Eigen::Index k = 0; k < coeffs.size(); ++k) s.amplitudes.row(k) = coeffs(k) * psi.transpose();
    return s;
  }

  /// Dense system-major vector in the computational system basis, sqrt(dx)-weighted.
  CVector dense_vector() const {
    const CMatrix comp = basis * amplitudes * std::sqrt(grid.dx());
    CVector out(comp.size());
    for (Eigen::Index s = 0; s < comp.rows(); ++s)
      for (Eigen::Index i = 0; i < comp.cols(); ++i) out(s * comp.cols() + i) = comp(s, i);
    return out;
  }
};

/// Translates row k by g a_k. The state must be expressed in A's eigenbasis.
/// The wraparound guard can be skipped for operator-weighted vectors such as
/// p^2 psi, whose spectral noise floor is not a physical amplitude.
inline JointPureState apply_coupling(const JointPureState& state, const CouplingConfig& cfg,
                                     bool guard_wraparound = true) {
  const hilbert::EigenSystem es = hilbert::eig_hermitian(cfg.observable);
  if (state.basis.rows() != es.vectors.rows() || (state.basis - es.vectors).cwiseAbs().maxCoeff() > 1e-10)
    throw ValidationError("apply_coupling: joint state must be expressed in the eigenbasis of the observable");
  JointPureState out = state;
  if (cfg.g == 0.0) return out;
  for (int k = 0; k < state.sys_dim(); ++k) {
    const CVector row = state.amplitudes.row(k).transpose();
    const CVector moved = detector::translate(row, state.grid, cfg.g * es.values(k));
    const double edge = detector::boundary_amplitude(moved);
    if (guard_wraparound && edge > kWraparoundTol) {
      std::ostringstream os;
      os << "grid wraparound: translated component " << k << " has boundary amplitude " << edge;
      throw NumericalGuardError(os.str());
    }
    out.amplitudes.row(k) = moved.transpose();
  }
  return out;
}

/// Weighted pure joint members of rho_S (x) rho_D, already coupled.
struct EvolvedEnsemble {
  std::vector<double> weights;
  std::vector<JointPureState> initial;
  std::vector<JointPureState> evolved;
  hilbert::EigenSystem eig;  // of the observable
};

inline EvolvedEnsemble evolve(const SystemState& rho_s, const DetectorState& rho_d, const CouplingConfig& cfg) {
  if (rho_s.dim() != cfg.observable.dim()) throw ValidationError("oracle: state and observable dimensions differ");
  EvolvedEnsemble ens;
  ens.eig = hilbert::eig_hermitian(cfg.observable);
  const auto det_members = rho_d.ensemble();
  for (const auto& [ws, v] : rho_s.ensemble()) {
    for (const auto& [wd, psi] : det_members) {
      JointPureState init = JointPureState::product(v, psi, rho_d.grid(), ens.eig.vectors);
      ens.evolved.push_back(apply_coupling(init, cfg));
      ens.initial.push_back(std::move(init));
      ens.weights.push_back(ws * wd);
    }
  }
  return ens;
}

enum class Quadrature { position, momentum };

/// Builds the sum over members of Tr[(P (x) O) |psi><psi|] where O is diagonal
/// in position (or momentum) with values `diag`.
inline cplx weighted_trace(const EvolvedEnsemble& ens, const CMatrix& post_eig, Quadrature q,
                           const std::function<cplx(double)>& diag) {
  cplx total = 0.0;
  for (std::size_t m = 0; m < ens.evolved.size(); ++m) {
    const JointPureState& s = ens.evolved[m];
    const DetectorGrid& g = s.grid;
    const int d = s.sys_dim();
    CMatrix rows = s.amplitudes;
    double measure = g.dx();
    RVector values(g.size());
    if (q == Quadrature::momentum) {
      for (int k = 0; k < d; ++k) rows.row(k) = spectral::forward(s.amplitudes.row(k).transpose()).transpose();
      measure = g.dx() / g.size();
      for (int k = 0; k < g.size(); ++k) values(k) = g.p(k);
    } else {
      for (int i = 0; i < g.size(); ++i) values(i) = g.x(i);
    }
    CVector weights(g.size());
    for (int i = 0; i < g.size(); ++i) weights(i) = diag(values(i));
    // gram(j, k) = sum_i conj(rows(j, i)) O_i rows(k, i)
    const CMatrix gram = rows.conjugate() * weights.asDiagonal() * rows.transpose();
    cplx part = 0.0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) part += post_eig(j, k) * gram(j, k);
    total += ens.weights[m] * part * measure;
  }
  return total;
}

inline void check_post_selection(const SystemOperator& post, int dim) {
  if (post.dim() != dim) throw ValidationError("post-selection: dimension differs from the system");
  if (!post.is_hermitian()) throw ValidationError("post-selection: operator must be Hermitian");
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(post.matrix(), Eigen::EigenvaluesOnly);
  if (solver.eigenvalues().minCoeff() < -1e-12 || solver.eigenvalues().maxCoeff() > 1.0 + 1e-12)
    throw ValidationError("post-selection: operator must satisfy 0 <= P_f <= 1");
}

inline double post_selection_probability(const EvolvedEnsemble& ens, const CMatrix& post_eig) {
  const double prob = weighted_trace(ens, post_eig, Quadrature::position, [](double) { return cplx{1.0}; }).real();
  if (prob < kMinPostSelection) {
    std::ostringstream os;
    os << "post-selection impossible: probability " << prob << " below " << kMinPostSelection;
    throw NumericalGuardError(os.str());
  }
  return prob;
}

/// Conditioned detector statistics.
struct ConditionedResult {
  double prob_f = 0.0;
  double mean_x = 0.0;
  double mean_p = 0.0;
  std::vector<double> moments_x;  // orders 1..max_order
  std::vector<double> moments_p;
};

/// f<x^n> = Tr[(P_f (x) x^n) rho'] / Tr[(P_f (x) 1) rho'] and likewise for p.
inline ConditionedResult conditioned_averages_grid(const SystemState& rho_s, const DetectorState& rho_d,
                                                   const CouplingConfig& cfg, const SystemOperator& post,
                                                   int max_order = 2) {
  if (max_order < 1 || max_order > kMaxMomentOrder) throw ValidationError("oracle: moment order must lie in [1, 4]");
  check_post_selection(post, rho_s.dim());
  const EvolvedEnsemble ens = evolve(rho_s, rho_d, cfg);
  const CMatrix post_eig = ens.eig.vectors.adjoint() * post.matrix() * ens.eig.vectors;
  ConditionedResult r;
  r.prob_f = post_selection_probability(ens, post_eig);
  for (int n = 1; n <= max_order; ++n) {
    auto power = [n](double v) { return cplx{std::pow(v, n)}; };
    r.moments_x.push_back(weighted_trace(ens, post_eig, Quadrature::position, power).real() / r.prob_f);
    r.moments_p.push_back(weighted_trace(ens, post_eig, Quadrature::momentum, power).real() / r.prob_f);
  }
  r.mean_x = r.moments_x.front();
  r.mean_p = r.moments_p.front();
  return r;
}

/// f<e^{i lambda x}> or f<e^{i lambda p}>.
inline cplx characteristic_function(double lambda, Quadrature which, const SystemState& rho_s,
                                    const DetectorState& rho_d, const CouplingConfig& cfg, const SystemOperator& post) {
  check_post_selection(post, rho_s.dim());
  const EvolvedEnsemble ens = evolve(rho_s, rho_d, cfg);
  const CMatrix post_eig = ens.eig.vectors.adjoint() * post.matrix() * ens.eig.vectors;
  const double prob = post_selection_probability(ens, post_eig);
  return weighted_trace(ens, post_eig, which, [lambda](double v) { return std::exp(kI * lambda * v); }) / prob;
}

/// n-th conditioned moment of x or p, n <= 4.
inline double conditioned_moment(int n, Quadrature which, const SystemState& rho_s, const DetectorState& rho_d,
                                 const CouplingConfig& cfg, const SystemOperator& post) {
  if (n < 1 || n > kMaxMomentOrder) throw ValidationError("oracle: moment order must lie in [1, 4]");
  const ConditionedResult r = conditioned_averages_grid(rho_s, rho_d, cfg, post, n);
  return which == Quadrature::position ? r.moments_x.back() : r.moments_p.back();
}

/// Tr_D of the evolved joint state, in the computational system basis.
inline SystemState reduced_state_grid(const SystemState& rho_s, const DetectorState& rho_d, const CouplingConfig& cfg) {
  const EvolvedEnsemble ens = evolve(rho_s, rho_d, cfg);
  CMatrix out = CMatrix::Zero(rho_s.dim(), rho_s.dim());
  for (std::size_t m = 0; m < ens.evolved.size(); ++m) {
    const JointPureState& s = ens.evolved[m];
    const CMatrix block = s.amplitudes.conjugate() * s.amplitudes.transpose();  // (j,k) = <psi_j|psi_k>
    out += ens.weights[m] * s.grid.dx() * block.transpose();
  }
  return SystemState::from_matrix(ens.eig.vectors * out * ens.eig.vectors.adjoint(), "grid reduced state");
}

/// Conditioned position density P(x_i | f) on the grid.
inline RVector conditioned_position_density(const SystemState& rho_s, const DetectorState& rho_d,
                                            const CouplingConfig& cfg, const SystemOperator& post) {
  check_post_selection(post, rho_s.dim());
  const EvolvedEnsemble ens = evolve(rho_s, rho_d, cfg);
  const CMatrix post_eig = ens.eig.vectors.adjoint() * post.matrix() * ens.eig.vectors;
  const double prob = post_selection_probability(ens, post_eig);
  const DetectorGrid& g = rho_d.grid();
  RVector density = RVector::Zero(g.size());
  for (std::size_t m = 0; m < ens.evolved.size(); ++m) {
    const CMatrix& a = ens.evolved[m].amplitudes;
    for (int i = 0; i < g.size(); ++i) {
      const CVector col = a.col(i);
      density(i) += ens.weights[m] * (col.adjoint() * post_eig * col)(0, 0).real();
    }
  }
  return density / prob;
}

}  // namespace condmeas::vonneumann
