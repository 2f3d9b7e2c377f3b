#pragma once

// Generalized weak values and the closed-form description of conditioned
// detector statistics:
//
//  * joint weak values on system (x) detector, whose real parts assemble the
//    conditioned moments exactly for any coupling strength;
//  * reduced-system expressions driven by a decoherence kernel
//    (rho'_S, the X and P operations, the system weak value);
//  * Hermite-Gauss closed forms via functions of the Lindblad operation,
//    including the momentum correction Delta_m and mode superpositions.

#include <array>
#include <cmath>
#include <complex>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "condmeas/detector.hpp"
#include "condmeas/errors.hpp"
#include "condmeas/hilbert.hpp"
#include "condmeas/polynomials.hpp"
#include "condmeas/vonneumann.hpp"

namespace condmeas::weakvalue {

using detector::DecoherenceKernel;
using detector::DetectorState;
using hilbert::SystemOperator;
using hilbert::SystemState;
using vonneumann::ConditionedResult;
using vonneumann::CouplingConfig;

inline constexpr double kMinDenominator = 1e-12;

/// A complex weak value with its numerator and denominator kept apart, so
/// that near-orthogonal post-selections show up as a small denominator.
struct WeakValueResult {
  cplx value{0.0};
  cplx numerator{0.0};
  double denominator = 0.0;
};

inline WeakValueResult make_weak_value(cplx numerator, double denominator) {
  if (!(denominator >= kMinDenominator)) {
    std::ostringstream os;
    os << "weak value: post-selection probability " << denominator << " below " << kMinDenominator;
    throw NumericalGuardError(os.str());
  }
  return {numerator / denominator, numerator, denominator};
}

/// Tr[P_f A rho] / Tr[P_f rho].
inline WeakValueResult generalized_weak_value(const SystemOperator& post, const SystemOperator& a,
                                              const CMatrix& rho) {
  if (post.dim() != a.dim() || rho.rows() != a.dim()) throw ValidationError("weak value: dimension mismatch");
  return make_weak_value((post.matrix() * a.matrix() * rho).trace(), (post.matrix() * rho).trace().real());
}

inline WeakValueResult generalized_weak_value(const SystemOperator& post, const SystemOperator& a,
                                              const SystemState& rho) {
  return generalized_weak_value(post, a, rho.matrix());
}

/// Generalized weak value with the post-interaction reduced state as pre-selection.
inline WeakValueResult system_weak_value(const SystemOperator& post, const SystemOperator& a,
                                         const SystemState& reduced) {
  return generalized_weak_value(post, a, reduced);
}

// ---------------------------------------------------------------------------
// joint weak values (grid evaluation)
// ---------------------------------------------------------------------------

struct JointWeakValues {
  cplx A_w{0.0};
  cplx x_w{0.0};
  cplx p_w{0.0};
  cplx x2_w{0.0};
  cplx Ax_w{0.0};
  cplx A2_w{0.0};
  cplx p2_w{0.0};
  double denominator = 0.0;  // Tr[P'_SD rho_SD]
};

/// Tr[P'_SD O rho_SD] / Tr[P'_SD rho_SD] for the seven joint operators, with
/// P'_SD = U^dagger (P_f (x) 1) U, evaluated as <U psi| P_f (x) 1 |U O psi>.
inline JointWeakValues joint_weak_values(const SystemState& rho_s, const DetectorState& rho_d,
                                         const CouplingConfig& cfg, const SystemOperator& post) {
  vonneumann::check_post_selection(post, rho_s.dim());
  const vonneumann::EvolvedEnsemble ens = vonneumann::evolve(rho_s, rho_d, cfg);
  const CMatrix post_eig = ens.eig.vectors.adjoint() * post.matrix() * ens.eig.vectors;
  const RVector& a = ens.eig.values;
  const auto& grid = rho_d.grid();
  const RVector xs = grid.positions();

  enum Op { kA, kX, kP, kX2, kAX, kA2, kP2, kCount };
  std::array<cplx, kCount> sums{};
  double denominator = 0.0;

  for (std::size_t m = 0; m < ens.initial.size(); ++m) {
    const vonneumann::JointPureState& init = ens.initial[m];
    const CMatrix& evolved = ens.evolved[m].amplitudes;
    const int d = init.sys_dim();

    auto sandwich = [&](const CMatrix& rows) {
      vonneumann::JointPureState op_state = init;
      op_state.amplitudes = rows;
      const CMatrix moved = vonneumann::apply_coupling(op_state, cfg, false).amplitudes;
      const CMatrix gram = evolved.conjugate() * moved.transpose();
      cplx part = 0.0;
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) part += post_eig(j, k) * gram(j, k);
      return part * grid.dx();
    };

    const CMatrix& psi = init.amplitudes;
    CMatrix with_a = psi, with_a2 = psi, with_x = psi, with_x2 = psi, with_ax = psi, with_p = psi, with_p2 = psi;
    for (int k = 0; k < d; ++k) {
      with_a.row(k) *= a(k);
      with_a2.row(k) *= a(k) * a(k);
      const CVector row = psi.row(k).transpose();
      with_x.row(k) = row.cwiseProduct(xs.cast<cplx>()).transpose();
      with_x2.row(k) = row.cwiseProduct(xs.cwiseAbs2().cast<cplx>()).transpose();
      with_ax.row(k) = a(k) * with_x.row(k);
      with_p.row(k) = detector::apply_momentum(row, grid, 1).transpose();
      with_p2.row(k) = detector::apply_momentum(row, grid, 2).transpose();
    }
    const double w = ens.weights[m];
    sums[kA] += w * sandwich(with_a);
    sums[kX] += w * sandwich(with_x);
    sums[kP] += w * sandwich(with_p);
    sums[kX2] += w * sandwich(with_x2);
    sums[kAX] += w * sandwich(with_ax);
    sums[kA2] += w * sandwich(with_a2);
    sums[kP2] += w * sandwich(with_p2);
    denominator += w * sandwich(psi).real();
  }
  if (!(denominator >= kMinDenominator)) {
    std::ostringstream os;
    os << "joint weak values: post-selection probability " << denominator << " below " << kMinDenominator;
    throw NumericalGuardError(os.str());
  }
  JointWeakValues j;
  j.denominator = denominator;
  j.A_w = sums[kA] / denominator;
  j.x_w = sums[kX] / denominator;
  j.p_w = sums[kP] / denominator;
  j.x2_w = sums[kX2] / denominator;
  j.Ax_w = sums[kAX] / denominator;
  j.A2_w = sums[kA2] / denominator;
  j.p2_w = sums[kP2] / denominator;
  return j;
}

/// f<x> = Re x_w + g Re A_w, f<p> = Re p_w,
/// f<x^2> = Re x2_w + 2 g Re Ax_w + g^2 Re A2_w, f<p^2> = Re p2_w.
inline ConditionedResult conditioned_averages_from_weak_values(const JointWeakValues& jwv, double g) {
  ConditionedResult r;
  r.prob_f = jwv.denominator;
  r.mean_x = jwv.x_w.real() + g * jwv.A_w.real();
  r.mean_p = jwv.p_w.real();
  r.moments_x = {r.mean_x, jwv.x2_w.real() + 2.0 * g * jwv.Ax_w.real() + g * g * jwv.A2_w.real()};
  r.moments_p = {r.mean_p, jwv.p2_w.real()};
  return r;
}

// ---------------------------------------------------------------------------
// reduced-system expressions from a decoherence kernel
// ---------------------------------------------------------------------------

/// Multiplies each A-eigenbasis element rho_jk by f(g (a_j - a_k)) and rotates back.
template <typename F>
CMatrix apply_gap_function(const CMatrix& rho, const hilbert::EigenSystem& es, double g, F&& f) {
  const CMatrix& v = es.vectors;
  CMatrix eig = v.adjoint() * rho * v;
  for (Eigen::Index j = 0; j < eig.rows(); ++j)
    for (Eigen::Index k = 0; k < eig.cols(); ++k) eig(j, k) *= f(g * (es.values(j) - es.values(k)));
  return v * eig * v.adjoint();
}

/// rho'_jk = gamma(g (a_j - a_k)) rho_jk in the eigenbasis of A.
inline SystemState reduced_state(const SystemState& rho_s, const SystemOperator& a, double g,
                                 const DecoherenceKernel& kernel) {
  const auto es = hilbert::eig_hermitian(a);
  return SystemState::from_matrix(apply_gap_function(rho_s.matrix(), es, g, kernel.gamma), "reduced state");
}

struct XpOperations {
  CMatrix X;
  CMatrix P;
};

/// X(rho)_jk = xi(y) rho_jk and P(rho)_jk = i hbar gamma'(y) rho_jk, y = g (a_j - a_k).
inline XpOperations xp_operations(const SystemState& rho_s, const SystemOperator& a, double g,
                                  const DecoherenceKernel& kernel, double hbar = 1.0) {
  const auto es = hilbert::eig_hermitian(a);
  XpOperations ops;
  ops.X = apply_gap_function(rho_s.matrix(), es, g, kernel.xi);
  ops.P = apply_gap_function(rho_s.matrix(), es, g,
                             [&](double y) { return kI * hbar * kernel.gamma_prime(y); });
  return ops;
}

/// Conditioned averages assembled from the reduced-system quantities.
struct KernelAverages {
  SystemState reduced;
  WeakValueResult A_w;
  double re_x_w = 0.0;  // Tr[P_f X(rho)] / Tr[P_f rho']
  double re_p_w = 0.0;  // Tr[P_f P(rho)] / Tr[P_f rho']
  double mean_x = 0.0;
  double mean_p = 0.0;
};

inline KernelAverages kernel_averages(const SystemState& rho_s, const SystemOperator& a, double g,
                                      const DecoherenceKernel& kernel, const SystemOperator& post,
                                      double hbar = 1.0) {
  SystemState reduced = reduced_state(rho_s, a, g, kernel);
  const WeakValueResult aw = system_weak_value(post, a, reduced);
  const XpOperations ops = xp_operations(rho_s, a, g, kernel, hbar);
  const double re_x = (post.matrix() * ops.X).trace().real() / aw.denominator;
  const double re_p = (post.matrix() * ops.P).trace().real() / aw.denominator;
  return KernelAverages{std::move(reduced), aw, re_x, re_p, re_x + g * aw.value.real(), re_p};
}

// ---------------------------------------------------------------------------
// Hermite-Gauss closed forms
// ---------------------------------------------------------------------------

/// How functions of ad[A] / L[A] are evaluated: elementwise over eigenvalue
/// gaps, or through the dense superoperator eigen-calculus.
enum class Evaluation { gap_elementwise, dense_superoperator };

/// Measurement strength epsilon = (g / 2 sigma)^2.
inline double measurement_strength(double g, double sigma) {
  const double r = g / (2.0 * sigma);
  return r * r;
}

struct HgClosedForm {
  SystemState reduced;
  WeakValueResult A_w;
  cplx delta{0.0};
  CMatrix correction;  // M_m(rho_S)
  double epsilon = 0.0;
  double mean_x = 0.0;
  double mean_p = 0.0;
};

/// rho'_{S,m} = L_m[-2 eps L[A]] e^{eps L[A]} (rho_S),
/// M_m(rho_S) = -2 L'_m[-2 eps L[A]] e^{eps L[A]} (rho_S),
/// Delta_m = Tr[P_f A M_m] / Tr[P_f rho'_{S,m}],
/// f<x> = g Re A_w, f<p> = g hbar / (2 sigma)^2 * 2 Im(A_w + Delta_m).
inline HgClosedForm hg_closed_forms(const SystemState& rho_s, const SystemOperator& a, double g, double sigma, int m,
                                    const SystemOperator& post, double hbar = 1.0,
                                    Evaluation how = Evaluation::gap_elementwise) {
  if (m < 0 || m > detector::kMaxModeOrder) throw ValidationError("hg_closed_forms: mode order must lie in [0, 20]");
  detector::check_sigma(sigma);
  if (post.dim() != a.dim() || rho_s.dim() != a.dim()) throw ValidationError("hg_closed_forms: dimension mismatch");
  const double eps = measurement_strength(g, sigma);

  CMatrix reduced, correction;
  if (how == Evaluation::dense_superoperator) {
    const hilbert::Superoperator lind = hilbert::lindblad_action(a);
    reduced = hilbert::apply_superop_function(
        [&](cplx z) { return poly::laguerre(m, (-2.0 * eps * z).real()) * std::exp(eps * z); }, lind, rho_s.matrix());
    correction = hilbert::apply_superop_function(
        [&](cplx z) { return -2.0 * poly::laguerre_prime(m, (-2.0 * eps * z).real()) * std::exp(eps * z); }, lind,
        rho_s.matrix());
  } else {
    // on the coherence |j><k| the operation -2 eps L[A] has eigenvalue eps d^2, d = a_j - a_k
    const auto es = hilbert::eig_hermitian(a);
    reduced = apply_gap_function(rho_s.matrix(), es, 1.0, [&](double d) {
      return poly::laguerre(m, eps * d * d) * std::exp(-0.5 * eps * d * d);
    });
    correction = apply_gap_function(rho_s.matrix(), es, 1.0, [&](double d) {
      return -2.0 * poly::laguerre_prime(m, eps * d * d) * std::exp(-0.5 * eps * d * d);
    });
  }
  HgClosedForm out{SystemState::from_matrix(reduced, "HG reduced state"), {}, 0.0, correction, eps, 0.0, 0.0};
  out.A_w = system_weak_value(post, a, out.reduced);
  out.delta = (post.matrix() * a.matrix() * correction).trace() / out.A_w.denominator;
  out.mean_x = g * out.A_w.value.real();
  out.mean_p = g * hbar / (4.0 * sigma * sigma) * 2.0 * (out.A_w.value + out.delta).imag();
  return out;
}

/// rho'_S = sum_{m,n} c_m c_n^* / sqrt(m! n!) D^m_n[sqrt(eps) ad[A]] e^{eps L[A]} (rho_S).
/// The signed root g / 2 sigma is used for sqrt(eps) so that negative couplings
/// translate the detector the right way for odd m + n.
inline SystemState superposition_reduced_state(const SystemState& rho_s, const SystemOperator& a, double g,
                                               double sigma, const std::vector<cplx>& c,
                                               Evaluation how = Evaluation::gap_elementwise) {
  detector::check_sigma(sigma);
  if (c.empty() || static_cast<int>(c.size()) > detector::kMaxModeOrder + 1)
    throw ValidationError("superposition: needs 1 to 21 coefficients");
  double total = 0.0;
  for (const auto& z : c) total += std::norm(z);
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "superposition: coefficients have squared norm " << total << ", expected 1";
    throw ValidationError(os.str());
  }
  const double root = g / (2.0 * sigma);
  const double eps = root * root;
  const int top = static_cast<int>(c.size());
  auto transfer = [&](cplx z) {
    cplx sum = 0.0;
    for (int m = 0; m < top; ++m) {
      for (int n = 0; n < top; ++n) {
        const cplx w = c[static_cast<std::size_t>(m)] * std::conj(c[static_cast<std::size_t>(n)]);
        if (w == 0.0) continue;
        const double norm = std::exp(-0.5 * (poly::log_factorial(m) + poly::log_factorial(n)));
        sum += w * norm * poly::dmn_polynomial(m, n, root * z);
      }
    }
    return sum * std::exp(-0.5 * eps * z * z);
  };
  CMatrix out;
  if (how == Evaluation::dense_superoperator) {
    out = hilbert::apply_superop_function(transfer, hilbert::adjoint_action(a), rho_s.matrix());
  } else {
    out = apply_gap_function(rho_s.matrix(), hilbert::eig_hermitian(a), 1.0, [&](double d) { return transfer(d); });
  }
  return SystemState::from_matrix(out, "superposition reduced state");
}

}  // namespace condmeas::weakvalue
