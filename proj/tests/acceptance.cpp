// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "condmeas/detector.hpp"
#include "condmeas/polynomials.hpp"
#include "condmeas/runner.hpp"
#include "condmeas/vonneumann.hpp"
#include "condmeas/weakvalue.hpp"
#include "test_support.hpp"

using namespace condmeas;
using detector::DetectorGrid;
using detector::hg_wavefunction;
using hilbert::pauli;
using hilbert::SystemOperator;
using hilbert::SystemState;
using testsupport::close_rel;

namespace {

struct Criterion {
  int id;
  std::string title;
  bool pass = true;
  std::string detail{};
};

// Worst hygiene defects over every reduced state produced below.
struct Hygiene {
  double trace = 0.0;
  double herm = 0.0;
  double min_eig = 0.0;
  long count = 0;

  void check(const CMatrix& rho) {
    const auto d = hilbert::state_defects(rho);
    trace = std::max(trace, d.trace_error);
    herm = std::max(herm, d.hermiticity);
    min_eig = std::min(min_eig, d.min_eigenvalue);
    ++count;
  }
} hygiene;

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

SystemState polarization_state() {
  CVector v(2);
  v << std::cos(runner::presets::kAngle), std::sin(runner::presets::kAngle);
  return SystemState::from_vector(v);
}

SystemOperator diagonal_post() {
  CVector v(2);
  v << M_SQRT1_2, M_SQRT1_2;
  return SystemOperator::projector(v);
}

struct RandomScenario {
  SystemState rho;
  SystemOperator a;
  SystemOperator post;
};

RandomScenario random_scenario(int d, bool rank_one) {
  for (;;) {
    SystemState rho = SystemState::from_matrix(testsupport::random_density(d));
    SystemOperator a = SystemOperator::hermitian(testsupport::random_hermitian(d));
    SystemOperator post = SystemOperator::hermitian(testsupport::random_effect(d, rank_one));
    if ((post.matrix() * rho.matrix()).trace().real() > 1e-3) return {rho, a, post};
  }
}

// Criteria 1, 4 and 6 share the randomized suite.
void randomized_suite(Criterion& c1, Criterion& c4, Criterion& c6) {
  constexpr double sigma = 1.5;
  const std::vector<double> ratios{0.1, 0.5, 1.0, 2.0, 3.0};
  testsupport::rng(7001);
  int n = 0;
  double worst1 = 0.0, worst6 = 0.0, worst_delta0 = 0.0, worst_eq = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int round = 0; round < 4; ++round)
    for (int d : {2, 3})
      for (bool rank_one : {true, false})
        for (int m = 0; m <= 2; ++m)
          for (double ratio : ratios) {
            const auto sc = random_scenario(d, rank_one);
            const double g = ratio * sigma * (testsupport::uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
            const DetectorGrid grid = DetectorGrid::for_scenario(sigma, std::abs(g), 1.0, 4096);
            const auto det = hg_wavefunction(m, sigma, grid);
            const vonneumann::CouplingConfig cfg(g, sc.a);
            const auto oracle = vonneumann::conditioned_averages_grid(sc.rho, det, cfg, sc.post);
            const auto assembled =
                weakvalue::conditioned_averages_from_weak_values(weakvalue::joint_weak_values(sc.rho, det, cfg, sc.post), g);
            worst1 = std::max({worst1, rel_err(assembled.mean_x, oracle.mean_x), rel_err(assembled.mean_p, oracle.mean_p)});
            worst6 = std::max({worst6, rel_err(assembled.moments_x[1], oracle.moments_x[1]),
                               rel_err(assembled.moments_p[1], oracle.moments_p[1])});

            const auto hg = weakvalue::hg_closed_forms(sc.rho, sc.a, g, sigma, m, sc.post);
            hygiene.check(hg.reduced.matrix());
            hygiene.check(vonneumann::reduced_state_grid(sc.rho, det, cfg).matrix());
            if (m == 0) {
              worst_delta0 = std::max(worst_delta0, std::abs(hg.delta));
              const double x11 = g * hg.A_w.value.real();
              const double p11 = g / (4.0 * sigma * sigma) * 2.0 * hg.A_w.value.imag();
              worst_eq = std::max({worst_eq, rel_err(hg.mean_x, x11), rel_err(hg.mean_p, p11),
                                   rel_err(hg.mean_x, oracle.mean_x), rel_err(hg.mean_p, oracle.mean_p)});
            }
            ++n;
          }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  c1.pass = n >= 200 && worst1 <= 1e-6;
  c1.detail = fmt("%.0f scenarios, max rel err %.2e, %.1f s at N=4096", n, worst1, secs);
  if (secs >= 60.0) c1.detail += " (runtime target of 60 s missed)";
  c6.pass = n >= 200 && worst6 <= 1e-6;
  c6.detail = fmt("%.0f scenarios, max rel err of second moments %.2e", n, worst6);
  c4.pass = worst_delta0 == 0.0 && worst_eq <= 1e-6;
  c4.detail = fmt("max |Delta_0| = %.1e, m=0 closed form vs grid/weak-value formula %.2e", worst_delta0, worst_eq);
}

void reduced_state_closed_form(Criterion& c) {
  testsupport::rng(7002);
  const double sigma = 1.3;
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    CVector r = testsupport::random_complex(3, 1).real().cast<cplx>();
    r *= testsupport::uniform(0.0, 1.0) / r.norm();
    const SystemState rho = SystemState::from_bloch(r(0).real(), r(1).real(), r(2).real());
    for (int m = 0; m <= 3; ++m)
      for (int k = 0; k <= 10; ++k) {
        const double ratio = 0.5 * k;
        const auto hg = weakvalue::hg_closed_forms(rho, pauli(3), ratio * sigma, sigma, m, SystemOperator::identity(2), 1.0,
                                                   weakvalue::Evaluation::dense_superoperator);
        const double f = poly::laguerre(m, ratio * ratio) * std::exp(-0.5 * ratio * ratio);
        const CMatrix expected = 0.5 * (CMatrix::Identity(2, 2) + r(2) * pauli(3).matrix() +
                                        f * (r(0) * pauli(1).matrix() + r(1) * pauli(2).matrix()));
        worst = std::max(worst, hilbert::max_abs(hg.reduced.matrix() - expected));
        hygiene.check(hg.reduced.matrix());
      }
  }
  c.pass = worst <= 1e-12;
  c.detail = fmt("max |rho' - closed form| = %.2e over m<=3, g/sigma in [0,5]", worst);
}

// Criteria 3 and 5 use the polarization preset swept with the CLI machinery.
void polarization_sweeps(Criterion& c3, Criterion& c5) {
  const double sigma = runner::presets::kSigma;
  scenario::Scenario s = runner::presets::polarization(0.0);
  s.coupling.g.reset();
  s.coupling.sweep = scenario::SweepSpec{1e-3 * sigma, 20.0 * sigma, 40, "log"};
  const auto out = runner::sweep_coupling(s);

  bool ok3 = true, ok5 = true;
  double weak_err = 0.0, strong_err = 0.0, min_weak = 1e300, worst_p = 0.0;
  for (const auto& row : out.rows) {
    if (!row.error.empty() || !row.grid || !row.closed) {
      ok3 = ok5 = false;
      continue;
    }
    worst_p = std::max({worst_p, std::abs(row.grid->p[0]), std::abs(row.closed->p[0])});
    hygiene.check(weakvalue::hg_closed_forms(polarization_state(), pauli(3), row.g, sigma, row.mode, diagonal_post())
                      .reduced.matrix());
    if (row.g == out.rows.front().g) {
      for (double v : {row.A_w.real(), row.grid->x[0] / row.g, row.closed->x[0] / row.g}) {
        weak_err = std::max(weak_err, std::abs(v - (1.0 + M_SQRT2)));
        min_weak = std::min(min_weak, v);
      }
    }
    if (row.g == out.rows.back().g)
      for (double v : {row.A_w.real(), row.grid->x[0] / row.g, row.closed->x[0] / row.g})
        strong_err = std::max(strong_err, std::abs(v - M_SQRT1_2));
  }
  ok3 = ok3 && weak_err <= 1e-4 && strong_err <= 1e-3 && min_weak > 1.0;
  c3.pass = ok3;
  c3.detail = fmt("weak-limit err %.2e (min value %.6f > 1), err at g=20 sigma %.2e", weak_err, min_weak, strong_err);

  // include g = 0 and a dense linear sweep for the momentum check
  scenario::Scenario lin = s;
  lin.coupling.sweep = scenario::SweepSpec{0.0, 20.0 * sigma, 41, "linear"};
  for (const auto& row : runner::sweep_coupling(lin).rows) {
    if (!row.error.empty() || !row.grid || !row.closed) {
      ok5 = false;
      continue;
    }
    worst_p = std::max({worst_p, std::abs(row.grid->p[0]), std::abs(row.closed->p[0])});
  }
  c5.pass = ok5 && worst_p <= 1e-10;
  c5.detail = fmt("max |f<p>| over both paths, m in {0,1,2} = %.2e", worst_p);
}

void superposition_suite(Criterion& c) {
  testsupport::rng(7007);
  const double sigma = 1.4;
  const std::vector<cplx> coeffs{M_SQRT1_2, M_SQRT1_2};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 2;
    const SystemState rho = SystemState::from_matrix(testsupport::random_density(d));
    const SystemOperator a = SystemOperator::hermitian(testsupport::random_hermitian(d));
    const double g = testsupport::uniform(-4.0, 4.0);
    const auto det = detector::hg_superposition(coeffs, sigma, DetectorGrid::for_scenario(sigma, std::abs(g), 1.0, 4096));
    const auto grid = vonneumann::reduced_state_grid(rho, det, vonneumann::CouplingConfig(g, a));
    const auto closed = weakvalue::superposition_reduced_state(rho, a, g, sigma, coeffs);
    worst = std::max(worst, hilbert::max_abs(closed.matrix() - grid.matrix()));
    hygiene.check(closed.matrix());
    hygiene.check(grid.matrix());
  }
  c.pass = worst <= 1e-7;
  c.detail = fmt("20 random points, max |closed - grid| = %.2e", worst);
}

void polynomial_identities(Criterion& c) {
  testsupport::rng(7008);
  double worst = 0.0;
  for (int m = 0; m <= 5; ++m)
    for (int i = 0; i < 100; ++i) {
      const double x = testsupport::uniform(-3.0, 3.0);
      const double lhs = poly::dmn_polynomial(m, m, x);
      const double rhs = std::tgamma(m + 1.0) * poly::laguerre(m, x * x);
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
    }

  using poly::Rational;
  auto r = [](std::int64_t n, std::int64_t d = 1) { return Rational::make(n, d); };
  const std::vector<std::vector<Rational>> lag{{r(1)}, {r(1), r(-1)}, {r(1), r(-2), r(1, 2)}, {r(1), r(-3), r(3, 2), r(-1, 6)}};
  const std::vector<std::vector<Rational>> corr{{r(0)}, {r(2)}, {r(4), r(-2)}, {r(6), r(-6), r(1)}};
  bool table = true;
  for (int m = 0; m <= 3; ++m) {
    table = table && poly::laguerre_coefficients(m) == lag[static_cast<std::size_t>(m)];
    std::vector<Rational> scaled;
    for (const auto& q : poly::derivative(poly::laguerre_coefficients(m))) scaled.push_back(q * r(-2));
    table = table && scaled == corr[static_cast<std::size_t>(m)];
  }
  c.pass = worst <= 1e-9 && table;
  c.detail = fmt("max rel err of D^m_m - m! L_m(x^2) = %.2e, Laguerre table ", worst) + (table ? "exact" : "MISMATCH");
}

void wigner_layer(Criterion& c) {
  const DetectorGrid g = DetectorGrid::symmetric(1024, 18.0);
  const double sigma = 1.5;
  double worst_w = 0.0, worst_x = 0.0, worst_p = 0.0;
  for (int m = 0; m <= 3; ++m) {
    const auto s = hg_wavefunction(m, sigma, g);
    const auto t = detector::wigner(s);
    for (int i = 0; i < g.size(); ++i) {
      for (int l = 0; l < g.size(); ++l)
        worst_w = std::max(worst_w, std::abs(t.values(i, l) - detector::hg_wigner_closed(m, sigma, 1.0, t.x(i), t.p(l))));
      worst_x = std::max(worst_x, std::abs(t.values.row(i).sum() * t.dp() - std::norm(s.wavefunction()(i))));
    }
    for (int l = 0; l < g.size(); ++l)
      worst_p = std::max(worst_p, std::abs(t.values.col(l).sum() * t.dx() - detector::momentum_density(s, t.p(l))));
  }
  c.pass = worst_w <= 1e-8 && worst_x <= 1e-8 && worst_p <= 1e-8;
  c.detail = fmt("pointwise %.2e, position marginal %.2e, momentum marginal %.2e", worst_w, worst_x, worst_p);
}

}  // namespace

int main() {
  std::vector<Criterion> cs{
      {1, "assembled first moments match the grid oracle"},
      {2, "qubit reduced state closed form"},
      {3, "weak and strong limits of the polarization sweep"},
      {4, "Gaussian mode has no momentum correction"},
      {5, "momentum shift vanishes for the all-real scenario"},
      {6, "assembled second moments match the grid oracle"},
      {7, "superposition reduced state matches the grid"},
      {8, "polynomial identities"},
      {9, "Wigner transform and marginals"},
      {10, "density-matrix hygiene"},
  };
  auto run = [&](auto&& f, auto&... c) {
    try {
      f(c...);
    } catch (const std::exception& e) {
      ((c.pass = false, c.detail = std::string("exception: ") + e.what()), ...);
    }
  };
  run(randomized_suite, cs[0], cs[3], cs[5]);
  run(reduced_state_closed_form, cs[1]);
  run(polarization_sweeps, cs[2], cs[4]);
  run(superposition_suite, cs[6]);
  run(polynomial_identities, cs[7]);
  run(wigner_layer, cs[8]);

  cs[9].pass = hygiene.count > 0 && hygiene.trace <= 1e-10 && hygiene.herm <= 1e-10 && hygiene.min_eig >= -1e-10;
  cs[9].detail = fmt("%.0f states, max trace err %.2e, max hermiticity err %.2e", hygiene.count, hygiene.trace, hygiene.herm) +
                 fmt(", min eigenvalue %.2e", hygiene.min_eig);

  int failures = 0;
  for (const auto& c : cs) {
    std::printf("%s criterion %d: %s (%s)\n", c.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), c.detail.c_str());
    failures += c.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(cs.size()) - failures, cs.size());
  return failures == 0 ? 0 : 1;
}
