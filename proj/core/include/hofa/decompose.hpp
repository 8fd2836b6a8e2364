#pragma once

// Arithmetic weak regularity: decompose a bounded f as a short combination of
// degree <= k-1 phase polynomials plus a residual that is small in U^k.  The
// sigma-algebra is generated by the level sets of the phases found so far;
// projections are exact level-set averages when the group fits in a table and
// Gram-Schmidt estimates beyond that.

#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hofa/func.hpp"
#include "hofa/poly.hpp"
#include "hofa/rng.hpp"
#include "hofa/schedule.hpp"

namespace hofa {

// Span-closed list of constant-free phase polynomials.  phases[0] is the zero
// polynomial; the rest are every nonzero combination of the basis elements
// (multiples run over Z/p classically and over the non-classical modulus for
// p = 2), deduplicated after normalization.  `basis` marks the maximally
// independent generating subset: membership in the span is plain equality of
// normalized polynomials, so independence pruning is a lookup.
struct PhaseList {
  FpParams params;
  std::vector<CubicPolynomial> phases;
  std::vector<std::size_t> basis;

  static PhaseList empty(const FpParams& params);

  std::size_t size() const { return phases.size(); }
  bool contains(const CubicPolynomial& q) const;

  // Adds q (constant stripped) as a basis element and re-closes the span.
  // Returns false when q is already spanned.  Throws PhaseCapExceeded when the
  // closure would exceed reg.max_phases, the desk stand-in for p^{2 eta^-2}.
  bool add_generator(const CubicPolynomial& q, const ParamSchedule& sched);
};

// E(f | B_L) as an oracle plus its expansion over the span phases.
struct SigmaProjection {
  std::vector<cdouble> coeffs;  // aligned with L.phases
  QueryOracle structured;       // x -> sum_i coeffs[i] omega^{q_i(x)}
  double energy = 0.0;          // ||E(f|B)||_2^2
  bool exact = false;
};

SigmaProjection sigma_algebra_project(const QueryOracle& f, const PhaseList& L, double delta,
                                      RngStream& rng, const ParamSchedule& sched);

struct Decomposition {
  PhaseList phases;
  std::vector<cdouble> coeffs;    // aligned with phases.phases
  QueryOracle residual;           // f minus the structured part
  double residual_uk = 0.0;       // ||residual||_{U^k} (exact when tabulable)
  int iterations = 0;
  std::vector<double> energy;     // energy after each projection, mean-only first
  std::string note;               // nonempty when a cap stopped the loop early
  std::string report_json() const;
};

// Finds a degree <= k-1 polynomial correlating with the (1-bounded) input, or
// nullopt when the structure hunt come up sound-empty.
using FindPoly =
    std::function<std::optional<CubicPolynomial>(const QueryOracle&, RngStream&)>;

// The standard engines: top Goldreich-Levin character as a linear phase
// (k = 2), find_quadratic (k = 3), find_cubic (k = 4).  Structure-absence
// errors surface as nullopt; budget and usage errors propagate.
FindPoly find_poly_for(int k, double eps, double delta, const ParamSchedule& sched);

// The energy-increment loop.  The residual gate reads eps on the norm scale:
// exact mode compares exact_uk_norm(g, k) <= eps, sampled mode runs uk_test at
// eps^{2^k} floored by reg.gate_floor.  Iterations are capped by
// ceil(10/9 eta^-2) with eta = reg.eta; find_poly failures propagate after
// reg.poly_retries retries.
Decomposition weak_regularity(const QueryOracle& f, double eps, double delta, int k,
                              const FindPoly& find_poly, RngStream& rng,
                              const ParamSchedule& sched);

}  // namespace hofa
