#pragma once

#include <optional>

#include "hofa/func.hpp"
#include "hofa/gl.hpp"
#include "hofa/poly.hpp"
#include "hofa/rng.hpp"
#include "hofa/schedule.hpp"

namespace hofa {

// Outcome of the quadratic search.  `q` is empty when no quadratic phase with
// verified correlation at least u3.verify_floor was found; `correlation` is
// the last verified estimate (the accepted one on success, the best rejected
// one on failure).
struct QuadraticResult {
  std::optional<CubicPolynomial> q;
  double correlation = 0.0;
};

// Inverse theorem for the U^3 norm, made algorithmic.  If f correlates with a
// quadratic phase, returns that phase (possibly non-classical when p = 2)
// after verifying the correlation on fresh samples.  Never returns a
// polynomial whose verified correlation is below u3.verify_floor.
QuadraticResult find_quadratic(const QueryOracle& f, double eps, double delta, RngStream& rng,
                               const ParamSchedule& sched);

// Derivative spectrum bookkeeping shared with the U^4 pipeline: for each
// sampled direction h, the full list returned by Goldreich--Levin on the
// multiplicative derivative of f at h.
struct DerivativeSpectrum {
  FpVector h;
  SpectrumList list;
};

// Runs GL on the derivative in `count` random directions at threshold tau.
std::vector<DerivativeSpectrum> derivative_spectra(const QueryOracle& f, int count, double tau,
                                                   double delta, RngStream& rng,
                                                   const ParamSchedule& sched);

}  // namespace hofa
