#pragma once

// Goldreich-Levin over F_p^n, classical and noisy, via prefix-bucket descent.

#include <vector>

#include "hofa/estimators.hpp"

namespace hofa {

struct WeightedCharacter {
  FpVector r;
  double weight;  // estimated |f-hat(r)|
};
using SpectrumList = std::vector<WeightedCharacter>;

// B_{a,b} = {r : first a digits of r equal b}; buckets at fixed a partition G
struct Bucket {
  int a = 0;
  FpVector prefix;  // length a
};

// Estimates sum_{r in B} |f-hat(r)|^2 to additive error eps at confidence
// 1-delta (scheduled sample cap may widen the reported error).
Estimate bucket_norm_estimate(const QueryOracle& f, const Bucket& B, double eps, double delta,
                              RngStream& rng, const ParamSchedule& sched);

// Completeness: every r with |f-hat(r)| >= tau is listed. Soundness: every
// listed r has |f-hat(r)| >= tau/2. Holds with probability >= 1-delta.
SpectrumList goldreich_levin(const QueryOracle& f, double tau, double delta, RngStream& rng,
                             const ParamSchedule& sched);

// f' agrees with a bounded f within omega per point except on an eta-fraction;
// listed r satisfy |f-hat(r)| >= tau/2 - (3/2)(eta + (1-eta) omega).
// eta = omega = 0 reduces to goldreich_levin exactly.
SpectrumList noisy_goldreich_levin(const QueryOracle& f, double tau, double eta, double omega,
                                   double delta, RngStream& rng, const ParamSchedule& sched);

}  // namespace hofa
