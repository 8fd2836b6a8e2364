#pragma once

// Exact brute-force oracles (DFT, U^k norms, mixed convolution) and the
// sampling estimators every algorithm consumes.

#include <functional>
#include <utility>
#include <vector>

#include "hofa/func.hpp"
#include "hofa/schedule.hpp"

namespace hofa {

struct Estimate {
  cdouble value{0.0, 0.0};
  double additive_error = 0.0;
  double confidence = 0.0;
};

// --- exact mode -------------------------------------------------------------

// f-hat(r) = E_x f(x) omega^{-r.x}, fast radix-p transform
FiniteFunction exact_dft(const FiniteFunction& f, const ParamSchedule& sched);
// O(p^{2n}) double loop, cross-check oracle
FiniteFunction exact_dft_naive(const FiniteFunction& f);
// inverse: f(x) = sum_r f-hat(r) omega^{r.x}
FiniteFunction exact_idft(const FiniteFunction& fhat, const ParamSchedule& sched);

// Spec_gamma(f) = {r : |f-hat(r)| >= gamma}, from the exact transform
std::vector<std::pair<FpVector, cdouble>> exact_spectrum(const FiniteFunction& f, double gamma,
                                                         const ParamSchedule& sched);

// recursion ||f||_{U^k}^{2^k} = E_h ||d_h f||_{U^{k-1}}^{2^{k-1}}, base U^2 = ||f-hat||_4
double exact_uk_norm(const FiniteFunction& f, int k, const ParamSchedule& sched);
// naive (k+1)-fold enumeration, cross-check oracle
double exact_uk_norm_naive(const FiniteFunction& f, int k);

// diamond(f1,f2,f3,f4)(w,h) = E_{x,y,y'} f4(x,y) conj(f3(x,y+h)) conj(f2(x+w,y')) f1(x+w,y'+h)
FiniteFunction exact_mixed_convolution(const FiniteFunction& f4, const FiniteFunction& f3,
                                       const FiniteFunction& f2, const FiniteFunction& f1,
                                       const ParamSchedule& sched);
FiniteFunction exact_mixed_convolution(const FiniteFunction& f, const ParamSchedule& sched);
// [f] = <diamond f, diamond f>^{1/8}
double exact_sq_brac(const FiniteFunction& f, const ParamSchedule& sched);

// --- sampled mode -----------------------------------------------------------

// Estimate of <f, g> = E_x f(x) conj(g(x)) with additive error eps at confidence 1-delta
Estimate approx_iprod(const QueryOracle& f, const QueryOracle& g, double eps, double delta,
                      RngStream& rng, const ParamSchedule& sched);

// Estimate of E_x f(x) over sampled points (the Lemma 4.1 workhorse)
Estimate approx_mean(const QueryOracle& f, double eps, double delta, RngStream& rng,
                     const ParamSchedule& sched);

// 1 if the sampled ||f||_{U^k}^{2^k} <= eps, else 0; issues (samples)*2^k base queries
int uk_test(const QueryOracle& f, double eps, int k, double delta, RngStream& rng,
            const ParamSchedule& sched);

// one d_{h1..hk} f(x) evaluation by the 2^k-point alternating product
cdouble sample_uk_term(const QueryOracle& f, const std::vector<FpVector>& hs, const FpVector& x);

// s-sample unbiased estimator of diamond(f)(w,h)
cdouble box_estimate(const BiOracle& f, const FpVector& w, const FpVector& h, long long s,
                     RngStream& rng);

// rejection sampler: >= t members of A, uniform over A, or DensityTooLow
std::vector<FpVector> rejection_sample(const FpParams& params,
                                       const std::function<bool(const FpVector&)>& membership,
                                       long long t, double alpha, RngStream& rng,
                                       const ParamSchedule& sched);

// --- distribution-valued maps -----------------------------------------------

struct Distribution {
  FpParams params;
  std::function<FpVector(RngStream&)> draw;
};

// fraction of i with a_i = b_i; estimates P_{a~d1, b~d2}[a = b]
Estimate dist_inner_product(const Distribution& d1, const Distribution& d2, RngStream& rng,
                            const ParamSchedule& sched);

using VecBiMap = std::function<FpVector(const FpVector&, const FpVector&)>;

// distribution of phi(x,y) - phi(x,y+h) - phi(x+w,y') + phi(x+w,y'+h)
Distribution box_dist(const FpParams& params, VecBiMap phi, FpVector w, FpVector h);

// inner-product-dist(box-dist(phi), box-dist(phi)) at (w,h)
Estimate sq_brac_dist(const FpParams& params, const VecBiMap& phi, const FpVector& w,
                      const FpVector& h, RngStream& rng, const ParamSchedule& sched);

}  // namespace hofa
