#pragma once

// Self-correction of cubic Reed-Muller codes beyond the list-decoding radius.
// For p >= 3 a pigeonhole twist reduces to the U^4 inverse engine: some
// omega^{t f} has large U^4 norm, so find_cubic on it recovers t times the
// codeword.  p = 2 runs the same engine on (-1)^f and certifies that the
// output is classical.  Every return is verified against the raw word.

#include <optional>
#include <string>
#include <vector>

#include "hofa/estimators.hpp"
#include "hofa/func.hpp"
#include "hofa/poly.hpp"
#include "hofa/rng.hpp"
#include "hofa/schedule.hpp"
#include "hofa/u4.hpp"

namespace hofa {

// A received word f: G -> F_p with the planted generator kept around when the
// instance is synthetic.
struct CodewordFunction {
  FiniteFunction word;                       // FuncKind::Fp table
  std::optional<CubicPolynomial> generator;  // planted truth, tests only

  static CodewordFunction from_polynomial(const CubicPolynomial& P);
  // Each symbol independently replaced by a uniform residue (the original
  // value included) with probability rate: agreement = 1 - rate (1 - 1/p).
  static CodewordFunction plant_noisy(const CubicPolynomial& P, double rate, RngStream& rng);

  QueryOracle phase_oracle(int t) const;  // x -> omega^{t word(x)}
};

// Normalized Hamming distance, exact count over the stored table.  Q classical.
double hamming_dist(const CodewordFunction& f, const CubicPolynomial& Q);
// Sampled estimate with Chernoff error bars (eps additive, 1 - delta).
Estimate hamming_dist_estimate(const CodewordFunction& f, const CubicPolynomial& Q, double eps,
                               double delta, RngStream& rng, const ParamSchedule& sched);

// max_{t != 0} |E omega^{t (f - P)}|; always >= (p/(p-1)) (agreement - 1/p).
double pigeonhole_correlation(const FiniteFunction& word, const CubicPolynomial& P);

// The p = 2 agreement-amplification chain, computed exactly through the DFT
// of (-1)^{f - P}: first_order = E_a |H_a| / 2^n and second_order is the mean
// agreement of second derivatives.  They satisfy first_order = 1/2 + 2 eps^2
// and second_order >= 1/2 + 8 eps^4 with eps = agreement - 1/2.
struct ConvexityChain {
  double eps = 0.0;
  double first_order = 0.0;
  double second_order = 0.0;
};
ConvexityChain convexity_chain(const FiniteFunction& word, const CubicPolynomial& P,
                               const ParamSchedule& sched);

// Majority pre-corrector: the degree-4 derivative of a cubic vanishes, so
// P(x) = -sum_{eps != 0} (-1)^{|eps|} P(x + eps . h) for every 4-tuple h of
// directions; vote that identity over `votes` random tuples per point.  Only
// tuples whose 16 vertices are pairwise distinct vote (a repeated vertex
// telescopes the sum onto the raw symbol and would echo the noise).  The
// plurality margin per vote is rho^15 where rho = max_t |E omega^{t(f-P)}|,
// so `votes` must scale like margin^-2; self_correct escalates it until the
// output looks cubic.  Deterministic for a fixed stream regardless of
// `threads` (0 = hardware concurrency): every point forks its own stream.
// Soundness is unaffected: every output is re-verified against the raw word.
FiniteFunction majority_smooth(const FiniteFunction& word, long long votes, RngStream& rng,
                               int threads = 1);

// Fraction of sampled non-degenerate 4-flats whose alternating sum vanishes
// mod p.  Exactly 1 on a cubic codeword; about 1/p on a random word.  The
// normalized excess (pass - 1/p)/(1 - 1/p) is approximately rho^16, which
// makes it a cheap stopping rule for vote escalation.
double flat_consistency(const FiniteFunction& word, long long samples, RngStream& rng);

struct CorrectionReport {
  CubicPolynomial q;  // classical
  double dist = 1.0;  // exact normalized Hamming distance to the raw word
  int t_used = 0;     // p >= 3: the twist that verified; 0 for p = 2
  int attempts = 0;
  std::vector<StageRecord> stages;
  std::string report_json() const;
};

// Returns a classical cubic Q with dist(f, Q) <= 1 - 1/p - rm.eta, or throws
// CorrectionFailed when no twist (p >= 3) or retry (p = 2) verifies.
CorrectionReport self_correct(const CodewordFunction& f, double eps, double delta, RngStream& rng,
                              const ParamSchedule& sched);

// p = 2 certification: the classical polynomial equal to q as a phase, if one
// exists (every non-classical numerator divisible by half its modulus).
std::optional<CubicPolynomial> classical_form(const CubicPolynomial& q);

}  // namespace hofa
