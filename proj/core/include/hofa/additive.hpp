#pragma once

// Algorithmic Balog-Szemeredi-Gowers (edge test + BSG test) and the affine-map
// fitter for approximate Freiman homomorphisms.

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hofa/estimators.hpp"

namespace hofa {

// A subset of G with membership queries and uniform sampling.
struct SetOracle {
  FpParams params;
  std::function<bool(const FpVector&)> member;
  std::function<FpVector(RngStream&)> sample;  // uniform over the set
  double density = 0.0;                        // declared |A| / |G|

  static SetOracle from_set(const FpParams& params, const std::vector<FpVector>& elems);
};

struct EnergyReport {
  std::uint64_t quadruples = 0;  // |{(a1,a2,a3,a4) in A^4 : a1+a2 = a3+a4}|
  std::size_t set_size = 0;
  double energy = 0.0;  // quadruples / |A|^3, in [1/|A|, 1]
};

// exact count by convolution of the indicator with itself
EnergyReport exact_additive_energy(const std::vector<FpVector>& A, const FpParams& params,
                                   const ParamSchedule& sched);

// |A + A| by enumeration
std::size_t exact_sumset_size(const std::vector<FpVector>& A, int p);

// Answer 1 if >= (rho/2) t of the sampled a + b - a_i lie in A. With high
// probability: 1 => (a,b) in E_{-gamma}, 0 => (a,b) not in E_gamma, where
// E_gamma = {(a1,a2): #representations >= ((rho/2)+gamma)|A|}. The sample
// count is the scheduled desk value; gamma and delta are recorded for the
// contract but the asymptotic count gamma^-2 rho^-2 log(1/delta) is replaced
// by bsg.edge_samples.
int edge_test(const SetOracle& A, const FpVector& a, const FpVector& b, double rho, double gamma,
              double delta, RngStream& rng, const ParamSchedule& sched);

// One BSG test instance: vertex u plus a frozen parameter draw (interval for
// the gammas, all sample lists). Answers for every v come from that single
// draw, so repeated queries never contradict.
class BsgTester {
 public:
  BsgTester(SetOracle A, FpVector u, double rho, double delta, const ParamSchedule& sched,
            RngStream stream);

  int test(const FpVector& v);
  const FpVector& u() const { return u_; }
  double gamma() const { return gamma_; }

 private:
  int edge_cached(const FpVector& a, const FpVector& b);

  SetOracle A_;
  FpVector u_;
  double rho_, delta_;
  long long t_edge_;
  double gamma_ = 0.0;  // chosen interval centre
  std::vector<FpVector> e_, a_, edge_probes_;
  std::vector<int> retained_;            // indices into a_ kept by Edge(u, a_i)
  std::vector<int> B_;                   // per retained i
  std::vector<std::vector<FpVector>> c_;  // c_j^{(i)} per retained i
  std::vector<std::vector<int>> Y_;       // Edge(a_i', c_j) per retained i
  std::unordered_map<std::uint64_t, int> edge_cache_;
  RngStream stream_;
};

// Convenience wrapper: fresh tester for (u, v).
int bsg_test(const SetOracle& A, const FpVector& u, const FpVector& v, double rho, double delta,
             RngStream& rng, const ParamSchedule& sched);

using VecOracle = std::function<FpVector(const FpVector&)>;

// Fits T(x) = Lx + b agreeing with phi on a scheduled qpoly(rho) fraction of
// A, assuming phi preserves >= rho |A|^3 additive quadruples. BSG core filter,
// then difference-pair RANSAC for L, majority offset, fresh verification.
AffineMap find_affine_map(const SetOracle& A, const VecOracle& phi, double rho, double delta,
                          RngStream& rng, const ParamSchedule& sched);

// the scheduled agreement floor: max(rho^{log2(1/rho)} 2^-10, 4 p^-n)
double affine_agreement_floor(double rho, const FpParams& params);

}  // namespace hofa
