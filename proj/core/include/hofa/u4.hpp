#pragma once

// The algorithmic U^4 inverse pipeline over F_p^n: derivative spectra with
// certified phi, dependent random selection behind a certifier, Freiman
// column filtering, bilinear Bogolyubov covering, Bohr decomposition and the
// high-rank Bohr set, majority-corrected psi-tilde, bi-affine extension, and
// the find_cubic orchestration that anti-differentiates the recovered
// trilinear form (division by six for p >= 5, the symmetrization module for
// p = 2, 3) and finishes with the U^3 step.

#include <array>
#include <functional>
#include <map>
#include <unordered_map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hofa/additive.hpp"
#include "hofa/estimators.hpp"
#include "hofa/func.hpp"
#include "hofa/poly.hpp"
#include "hofa/u3.hpp"

namespace hofa {

// partial_{a,b} f(x) = f(x) conj(f(x+a)) conj(f(x+b)) f(x+a+b); four base
// queries per evaluation.  For f = omega^P this is the phase of D_a D_b P.
QueryOracle mixed_derivative(const QueryOracle& f, const FpVector& a, const FpVector& b);

// --- step 1: derivative spectra ---------------------------------------------

// Membership for A_1 subset A_2 = {(a,b) : ||dhat_{a,b}f||_inf >= tau-ish} and
// certified access to phi(a,b), a heaviest character of the derivative. One
// Goldreich-Levin run per pair, cached and synchronized, so repeat queries are
// consistent.  Copies share the cache.
class DerivativeSpectrumMap {
 public:
  DerivativeSpectrumMap() = default;
  DerivativeSpectrumMap(QueryOracle f, double tau, double delta, RngStream rng,
                        const ParamSchedule& sched);

  // accepts when the GL list at threshold 2*tau is nonempty (A_1 side)
  bool member_A(const FpVector& a, const FpVector& b) const;
  // heaviest certified character, or nullopt when member_A rejects
  std::optional<FpVector> phi(const FpVector& a, const FpVector& b) const;

  const FpParams& params() const;
  double tau() const;
  std::uint64_t pairs_resolved() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

bool member_A(const DerivativeSpectrumMap& m, const FpVector& a, const FpVector& b);
std::optional<FpVector> query_phi(const DerivativeSpectrumMap& m, const FpVector& a,
                                  const FpVector& b);

// --- parallelogram geometry --------------------------------------------------

// Vertical parallelogram (x,y), (x,y+h), (x+w,y'), (x+w,y'+h).
struct VertPgram {
  FpVector x, y, yp, w, h;
  std::array<std::pair<FpVector, FpVector>, 4> points(int p) const;
};

// phi(P) = phi(x,y) - phi(x,y+h) - phi(x+w,y') + phi(x+w,y'+h); nullopt when
// phi is undefined at any vertex.
using PartialBiMap = std::function<std::optional<FpVector>(const FpVector&, const FpVector&)>;
std::optional<FpVector> pgram_value(const PartialBiMap& phi, const VertPgram& P, int p);

// Second-order vertical parallelogram: four parallelograms whose (w,h)
// parameters themselves form a vertical parallelogram.
struct SecondOrderVP {
  std::array<VertPgram, 4> P;
};

// A pair of second-order parallelograms sharing outer width and height: the
// 32-point configuration sampled by the certifier.  phi respects it when
// phi(Q1) = phi(Q2).
struct Arrangement32 {
  SecondOrderVP Q1, Q2;
  static Arrangement32 sample(const FpParams& params, RngStream& rng);
  std::vector<std::pair<FpVector, FpVector>> all_points(int p) const;
};
std::optional<FpVector> second_order_value(const PartialBiMap& phi, const SecondOrderVP& Q, int p);

// --- step 2.2: Freiman columns ----------------------------------------------

// member-A-tilde: per column a, fit an affine map T_a to b -> phi(a,b) (fast
// probe fit, find_affine_map fallback); accept (a,b) when phi(a,b) = T_a(b).
// Columns where no map is found reject wholesale.
class FreimanColumnMap {
 public:
  FreimanColumnMap() = default;
  FreimanColumnMap(DerivativeSpectrumMap spec, double delta, RngStream rng,
                   const ParamSchedule& sched);

  bool member(const FpVector& a, const FpVector& b) const;
  std::optional<AffineMap> column_map(const FpVector& a) const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

bool member_A_tilde(const FreimanColumnMap& m, const FpVector& a, const FpVector& b);

// --- step 2.1: dependent random selection ------------------------------------

// The weighted set A' = {(x,y) : r_{(x,y)} <= 2^-k prod_i (1 + cos((2pi/p)
// (<s_i, phi(x,y)> + <x, M_i y>)))} behind a certifier.  The threshold store R
// is persistent and single-writer, so membership answers never change.
class DependentSelection {
 public:
  // Repeats the selection until certifier-A-prime passes (respected fraction
  // of retained 32-point arrangements >= 1 - 3 eta/4) or throws
  // CertifierExhausted.  The M_i proposal is aligned to phi's estimated
  // bilinear part; uniform proposals retain nothing at any sampling budget.
  static DependentSelection certify(const DerivativeSpectrumMap& spec,
                                    const FreimanColumnMap& freiman, double eta_dep, double delta,
                                    RngStream& rng, const ParamSchedule& sched);

  bool member(const FpVector& x, const FpVector& y) const;
  double weight(const FpVector& x, const FpVector& y) const;  // 0 when phi is undefined
  std::optional<FpVector> phi(const FpVector& x, const FpVector& y) const;

  const std::vector<FpVector>& s() const { return s_; }
  const std::vector<FpMatrix>& M() const { return M_; }
  std::size_t store_size() const;
  double sampled_density() const { return density_; }
  const FpParams& params() const;

 private:
  DerivativeSpectrumMap spec_;
  FreimanColumnMap freiman_;
  std::vector<FpVector> s_;
  std::vector<FpMatrix> M_;
  std::shared_ptr<std::unordered_map<std::uint64_t, double>> store_;
  std::shared_ptr<std::unordered_map<std::uint64_t, bool>> decided_;  // memoized answers
  std::shared_ptr<std::mutex> lock_;
  std::shared_ptr<RngStream> draw_;
  double density_ = 0.0;
};

bool member_A_prime(const DependentSelection& sel, const FpVector& x, const FpVector& y);

// --- steps 3.1 / 3.2: bilinear Bogolyubov ------------------------------------

// Affine maps T_1..T_m covering the gamma-large row spectra of diamond(f).
// Rows are read through box_estimate; covering loop prunes rows whose lists
// are empty or already covered and fits a fresh map to the uncovered
// assignments.  Throws IterationCapExceeded past the scheduled caps.
std::vector<AffineMap> bogo_aff_map(const BiOracle& f, double gamma, double xi, double delta,
                                    RngStream& rng, const ParamSchedule& sched);

// Bi-affine beta with ||diamond(f) - proj_beta diamond(f)||_2 <= xi intended.
// Plain mode (Thm 5.5): one coordinate x.T_i y per map plus spectrum forms of
// u_i at the exponentially small zeta.  Improved mode (default, Thm 6.3):
// collision pairs (i,j) contribute a basis of the row space of T_i - T_j and
// the spectrum threshold stays qpoly.  Throws CodimCapExceeded.
BiAffineMap bohr_aff_map(const BiOracle& f, const std::vector<AffineMap>& maps, double xi,
                         double delta, RngStream& rng, const ParamSchedule& sched,
                         bool improved = true);

// --- step 4.1: Bohr decomposition -------------------------------------------

struct BohrDecomposition {
  BiAffineMap beta;              // surviving coordinates; rank(u.beta) >= t for u != 0
  std::vector<FpVector> x0;      // linear forms on x (X_0 coordinates)
  std::vector<FpVector> y0;      // linear forms on y (Y_0 coordinates)
  int t = 0;

  const FpParams& params() const { return beta.params; }
  FpVector label_v(const FpVector& x) const;  // (u.x)_{u in x0}
  FpVector label_w(const FpVector& y) const;
  // level-set key (v, w, z); the level sets partition G x G by construction
  bool in_cell(const FpVector& x, const FpVector& y, const struct BohrCell& cell) const;

  // difference domain B'' = {(w,h): X0 w = 0, Y0 h = 0, w.T_i h = 0 for all i}
  bool diff_member(const FpVector& w, const FpVector& h) const;
  // basis of {h : Y0 h = 0, w.T_i h = 0}  (column of B'' at w)
  std::vector<FpVector> column_basis(const FpVector& w) const;
  // basis of {w : X0 w = 0, w.T_i h = 0}  (row of B'' at h)
  std::vector<FpVector> row_basis(const FpVector& h) const;
  // basis of {w : X0 w = 0} / {h : Y0 h = 0}
  std::vector<FpVector> x_free_basis() const;
  std::vector<FpVector> y_free_basis() const;
};

// Projects away translates u with rank(u.beta) < t, recording the rank
// factorization and affine parts of each removed coordinate as X_0 / Y_0
// forms.  Enumerates p^k translates per round; ExactBudgetExceeded when that
// leaves the scheduled enumeration budget.
BohrDecomposition bohr_decomp(const BiAffineMap& beta, int t, const ParamSchedule& sched);

// Exact averaging projection of a bivariate table onto the level sets of the
// decomposition (idempotent, Pythagorean); test oracle, O(p^{2n}).
FiniteFunction proj_beta_exact(const FiniteFunction& F, const BohrDecomposition& decomp);

// --- step 4.2: high-rank Bohr set -------------------------------------------

struct BohrCell {
  FpVector v, w, z;
};

// Two independent phi(P) draws over parallelograms sharing one (w,h) in the
// cell's difference domain; nullopt when sampling starves.
using CellPsiPair =
    std::function<std::optional<std::pair<FpVector, FpVector>>(const BohrCell&, RngStream&)>;
using PointEstimator = std::function<double(const FpVector&, const FpVector&, RngStream&)>;
using CellEstimator = std::function<double(const BohrCell&, RngStream&)>;

// Tests sampled candidate cells and returns the first passing Tests A
// (psi-collision mass against the rank-driven threshold; the leading constant
// is u4.testA_scale and the box's 3/2 is reachable by setting it to 1.5), B
// (cell mean of mu >= [mu]^8/2 - rho/2) and C (cell residual <= xi_allow +
// rho/2; the caller folds gamma^-1 zeta into xi_allow).  Throws
// NoBohrSetPassed when none passes.
BohrCell high_rk_bohr_set(const BohrDecomposition& decomp, const CellPsiPair& psi_pair,
                          const PointEstimator& mu_prime, const CellEstimator& xi_prime,
                          double eta_dep, double xi_allow, double delta, RngStream& rng,
                          const ParamSchedule& sched);

// --- step 5: majority correction --------------------------------------------

// psi-tilde(w,h): majority over r = O(log 1/delta) draws of phi(P) with all
// four vertices of P in the cell; nullopt outside B''.  Throws
// RejectionBudgetExceeded when the conditioned sampler starves.
std::optional<FpVector> query_tilde_psi(const BohrDecomposition& decomp, const BohrCell& cell,
                                        const PartialBiMap& phi, const FpVector& w,
                                        const FpVector& h, double delta, RngStream& rng,
                                        const ParamSchedule& sched);

// --- step 6: bi-affine extension ----------------------------------------------

// psi-tilde as a randomized oracle on B''.
using TildePsi = std::function<std::optional<FpVector>(const FpVector&, const FpVector&, RngStream&)>;

// Recovers the unique bilinear T : G x G -> G agreeing with psi-tilde on the
// good cells of B'' (additive-triple, good-column and good-cell testers feed
// the repaired queries; values are then fit to an explicit tensor, free
// directions extended by zero).  Returned as a BiAffineMap with n pure
// bilinear coordinates: T(x,y)_k = x . T_k y.  Throws NoFullRankSlice /
// BasisExtractionFailed.
BiAffineMap extend_biaffine(const BohrDecomposition& decomp, const TildePsi& psi, double eps_cell,
                            double delta, RngStream& rng, const ParamSchedule& sched);

// --- step 7: orchestration ----------------------------------------------------

struct StageRecord {
  std::string name;
  double millis = 0.0;
  std::uint64_t queries = 0;  // cumulative base queries to f after the stage
  std::string note;
};

struct FindCubicResult {
  CubicPolynomial poly;
  double correlation = 0.0;  // fresh-seed verified |<f, omega^poly>|
  std::vector<StageRecord> stages;
  std::string report_json() const;
};

// The full pipeline.  p >= 5 anti-differentiates by division by six; p = 2, 3
// dispatch to the symmetrization module; the U^3 step recovers the lower
// order.  Verification is mandatory: no polynomial is returned without a
// fresh correlation certificate >= u4.eta / 2, and any stage error surfaces
// as PipelineStageFailed carrying the stage name.  A nonempty checkpoint_dir
// persists per-stage artifacts and reuses them on rerun.
FindCubicResult find_cubic(const QueryOracle& f, double eps, double delta, RngStream& rng,
                           const ParamSchedule& sched, bool improved = true,
                           const std::string& checkpoint_dir = "");

}  // namespace hofa
