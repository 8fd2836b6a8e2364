#pragma once

#include <vector>

#include "hofa/fp.hpp"
#include "hofa/poly.hpp"
#include "hofa/rng.hpp"

namespace hofa {

// tau(a, b, c) = sum_{ijk} tau_ijk a_i b_j c_k in F_p.
int tensor_apply(const Tensor3& t, const FpVector& a, const FpVector& b, const FpVector& c,
                 int p);

// Projector with image span(basis) and kernel spanned by the unit vectors at
// the pivot-free coordinates of the basis (the direct-sum recipe used when a
// form found on a subspace is re-extended by zero).
FpMatrix projection_onto(const std::vector<FpVector>& basis, int p, int n);

// Restrict-and-extend: sigma(x, y, z) = tau(Px, Py, Pz).
Tensor3 tensor_conjugate(const Tensor3& t, const FpMatrix& P, int p);

// Permutation average (1/6) sum_pi tau^pi.  Requires p >= 5; throws
// BadCharacteristic otherwise.
Tensor3 symmetrize_div6(const Tensor3& tau, int p);

struct SymmetrizationResult {
  std::vector<FpVector> V;  // basis of the symmetric-restriction subspace
  Tensor3 sigma;            // symmetric form agreeing with tau on V^3
  int codim = 0;
  bool within_bound = true;  // codim <= 5 * delta_rank
};

// Symmetrization by slice-asymmetry kernels: V = the intersection of
// ker(A - A^T) over the 3n slice matrices of tau; sigma is tau restricted to
// V^3 and extended by zero.  Always returns an exactly symmetric tensor; the
// codimension is reported honestly even when the low-asymmetry hypothesis
// (arank(tau - tau^pi) <= delta_rank) fails.
SymmetrizationResult find_sym(const Tensor3& tau, int p, int delta_rank);

struct CSMForm {
  Tensor3 t;
  int codim = 0;  // of the kernel of x -> sigma(x,x,x)
};

// sigma(h,h,h) = 0 for all h?  (The CSM law; exact, full tensor expansion.)
bool csm_law_holds(const Tensor3& t, int p, RngStream& rng, int probes = 200);

// p = 3: x -> sigma(x,x,x) is linear; restrict to its kernel (codim <= 1) and
// re-extend by zero.
CSMForm find_csm(const Tensor3& sigma, int p);

// Antiderivative: classical cubic P with d^3 P = sigma, for odd p.  Needs
// sigma symmetric with sigma_iii = 0 when p = 3 (automatic for a CSM); for
// p >= 5 a nonzero diagonal integrates through x_i^3 / 6.
CubicPolynomial integrate_cubic(const Tensor3& sigma, const FpParams& params);

struct NCSMForm {
  Tensor3 t;
  int codim = 0;  // = rank of the coupling form B
};

// nCSM law sigma(h1,h1,h2) = sigma(h1,h2,h2), p = 2.
bool ncsm_law_holds(const Tensor3& t, RngStream& rng, int probes = 200);

// p = 2: B(x,y) = sigma(x,x,y) - sigma(x,y,y) is bilinear; restrict sigma to
// the nullspace of B and re-extend.  codim = rank(B).
NCSMForm find_ncsm(const Tensor3& sigma);

// Non-classical antiderivative over F_2: P with d^3 P = sigma in (1/2)Z/Z.
// Throws NotNCSM when the shared pair coefficient is inconsistent
// (sigma_iij != sigma_ijj).
CubicPolynomial integrate_nonclassical(const Tensor3& sigma, const FpParams& params);

// Exact bias E_{x,y,z} omega^{tau(x,y,z)} (real by symmetry of the average;
// the analytic-rank test oracle, exponential in n -- small n only).
double exact_tensor_bias(const Tensor3& tau, int p);

}  // namespace hofa
