#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

#include "hofa/fp.hpp"

namespace hofa {

enum class PolyKind { Classical, NonClassical };

// Monomial = sorted multiset of variable indices, size <= 3. Classical
// monomials may repeat an index (x_i^2 x_j); non-classical basis monomials are
// strictly increasing (the |x_i| |x_j| |x_k| products).
using Monomial = std::vector<int>;

// Polynomial of degree <= 3 on F_p^n.
//
// Classical: P(x) = sum_m coeff_m * prod_{i in m} x_i, values in F_p, the
// phase is omega^P with omega = e^{2 pi i / p}.
//
// Non-classical (p = 2 only): values in (1/8)Z/Z over the basis
//   |x_i|/8  (modulus 8),  |x_i||x_j|/4  (modulus 4),  |x_i||x_j||x_k|/2
//   (modulus 2), constant (modulus 8),
// stored as integer numerators; |.| is the standard embedding F_2 -> {0,1}.
// A classical F_2 part embeds via c -> c * modulus(m)/2, so one map holds
// everything and arithmetic stays exact (no floating point in phases).
struct CubicPolynomial {
  FpParams params;
  PolyKind kind = PolyKind::Classical;
  std::map<Monomial, int> coeffs;

  static CubicPolynomial zero(const FpParams& params, PolyKind kind = PolyKind::Classical);

  int degree() const;
  bool is_zero() const;

  // Largest allowed numerator + 1 for a non-classical monomial.
  static int nc_modulus(const Monomial& m);

  // Canonicalize: sort indices, reduce exponents by x^p = x, reduce coeffs,
  // drop zeros. Called by all mutating helpers.
  void normalize();

  void add_term(const Monomial& m, int coeff);

  // Classical evaluation in F_p.
  int eval_classical(const FpVector& x) const;
  // Non-classical evaluation as a numerator over 8 (value = num/8 in R/Z).
  int eval_num8(const FpVector& x) const;
  // e^{2 pi i P(x)} under the R/Z embedding (val/p classical, num/8 otherwise).
  std::complex<double> phase(const FpVector& x) const;

  CubicPolynomial plus(const CubicPolynomial& other) const;
  CubicPolynomial negated() const;
  CubicPolynomial scaled(int t) const;  // t * P (integer scalar)

  // Degree <= 2 part / degree-3 part split.
  CubicPolynomial truncated(int max_degree) const;

  std::string to_json() const;
  static CubicPolynomial from_json(const std::string& text);
};

// D_{h_1..h_k} P at x by inclusion-exclusion (classical: value in F_p).
int additive_derivative_classical(const CubicPolynomial& P, const std::vector<FpVector>& hs,
                                  const FpVector& x);
// Same for the non-classical kind; value as a numerator over 8.
int additive_derivative_num8(const CubicPolynomial& P, const std::vector<FpVector>& hs,
                             const FpVector& x);

// d^3 P (h1,h2,h3) = D_{h1,h2,h3} P (0) as a trilinear tensor. For the
// non-classical kind over F_2 the derivative values live in (1/2)Z/Z and are
// reported as F_2 entries.
Tensor3 total_derivative_d3(const CubicPolynomial& P);

// Cubic polynomial (1/6) sum t_ijk x_i x_j x_k from a trilinear tensor;
// requires p >= 5. d^3 of the result is the symmetrization of t.
CubicPolynomial cubic_from_tensor_div6(const Tensor3& t, const FpParams& params);

CubicPolynomial random_classical_polynomial(const FpParams& params, int degree, RngStream& rng);
CubicPolynomial random_nonclassical_cubic(const FpParams& params, RngStream& rng);

}  // namespace hofa
