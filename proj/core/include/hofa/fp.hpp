#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "hofa/errors.hpp"
#include "hofa/rng.hpp"

namespace hofa {

bool is_prime(int p);

// The ambient group G = F_p^n.
struct FpParams {
  int p = 2;
  int n = 1;

  void validate() const;
  std::uint64_t group_size() const;  // p^n
  bool operator==(const FpParams&) const = default;
};

std::uint64_t ipow(std::uint64_t b, int e);

// Dense vector of residues mod p. Arithmetic takes p explicitly; the vector
// itself is just coordinates.
struct FpVector {
  std::vector<std::uint8_t> c;

  FpVector() = default;
  explicit FpVector(int n) : c(static_cast<std::size_t>(n), 0) {}
  int size() const { return static_cast<int>(c.size()); }
  int at(int i) const { return c[static_cast<std::size_t>(i)]; }
  void set(int i, int v) { c[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v); }
  bool is_zero() const;
  bool operator==(const FpVector&) const = default;
  bool operator<(const FpVector& o) const { return c < o.c; }
};

int fp_inv(int a, int p);
FpVector fp_add(const FpVector& a, const FpVector& b, int p);
FpVector fp_sub(const FpVector& a, const FpVector& b, int p);
FpVector fp_neg(const FpVector& a, int p);
FpVector fp_scale(const FpVector& a, int s, int p);
int fp_dot(const FpVector& a, const FpVector& b, int p);

// Canonical enumeration of G: index(x) = sum_j x_j p^(n-1-j), big-endian digits.
// Shared by tables, .func files and oracles.
std::uint64_t index_of(const FpVector& v, int p);
FpVector vector_of(std::uint64_t idx, const FpParams& params);
FpVector vector_of(std::uint64_t idx, int p, int n);
FpVector unit_vector(int n, int i);

struct FpMatrix {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> e;

  FpMatrix() = default;
  FpMatrix(int r, int c) : rows(r), cols(c), e(static_cast<std::size_t>(r) * c, 0) {}
  static FpMatrix identity(int n);

  int at(int i, int j) const { return e[static_cast<std::size_t>(i) * cols + j]; }
  void set(int i, int j, int v) {
    e[static_cast<std::size_t>(i) * cols + j] = static_cast<std::uint8_t>(v);
  }
  bool operator==(const FpMatrix&) const = default;
};

FpMatrix fp_mat_add(const FpMatrix& a, const FpMatrix& b, int p);
FpMatrix fp_mat_sub(const FpMatrix& a, const FpMatrix& b, int p);
FpMatrix fp_mat_scale(const FpMatrix& a, int s, int p);
FpMatrix fp_mat_mul(const FpMatrix& a, const FpMatrix& b, int p);
FpMatrix fp_transpose(const FpMatrix& a);
FpVector fp_mat_apply(const FpMatrix& m, const FpVector& x, int p);
// row vector times matrix: (x^T M)^T
FpVector fp_mat_apply_left(const FpVector& x, const FpMatrix& m, int p);
int fp_bilinear(const FpVector& x, const FpMatrix& m, const FpVector& y, int p);

int gaussian_rank(const FpMatrix& m, int p);
// Basis of {v : m v = 0}; size = cols - rank.
std::vector<FpVector> nullspace(const FpMatrix& m, int p);
std::optional<FpMatrix> fp_mat_inverse(const FpMatrix& m, int p);
// One solution of A x = b, if any.
std::optional<FpVector> fp_solve(const FpMatrix& a, const FpVector& b, int p);

// Maximal independent subset (indices into `vs`, greedy in order).
std::vector<int> independent_subset(const std::vector<FpVector>& vs, int p);
int span_rank(const std::vector<FpVector>& vs, int p);
// Basis of the intersection of the spans' annihilated space: {v : B v = 0 for
// every row B of each matrix}.
std::vector<FpVector> kernel_intersection(const std::vector<FpMatrix>& ms, int p);

// G = V (+) W with W spanned by the standard basis vectors at the pivot-free
// coordinates of V's basis; project() returns the V-component.
struct SplitBasis {
  FpParams params;
  std::vector<FpVector> v_basis;
  std::vector<int> free_coords;   // coordinates spanning W
  FpMatrix coeff;                 // x -> coordinates over [v_basis | e_free]
  FpVector project(const FpVector& x) const;
};
SplitBasis split_along_coordinates(const std::vector<FpVector>& v_basis, const FpParams& params);

// Order-3 tensor over F_p; contraction reproduces the trilinear form
// tau(x,y,z) = sum t_ijk x_i y_j z_k.
struct Tensor3 {
  int n = 0;
  std::vector<std::uint8_t> e;

  Tensor3() = default;
  explicit Tensor3(int n_) : n(n_), e(static_cast<std::size_t>(n_) * n_ * n_, 0) {}

  int at(int i, int j, int k) const {
    return e[(static_cast<std::size_t>(i) * n + j) * n + k];
  }
  void set(int i, int j, int k, int v) {
    e[(static_cast<std::size_t>(i) * n + j) * n + k] = static_cast<std::uint8_t>(v);
  }
  bool operator==(const Tensor3&) const = default;
};

int tensor_contract(const Tensor3& t, const FpVector& x, const FpVector& y, const FpVector& z,
                    int p);
// Entry [i][j][k] of the result is t at the indices permuted by perm, i.e.
// the form tau_pi(x1,x2,x3) = tau(x_{pi(1)}, x_{pi(2)}, x_{pi(3)}).
Tensor3 tensor_permuted(const Tensor3& t, const std::array<int, 3>& perm);
bool tensor_symmetric(const Tensor3& t);
Tensor3 tensor_sub(const Tensor3& a, const Tensor3& b, int p);

// Slice bilinear forms of Thm 7.2: axis 0 -> (u,v) |-> tau(e_i, u, v), etc.
FpMatrix tensor_slice(const Tensor3& t, int axis, int i);

struct AffineMap {
  FpMatrix L;
  FpVector b;
  FpVector apply(const FpVector& x, int p) const;
  bool operator==(const AffineMap&) const = default;
};

// Vector-valued bi-affine map beta : G x G -> F_p^k, per output coordinate
// beta_i(x,y) = x.T_i y + A_i.x + B_i.y + C_i.
struct BiAffineCoord {
  FpMatrix T;
  FpVector A, B;
  std::uint8_t C = 0;
  int eval(const FpVector& x, const FpVector& y, int p) const;
  bool operator==(const BiAffineCoord&) const = default;
};

struct BiAffineMap {
  FpParams params;
  std::vector<BiAffineCoord> coords;

  int k() const { return static_cast<int>(coords.size()); }
  FpVector eval(const FpVector& x, const FpVector& y) const;
  bool operator==(const BiAffineMap&) const = default;
};

// min over nonzero u in F_p^k of rank(sum u_i T_i); enumerates all p^k - 1
// combinations, so k must keep p^k under `cap`.
int biaffine_rank(const BiAffineMap& beta, std::uint64_t cap);

FpVector random_vector(const FpParams& params, RngStream& rng);
FpMatrix random_matrix(int rows, int cols, int p, RngStream& rng);
FpMatrix random_invertible(int n, int p, RngStream& rng);
Tensor3 random_tensor(int n, int p, RngStream& rng);

}  // namespace hofa
