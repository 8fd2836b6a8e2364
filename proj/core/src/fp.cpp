#include "hofa/fp.hpp"

#include <algorithm>
#include <cstdlib>

namespace hofa {

bool is_prime(int p) {
  if (p < 2) return false;
  for (int d = 2; d * d <= p; ++d)
    if (p % d == 0) return false;
  return true;
}

void FpParams::validate() const {
  if (!is_prime(p)) throw Error("FpParams: p must be prime, got " + std::to_string(p));
  if (n < 0 || n > 24) throw Error("FpParams: n out of range [0,24]: " + std::to_string(n));
}

std::uint64_t ipow(std::uint64_t b, int e) {
  std::uint64_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

std::uint64_t FpParams::group_size() const { return ipow(static_cast<std::uint64_t>(p), n); }

bool FpVector::is_zero() const {
  return std::all_of(c.begin(), c.end(), [](std::uint8_t v) { return v == 0; });
}

int fp_inv(int a, int p) {
  a %= p;
  if (a < 0) a += p;
  if (a == 0) throw Error("fp_inv: zero is not invertible");
  // p is tiny; brute force beats extended Euclid for clarity.
  for (int b = 1; b < p; ++b)
    if ((a * b) % p == 1) return b;
  throw Error("fp_inv: no inverse found (p not prime?)");
}

FpVector fp_add(const FpVector& a, const FpVector& b, int p) {
  FpVector r(a.size());
  for (int i = 0; i < a.size(); ++i) r.set(i, (a.at(i) + b.at(i)) % p);
  return r;
}

FpVector fp_sub(const FpVector& a, const FpVector& b, int p) {
  FpVector r(a.size());
  for (int i = 0; i < a.size(); ++i) r.set(i, (a.at(i) - b.at(i) + p) % p);
  return r;
}

FpVector fp_neg(const FpVector& a, int p) {
  FpVector r(a.size());
  for (int i = 0; i < a.size(); ++i) r.set(i, (p - a.at(i)) % p);
  return r;
}

FpVector fp_scale(const FpVector& a, int s, int p) {
  s %= p;
  if (s < 0) s += p;
  FpVector r(a.size());
  for (int i = 0; i < a.size(); ++i) r.set(i, (a.at(i) * s) % p);
  return r;
}

int fp_dot(const FpVector& a, const FpVector& b, int p) {
  int acc = 0;
  for (int i = 0; i < a.size(); ++i) acc += a.at(i) * b.at(i);
  return acc % p;
}

std::uint64_t index_of(const FpVector& v, int p) {
  std::uint64_t idx = 0;
  for (int i = 0; i < v.size(); ++i) idx = idx * static_cast<std::uint64_t>(p) + v.at(i);
  return idx;
}

FpVector vector_of(std::uint64_t idx, const FpParams& params) {
  return vector_of(idx, params.p, params.n);
}

FpVector vector_of(std::uint64_t idx, int p, int n) {
  FpVector v(n);
  for (int i = n - 1; i >= 0; --i) {
    v.set(i, static_cast<int>(idx % static_cast<std::uint64_t>(p)));
    idx /= static_cast<std::uint64_t>(p);
  }
  return v;
}

FpVector unit_vector(int n, int i) {
  FpVector v(n);
  v.set(i, 1);
  return v;
}

FpMatrix FpMatrix::identity(int n) {
  FpMatrix m(n, n);
  for (int i = 0; i < n; ++i) m.set(i, i, 1);
  return m;
}

FpMatrix fp_mat_add(const FpMatrix& a, const FpMatrix& b, int p) {
  FpMatrix r(a.rows, a.cols);
  for (std::size_t i = 0; i < a.e.size(); ++i)
    r.e[i] = static_cast<std::uint8_t>((a.e[i] + b.e[i]) % p);
  return r;
}

FpMatrix fp_mat_sub(const FpMatrix& a, const FpMatrix& b, int p) {
  FpMatrix r(a.rows, a.cols);
  for (std::size_t i = 0; i < a.e.size(); ++i)
    r.e[i] = static_cast<std::uint8_t>((a.e[i] - b.e[i] + p) % p);
  return r;
}

FpMatrix fp_mat_scale(const FpMatrix& a, int s, int p) {
  s %= p;
  if (s < 0) s += p;
  FpMatrix r(a.rows, a.cols);
  for (std::size_t i = 0; i < a.e.size(); ++i)
    r.e[i] = static_cast<std::uint8_t>((a.e[i] * s) % p);
  return r;
}

FpMatrix fp_mat_mul(const FpMatrix& a, const FpMatrix& b, int p) {
  FpMatrix r(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      int aik = a.at(i, k);
      if (aik == 0) continue;
      for (int j = 0; j < b.cols; ++j)
        r.set(i, j, (r.at(i, j) + aik * b.at(k, j)) % p);
    }
  return r;
}

FpMatrix fp_transpose(const FpMatrix& a) {
  FpMatrix r(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) r.set(j, i, a.at(i, j));
  return r;
}

FpVector fp_mat_apply(const FpMatrix& m, const FpVector& x, int p) {
  FpVector r(m.rows);
  for (int i = 0; i < m.rows; ++i) {
    int acc = 0;
    for (int j = 0; j < m.cols; ++j) acc += m.at(i, j) * x.at(j);
    r.set(i, acc % p);
  }
  return r;
}

FpVector fp_mat_apply_left(const FpVector& x, const FpMatrix& m, int p) {
  FpVector r(m.cols);
  for (int j = 0; j < m.cols; ++j) {
    int acc = 0;
    for (int i = 0; i < m.rows; ++i) acc += x.at(i) * m.at(i, j);
    r.set(j, acc % p);
  }
  return r;
}

int fp_bilinear(const FpVector& x, const FpMatrix& m, const FpVector& y, int p) {
  int acc = 0;
  for (int i = 0; i < m.rows; ++i) {
    if (x.at(i) == 0) continue;
    int row = 0;
    for (int j = 0; j < m.cols; ++j) row += m.at(i, j) * y.at(j);
    acc = (acc + x.at(i) * (row % p)) % p;
  }
  return acc;
}

namespace {

// Row reduction to echelon form in place; returns pivot columns.
std::vector<int> row_reduce(FpMatrix& m, int p) {
  std::vector<int> pivots;
  int row = 0;
  for (int col = 0; col < m.cols && row < m.rows; ++col) {
    int sel = -1;
    for (int i = row; i < m.rows; ++i)
      if (m.at(i, col) != 0) {
        sel = i;
        break;
      }
    if (sel < 0) continue;
    if (sel != row)
      for (int j = 0; j < m.cols; ++j) {
        int t = m.at(row, j);
        m.set(row, j, m.at(sel, j));
        m.set(sel, j, t);
      }
    int inv = fp_inv(m.at(row, col), p);
    for (int j = 0; j < m.cols; ++j) m.set(row, j, (m.at(row, j) * inv) % p);
    for (int i = 0; i < m.rows; ++i) {
      if (i == row) continue;
      int f = m.at(i, col);
      if (f == 0) continue;
      for (int j = 0; j < m.cols; ++j)
        m.set(i, j, (m.at(i, j) + (p - f) * m.at(row, j)) % p);
    }
    pivots.push_back(col);
    ++row;
  }
  return pivots;
}

}  // namespace

int gaussian_rank(const FpMatrix& m, int p) {
  FpMatrix w = m;
  return static_cast<int>(row_reduce(w, p).size());
}

std::vector<FpVector> nullspace(const FpMatrix& m, int p) {
  FpMatrix w = m;
  std::vector<int> pivots = row_reduce(w, p);
  std::vector<bool> is_pivot(static_cast<std::size_t>(m.cols), false);
  for (int c : pivots) is_pivot[static_cast<std::size_t>(c)] = true;
  std::vector<FpVector> basis;
  for (int free = 0; free < m.cols; ++free) {
    if (is_pivot[static_cast<std::size_t>(free)]) continue;
    FpVector v(m.cols);
    v.set(free, 1);
    // Back-substitute: pivot row r has leading 1 at pivots[r].
    for (std::size_t r = 0; r < pivots.size(); ++r) {
      int val = w.at(static_cast<int>(r), free);
      v.set(pivots[r], (p - val) % p);
    }
    basis.push_back(v);
  }
  return basis;
}

std::optional<FpMatrix> fp_mat_inverse(const FpMatrix& m, int p) {
  if (m.rows != m.cols) return std::nullopt;
  int n = m.rows;
  FpMatrix aug(n, 2 * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) aug.set(i, j, m.at(i, j));
    aug.set(i, n + i, 1);
  }
  std::vector<int> pivots = row_reduce(aug, p);
  if (static_cast<int>(pivots.size()) != n || pivots.back() >= n) {
    // Check all pivots landed inside the left block.
    for (std::size_t r = 0; r < pivots.size(); ++r)
      if (pivots[r] >= n) return std::nullopt;
    if (static_cast<int>(pivots.size()) != n) return std::nullopt;
  }
  FpMatrix inv(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) inv.set(i, j, aug.at(i, n + j));
  return inv;
}

std::optional<FpVector> fp_solve(const FpMatrix& a, const FpVector& b, int p) {
  FpMatrix aug(a.rows, a.cols + 1);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) aug.set(i, j, a.at(i, j));
    aug.set(i, a.cols, b.at(i));
  }
  std::vector<int> pivots = row_reduce(aug, p);
  for (int c : pivots)
    if (c == a.cols) return std::nullopt;  // inconsistent row 0 ... 0 | 1
  FpVector x(a.cols);
  for (std::size_t r = 0; r < pivots.size(); ++r) x.set(pivots[r], aug.at(static_cast<int>(r), a.cols));
  return x;
}

std::vector<int> independent_subset(const std::vector<FpVector>& vs, int p) {
  std::vector<int> keep;
  if (vs.empty()) return keep;
  int n = vs[0].size();
  FpMatrix acc(0, n);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    FpMatrix trial(acc.rows + 1, n);
    trial.e.assign(acc.e.begin(), acc.e.end());
    trial.e.resize(static_cast<std::size_t>(trial.rows) * n);
    for (int j = 0; j < n; ++j) trial.set(acc.rows, j, vs[i].at(j));
    if (gaussian_rank(trial, p) > acc.rows) {
      keep.push_back(static_cast<int>(i));
      acc = trial;
    }
  }
  return keep;
}

int span_rank(const std::vector<FpVector>& vs, int p) {
  if (vs.empty()) return 0;
  int n = vs[0].size();
  FpMatrix m(static_cast<int>(vs.size()), n);
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (int j = 0; j < n; ++j) m.set(static_cast<int>(i), j, vs[i].at(j));
  return gaussian_rank(m, p);
}

std::vector<FpVector> kernel_intersection(const std::vector<FpMatrix>& ms, int p) {
  if (ms.empty()) return {};
  int cols = ms[0].cols;
  int total_rows = 0;
  for (const auto& m : ms) total_rows += m.rows;
  FpMatrix stacked(total_rows, cols);
  int r = 0;
  for (const auto& m : ms) {
    for (int i = 0; i < m.rows; ++i, ++r)
      for (int j = 0; j < cols; ++j) stacked.set(r, j, m.at(i, j));
  }
  return nullspace(stacked, p);
}

FpVector SplitBasis::project(const FpVector& x) const {
  // coeff * x gives coordinates over [v_basis | e_free]; keep the V part.
  FpVector coords = fp_mat_apply(coeff, x, params.p);
  FpVector out(params.n);
  for (std::size_t i = 0; i < v_basis.size(); ++i)
    out = fp_add(out, fp_scale(v_basis[i], coords.at(static_cast<int>(i)), params.p), params.p);
  return out;
}

SplitBasis split_along_coordinates(const std::vector<FpVector>& v_basis, const FpParams& params) {
  int n = params.n, p = params.p;
  int d = static_cast<int>(v_basis.size());
  // Row-reduce the basis to find pivot coordinates; the complement W is the
  // span of the standard vectors at non-pivot coordinates.
  FpMatrix bm(d, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n; ++j) bm.set(i, j, v_basis[static_cast<std::size_t>(i)].at(j));
  FpMatrix w = bm;
  std::vector<int> pivots = row_reduce(w, p);
  if (static_cast<int>(pivots.size()) != d)
    throw Error("split_along_coordinates: basis is not independent");
  std::vector<bool> is_pivot(static_cast<std::size_t>(n), false);
  for (int c : pivots) is_pivot[static_cast<std::size_t>(c)] = true;
  SplitBasis sb;
  sb.params = params;
  sb.v_basis = v_basis;
  for (int j = 0; j < n; ++j)
    if (!is_pivot[static_cast<std::size_t>(j)]) sb.free_coords.push_back(j);
  // Full-basis matrix [v_basis | e_free] as columns; invert to get coordinates.
  FpMatrix full(n, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n; ++j) full.set(j, i, v_basis[static_cast<std::size_t>(i)].at(j));
  for (std::size_t i = 0; i < sb.free_coords.size(); ++i)
    full.set(sb.free_coords[i], d + static_cast<int>(i), 1);
  auto inv = fp_mat_inverse(full, p);
  if (!inv) throw Error("split_along_coordinates: [V|W] not invertible");
  sb.coeff = *inv;
  return sb;
}

int tensor_contract(const Tensor3& t, const FpVector& x, const FpVector& y, const FpVector& z,
                    int p) {
  long long acc = 0;
  for (int i = 0; i < t.n; ++i) {
    if (x.at(i) == 0) continue;
    for (int j = 0; j < t.n; ++j) {
      if (y.at(j) == 0) continue;
      long long inner = 0;
      for (int k = 0; k < t.n; ++k) inner += static_cast<long long>(t.at(i, j, k)) * z.at(k);
      acc += static_cast<long long>(x.at(i)) * y.at(j) % p * (inner % p);
    }
  }
  return static_cast<int>(((acc % p) + p) % p);
}

Tensor3 tensor_permuted(const Tensor3& t, const std::array<int, 3>& perm) {
  Tensor3 r(t.n);
  int idx[3];
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int k = 0; k < t.n; ++k) {
        int args[3] = {i, j, k};
        idx[0] = args[perm[0]];
        idx[1] = args[perm[1]];
        idx[2] = args[perm[2]];
        r.set(i, j, k, t.at(idx[0], idx[1], idx[2]));
      }
  return r;
}

bool tensor_symmetric(const Tensor3& t) {
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int k = 0; k < t.n; ++k) {
        int v = t.at(i, j, k);
        if (t.at(i, k, j) != v || t.at(j, i, k) != v || t.at(j, k, i) != v ||
            t.at(k, i, j) != v || t.at(k, j, i) != v)
          return false;
      }
  return true;
}

Tensor3 tensor_sub(const Tensor3& a, const Tensor3& b, int p) {
  Tensor3 r(a.n);
  for (std::size_t i = 0; i < a.e.size(); ++i)
    r.e[i] = static_cast<std::uint8_t>((a.e[i] - b.e[i] + p) % p);
  return r;
}

FpMatrix tensor_slice(const Tensor3& t, int axis, int i) {
  FpMatrix m(t.n, t.n);
  for (int a = 0; a < t.n; ++a)
    for (int b = 0; b < t.n; ++b) {
      int v = axis == 0 ? t.at(i, a, b) : axis == 1 ? t.at(a, i, b) : t.at(a, b, i);
      m.set(a, b, v);
    }
  return m;
}

FpVector AffineMap::apply(const FpVector& x, int p) const {
  return fp_add(fp_mat_apply(L, x, p), b, p);
}

int BiAffineCoord::eval(const FpVector& x, const FpVector& y, int p) const {
  int v = fp_bilinear(x, T, y, p);
  v = (v + fp_dot(A, x, p)) % p;
  v = (v + fp_dot(B, y, p)) % p;
  v = (v + C) % p;
  return v;
}

FpVector BiAffineMap::eval(const FpVector& x, const FpVector& y) const {
  FpVector r(k());
  for (int i = 0; i < k(); ++i) r.set(i, coords[static_cast<std::size_t>(i)].eval(x, y, params.p));
  return r;
}

int biaffine_rank(const BiAffineMap& beta, std::uint64_t cap) {
  int p = beta.params.p;
  int k = beta.k();
  std::uint64_t combos = ipow(static_cast<std::uint64_t>(p), k);
  if (combos > cap)
    throw ExactBudgetExceeded("biaffine_rank: p^k = " + std::to_string(combos) +
                              " exceeds cap " + std::to_string(cap));
  int n = beta.params.n;
  int best = n + 1;
  FpParams up{p, k};
  for (std::uint64_t ui = 1; ui < combos; ++ui) {
    FpVector u = vector_of(ui, up);
    FpMatrix sum(n, n);
    for (int c = 0; c < k; ++c) {
      if (u.at(c) == 0) continue;
      sum = fp_mat_add(sum, fp_mat_scale(beta.coords[static_cast<std::size_t>(c)].T, u.at(c), p), p);
    }
    best = std::min(best, gaussian_rank(sum, p));
    if (best == 0) break;
  }
  return best == n + 1 ? 0 : best;
}

FpVector random_vector(const FpParams& params, RngStream& rng) {
  FpVector v(params.n);
  for (int i = 0; i < params.n; ++i) v.set(i, rng.next_residue(params.p));
  return v;
}

FpMatrix random_matrix(int rows, int cols, int p, RngStream& rng) {
  FpMatrix m(rows, cols);
  for (auto& x : m.e) x = static_cast<std::uint8_t>(rng.next_residue(p));
  return m;
}

FpMatrix random_invertible(int n, int p, RngStream& rng) {
  for (;;) {
    FpMatrix m = random_matrix(n, n, p, rng);
    if (gaussian_rank(m, p) == n) return m;
  }
}

Tensor3 random_tensor(int n, int p, RngStream& rng) {
  Tensor3 t(n);
  for (auto& x : t.e) x = static_cast<std::uint8_t>(rng.next_residue(p));
  return t;
}

}  // namespace hofa
