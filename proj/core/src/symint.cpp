#include "hofa/symint.hpp"

#include <array>
#include <cmath>

#include "hofa/errors.hpp"

namespace hofa {

int tensor_apply(const Tensor3& t, const FpVector& a, const FpVector& b, const FpVector& c,
                 int p) {
  int n = t.n;
  long long acc = 0;
  for (int i = 0; i < n; ++i) {
    if (a.at(i) == 0) continue;
    long long inner = 0;
    for (int j = 0; j < n; ++j) {
      if (b.at(j) == 0) continue;
      long long row = 0;
      for (int k = 0; k < n; ++k) row += static_cast<long long>(t.at(i, j, k)) * c.at(k);
      inner += b.at(j) * (row % p);
    }
    acc += a.at(i) * (inner % p);
    acc %= p;
  }
  return static_cast<int>(((acc % p) + p) % p);
}

FpMatrix projection_onto(const std::vector<FpVector>& basis, int p, int n) {
  int d = static_cast<int>(basis.size());
  // pivot coordinates of the basis via elimination on its row matrix
  FpMatrix rows(d, n);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < n; ++c) rows.set(r, c, basis[static_cast<std::size_t>(r)].at(c));
  std::vector<int> pivots;
  {
    FpMatrix m = rows;
    int r = 0;
    for (int c = 0; c < n && r < d; ++c) {
      int pr = -1;
      for (int i = r; i < d; ++i)
        if (m.at(i, c) != 0) {
          pr = i;
          break;
        }
      if (pr < 0) continue;
      for (int j = 0; j < n; ++j) {
        int tmp = m.at(r, j);
        m.set(r, j, m.at(pr, j));
        m.set(pr, j, tmp);
      }
      int inv = fp_inv(m.at(r, c), p);
      for (int j = 0; j < n; ++j) m.set(r, j, (m.at(r, j) * inv) % p);
      for (int i = 0; i < d; ++i) {
        if (i == r || m.at(i, c) == 0) continue;
        int fac = m.at(i, c);
        for (int j = 0; j < n; ++j)
          m.set(i, j, ((m.at(i, j) - fac * m.at(r, j)) % p + p) % p);
      }
      pivots.push_back(c);
      ++r;
    }
  }
  if (static_cast<int>(pivots.size()) != d)
    throw BasisExtractionFailed("projection basis is linearly dependent");

  // M = [basis | complement units]; P = basis * (first d rows of M^{-1})
  FpMatrix M(n, n);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < n; ++r) M.set(r, c, basis[static_cast<std::size_t>(c)].at(r));
  std::vector<bool> is_pivot(static_cast<std::size_t>(n), false);
  for (int c : pivots) is_pivot[static_cast<std::size_t>(c)] = true;
  int col = d;
  for (int c = 0; c < n; ++c)
    if (!is_pivot[static_cast<std::size_t>(c)]) M.set(c, col++, 1);
  std::optional<FpMatrix> Minv = fp_mat_inverse(M, p);
  if (!Minv) throw BasisExtractionFailed("complement completion is singular");
  FpMatrix S(d, n);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < n; ++c) S.set(r, c, Minv->at(r, c));
  FpMatrix B(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) B.set(r, c, M.at(r, c));
  return fp_mat_mul(B, S, p);
}

Tensor3 tensor_conjugate(const Tensor3& t, const FpMatrix& P, int p) {
  int n = t.n;
  // contract one mode at a time: O(n^4) instead of n^6
  Tensor3 a(n), b(n), c(n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      for (int i2 = 0; i2 < n; ++i2) {
        long long acc = 0;
        for (int i = 0; i < n; ++i) acc += static_cast<long long>(t.at(i, j, k)) * P.at(i, i2);
        a.set(i2, j, k, static_cast<int>(acc % p));
      }
  for (int i2 = 0; i2 < n; ++i2)
    for (int k = 0; k < n; ++k)
      for (int j2 = 0; j2 < n; ++j2) {
        long long acc = 0;
        for (int j = 0; j < n; ++j) acc += static_cast<long long>(a.at(i2, j, k)) * P.at(j, j2);
        b.set(i2, j2, k, static_cast<int>(acc % p));
      }
  for (int i2 = 0; i2 < n; ++i2)
    for (int j2 = 0; j2 < n; ++j2)
      for (int k2 = 0; k2 < n; ++k2) {
        long long acc = 0;
        for (int k = 0; k < n; ++k) acc += static_cast<long long>(b.at(i2, j2, k)) * P.at(k, k2);
        c.set(i2, j2, k2, static_cast<int>(acc % p));
      }
  return c;
}

namespace {

constexpr std::array<std::array<int, 3>, 6> kPerms{
    {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

int perm_entry(const Tensor3& t, const std::array<int, 3>& pi, int i, int j, int k) {
  std::array<int, 3> idx{i, j, k};
  return t.at(idx[static_cast<std::size_t>(pi[0])], idx[static_cast<std::size_t>(pi[1])],
              idx[static_cast<std::size_t>(pi[2])]);
}

}  // namespace

Tensor3 symmetrize_div6(const Tensor3& tau, int p) {
  if (p == 2 || p == 3) throw BadCharacteristic("symmetrize_div6 needs 6 invertible mod p");
  int inv6 = fp_inv(6 % p, p);
  int n = tau.n;
  Tensor3 sigma(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        int s = 0;
        for (const auto& pi : kPerms) s += perm_entry(tau, pi, i, j, k);
        sigma.set(i, j, k, (s % p) * inv6 % p);
      }
  return sigma;
}

SymmetrizationResult find_sym(const Tensor3& tau, int p, int delta_rank) {
  int n = tau.n;
  // slice matrices: A_i^{(1)} = tau(e_i,.,.), A_i^{(2)} = tau(.,e_i,.),
  // A_i^{(3)} = tau(.,.,e_i); V kills every asymmetry A - A^T
  std::vector<FpMatrix> asym;
  asym.reserve(static_cast<std::size_t>(3 * n));
  for (int fam = 0; fam < 3; ++fam)
    for (int i = 0; i < n; ++i) {
      FpMatrix A(n, n);
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          int v = fam == 0 ? tau.at(i, j, k) : fam == 1 ? tau.at(j, i, k) : tau.at(j, k, i);
          A.set(j, k, v);
        }
      FpMatrix D(n, n);
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) D.set(j, k, ((A.at(j, k) - A.at(k, j)) % p + p) % p);
      asym.push_back(std::move(D));
    }
  std::vector<FpVector> V = kernel_intersection(asym, p);
  SymmetrizationResult res;
  res.codim = n - static_cast<int>(V.size());
  res.within_bound = res.codim <= 5 * delta_rank;
  if (V.empty()) {
    res.sigma = Tensor3(n);
    res.V = {};
    return res;
  }
  FpMatrix P = projection_onto(V, p, n);
  res.sigma = tensor_conjugate(tau, P, p);
  res.V = std::move(V);
  return res;
}

bool csm_law_holds(const Tensor3& t, int p, RngStream& rng, int probes) {
  int n = t.n;
  for (int s = 0; s < probes; ++s) {
    FpVector h(n);
    for (int i = 0; i < n; ++i) h.set(i, static_cast<int>(rng.next_residue(p)));
    if (tensor_apply(t, h, h, h, p) != 0) return false;
  }
  return true;
}

CSMForm find_csm(const Tensor3& sigma, int p) {
  if (p != 3) throw BadCharacteristic("find_csm is the p = 3 route");
  int n = sigma.n;
  // x -> sigma(x,x,x) is linear in char 3; its coefficient at e_i is the
  // diagonal entry
  FpMatrix T(1, n);
  for (int i = 0; i < n; ++i) T.set(0, i, sigma.at(i, i, i));
  std::vector<FpVector> K = nullspace(T, p);
  CSMForm out;
  out.codim = n - static_cast<int>(K.size());
  if (K.empty()) {
    out.t = Tensor3(n);
    return out;
  }
  FpMatrix P = projection_onto(K, p, n);
  out.t = tensor_conjugate(sigma, P, p);
  return out;
}

CubicPolynomial integrate_cubic(const Tensor3& sigma, const FpParams& params) {
  int p = params.p, n = params.n;
  if (p % 2 == 0) throw BadCharacteristic("integrate_cubic needs odd p");
  int inv2 = fp_inv(2 % p, p);
  CubicPolynomial P = CubicPolynomial::zero(params, PolyKind::Classical);
  for (int i = 0; i < n; ++i) {
    if (sigma.at(i, i, i) != 0) {
      if (p == 3)
        throw BadCharacteristic("p = 3 integration needs a CSM (zero diagonal)");
      P.add_term({i, i, i}, sigma.at(i, i, i) * fp_inv(6 % p, p) % p);
    }
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sigma.at(i, i, j) != 0) P.add_term({i, i, j}, sigma.at(i, i, j) * inv2 % p);
      for (int k = j + 1; k < n; ++k)
        if (k != i && j > i && sigma.at(i, j, k) != 0) P.add_term({i, j, k}, sigma.at(i, j, k));
    }
  }
  return P;
}

bool ncsm_law_holds(const Tensor3& t, RngStream& rng, int probes) {
  int n = t.n;
  for (int s = 0; s < probes; ++s) {
    FpVector h1(n), h2(n);
    for (int i = 0; i < n; ++i) {
      h1.set(i, static_cast<int>(rng.next_residue(2)));
      h2.set(i, static_cast<int>(rng.next_residue(2)));
    }
    if (tensor_apply(t, h1, h1, h2, 2) != tensor_apply(t, h1, h2, h2, 2)) return false;
  }
  return true;
}

NCSMForm find_ncsm(const Tensor3& sigma) {
  int n = sigma.n;
  FpMatrix B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      B.set(i, j, ((sigma.at(i, i, j) - sigma.at(i, j, j)) % 2 + 2) % 2);
  NCSMForm out;
  out.codim = gaussian_rank(B, 2);
  std::vector<FpVector> U = nullspace(B, 2);
  if (U.empty()) {
    out.t = Tensor3(n);
    return out;
  }
  FpMatrix P = projection_onto(U, 2, n);
  out.t = tensor_conjugate(sigma, P, 2);
  return out;
}

CubicPolynomial integrate_nonclassical(const Tensor3& sigma, const FpParams& params) {
  int n = params.n;
  if (params.p != 2) throw BadCharacteristic("non-classical integration is the p = 2 route");
  CubicPolynomial P = CubicPolynomial::zero(params, PolyKind::NonClassical);
  for (int i = 0; i < n; ++i) {
    if (sigma.at(i, i, i)) P.add_term({i}, sigma.at(i, i, i));  // |x_i|/8
    for (int j = i + 1; j < n; ++j) {
      int d1 = sigma.at(i, i, j), d2 = sigma.at(i, j, j);
      if (d1 != d2)
        throw NotNCSM("pair coefficient mismatch at (" + std::to_string(i) + "," +
                      std::to_string(j) + ")");
      if (d1) P.add_term({i, j}, d1);  // |x_i||x_j|/4
      for (int k = j + 1; k < n; ++k)
        if (sigma.at(i, j, k)) P.add_term({i, j, k}, sigma.at(i, j, k));  // |..|/2
    }
  }
  return P;
}

double exact_tensor_bias(const Tensor3& tau, int p) {
  int n = tau.n;
  std::uint64_t N = 1;
  for (int i = 0; i < n; ++i) N *= static_cast<std::uint64_t>(p);
  // E_x omega^{x . w(y,z)} collapses to [w(y,z) = 0]
  std::uint64_t zero_count = 0;
  for (std::uint64_t yi = 0; yi < N; ++yi) {
    FpVector yv = vector_of(yi, p, n);
    // m(j,i) = sum_k tau_ijk z_k rebuilt per z below; precompute tau(e_i, yv, .)
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(n),
                                       std::vector<int>(static_cast<std::size_t>(n), 0));
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) {
        long long acc = 0;
        for (int j = 0; j < n; ++j)
          acc += static_cast<long long>(tau.at(i, j, k)) * yv.at(j);
        rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
            static_cast<int>(acc % p);
      }
    for (std::uint64_t zi = 0; zi < N; ++zi) {
      FpVector zv = vector_of(zi, p, n);
      bool allzero = true;
      for (int i = 0; i < n && allzero; ++i) {
        long long acc = 0;
        for (int k = 0; k < n; ++k)
          acc += static_cast<long long>(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) *
                 zv.at(k);
        if (acc % p != 0) allzero = false;
      }
      if (allzero) ++zero_count;
    }
  }
  return static_cast<double>(zero_count) / (static_cast<double>(N) * static_cast<double>(N));
}

}  // namespace hofa
