#include "hofa/poly.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace hofa {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// x^e = x^(reduced e) on F_p by Fermat.
int reduce_exponent(int e, int p) {
  if (e < p || e == 0) return e;
  return (e - 1) % (p - 1) + 1;
}

Monomial canonical_classical_monomial(Monomial m, int p) {
  std::sort(m.begin(), m.end());
  std::map<int, int> exps;
  for (int i : m) exps[i] += 1;
  Monomial out;
  for (auto& [var, e] : exps) {
    int r = reduce_exponent(e, p);
    for (int t = 0; t < r; ++t) out.push_back(var);
  }
  return out;
}

}  // namespace

CubicPolynomial CubicPolynomial::zero(const FpParams& params, PolyKind kind) {
  CubicPolynomial P;
  P.params = params;
  P.kind = kind;
  if (kind == PolyKind::NonClassical && params.p != 2)
    throw BadCharacteristic("non-classical polynomials only exist here for p = 2");
  return P;
}

int CubicPolynomial::nc_modulus(const Monomial& m) {
  switch (m.size()) {
    case 0: return 8;
    case 1: return 8;
    case 2: return 4;
    case 3: return 2;
    default: throw Error("monomial degree > 3");
  }
}

int CubicPolynomial::degree() const {
  int d = 0;
  for (const auto& [m, c] : coeffs)
    if (c != 0) d = std::max(d, static_cast<int>(m.size()));
  return d;
}

bool CubicPolynomial::is_zero() const {
  for (const auto& [m, c] : coeffs)
    if (c != 0) return false;
  return true;
}

void CubicPolynomial::normalize() {
  std::map<Monomial, int> out;
  if (kind == PolyKind::Classical) {
    for (const auto& [m, c] : coeffs) {
      if (m.size() > 3) throw Error("polynomial degree > 3");
      Monomial cm = canonical_classical_monomial(m, params.p);
      out[cm] = ((out[cm] + c) % params.p + params.p) % params.p;
    }
    for (auto it = out.begin(); it != out.end();)
      it = it->second == 0 ? out.erase(it) : std::next(it);
  } else {
    for (const auto& [m, c] : coeffs) {
      if (m.size() > 3) throw Error("polynomial degree > 3");
      // |x_i|^2 = |x_i|: dedup indices, rescaling the numerator to the new
      // basis element's modulus.
      Monomial dm = m;
      std::sort(dm.begin(), dm.end());
      dm.erase(std::unique(dm.begin(), dm.end()), dm.end());
      int mod_old = nc_modulus(m), mod_new = nc_modulus(dm);
      long long num = static_cast<long long>(c) * (mod_new / mod_old);
      out[dm] = static_cast<int>(((out[dm] + num) % mod_new + mod_new) % mod_new);
    }
    for (auto it = out.begin(); it != out.end();)
      it = it->second == 0 ? out.erase(it) : std::next(it);
  }
  coeffs = std::move(out);
}

void CubicPolynomial::add_term(const Monomial& m, int coeff) {
  coeffs[m] += coeff;
  normalize();
}

int CubicPolynomial::eval_classical(const FpVector& x) const {
  if (kind != PolyKind::Classical) throw Error("eval_classical on non-classical polynomial");
  int p = params.p;
  long long acc = 0;
  for (const auto& [m, c] : coeffs) {
    int prod = 1;
    for (int i : m) prod = prod * x.at(i) % p;
    acc += static_cast<long long>(c) * prod;
  }
  return static_cast<int>(acc % p);
}

int CubicPolynomial::eval_num8(const FpVector& x) const {
  if (kind != PolyKind::NonClassical) throw Error("eval_num8 on classical polynomial");
  long long acc = 0;
  for (const auto& [m, c] : coeffs) {
    int prod = 1;
    for (int i : m) prod &= x.at(i);  // |.| on F_2, products stay 0/1
    if (prod) acc += static_cast<long long>(c) * (8 / nc_modulus(m));
  }
  return static_cast<int>(acc % 8);
}

std::complex<double> CubicPolynomial::phase(const FpVector& x) const {
  if (kind == PolyKind::Classical) {
    double t = kTwoPi * eval_classical(x) / params.p;
    return {std::cos(t), std::sin(t)};
  }
  double t = kTwoPi * eval_num8(x) / 8.0;
  return {std::cos(t), std::sin(t)};
}

CubicPolynomial CubicPolynomial::plus(const CubicPolynomial& other) const {
  if (!(params == other.params)) throw Error("polynomial addition across different groups");
  if (kind == other.kind) {
    CubicPolynomial r = *this;
    for (const auto& [m, c] : other.coeffs) r.coeffs[m] += c;
    r.normalize();
    return r;
  }
  if (params.p != 2)
    throw Error("mixed classical/non-classical addition requires p = 2");
  // Embed the classical side into the dyadic representation: value c/2 on the
  // product of |x_i|, i.e. numerator c * modulus(m)/2.
  const CubicPolynomial& cla = kind == PolyKind::Classical ? *this : other;
  const CubicPolynomial& ncl = kind == PolyKind::Classical ? other : *this;
  CubicPolynomial r = ncl;
  CubicPolynomial cn = cla;
  cn.normalize();
  for (const auto& [m, c] : cn.coeffs) r.coeffs[m] += c * (nc_modulus(m) / 2);
  r.normalize();
  return r;
}

CubicPolynomial CubicPolynomial::negated() const { return scaled(-1); }

CubicPolynomial CubicPolynomial::scaled(int t) const {
  CubicPolynomial r = *this;
  for (auto& [m, c] : r.coeffs) c *= t;
  r.normalize();
  return r;
}

CubicPolynomial CubicPolynomial::truncated(int max_degree) const {
  CubicPolynomial r = *this;
  for (auto it = r.coeffs.begin(); it != r.coeffs.end();)
    it = static_cast<int>(it->first.size()) > max_degree ? r.coeffs.erase(it) : std::next(it);
  return r;
}

int additive_derivative_classical(const CubicPolynomial& P, const std::vector<FpVector>& hs,
                                  const FpVector& x) {
  int k = static_cast<int>(hs.size());
  int p = P.params.p;
  long long acc = 0;
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    FpVector pt = x;
    int bits = 0;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) {
        pt = fp_add(pt, hs[static_cast<std::size_t>(i)], p);
        ++bits;
      }
    int sign = ((k - bits) % 2 == 0) ? 1 : -1;
    acc += sign * P.eval_classical(pt);
  }
  return static_cast<int>((acc % p + p) % p);
}

int additive_derivative_num8(const CubicPolynomial& P, const std::vector<FpVector>& hs,
                             const FpVector& x) {
  int k = static_cast<int>(hs.size());
  long long acc = 0;
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    FpVector pt = x;
    int bits = 0;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) {
        pt = fp_add(pt, hs[static_cast<std::size_t>(i)], 2);
        ++bits;
      }
    int sign = ((k - bits) % 2 == 0) ? 1 : -1;
    acc += sign * P.eval_num8(pt);
  }
  return static_cast<int>((acc % 8 + 8) % 8);
}

Tensor3 total_derivative_d3(const CubicPolynomial& P) {
  int n = P.params.n;
  Tensor3 t(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        std::vector<FpVector> hs = {unit_vector(n, i), unit_vector(n, j), unit_vector(n, k)};
        FpVector zero(n);
        if (P.kind == PolyKind::Classical) {
          t.set(i, j, k, additive_derivative_classical(P, hs, zero));
        } else {
          int num = additive_derivative_num8(P, hs, zero);
          if (num % 4 != 0)
            throw Error("d^3 of a non-classical cubic landed outside (1/2)Z/Z");
          t.set(i, j, k, num / 4);
        }
      }
  return t;
}

CubicPolynomial cubic_from_tensor_div6(const Tensor3& t, const FpParams& params) {
  if (params.p < 5) throw BadCharacteristic("division by 6 requires p >= 5");
  int inv6 = fp_inv(6 % params.p, params.p);
  CubicPolynomial P = CubicPolynomial::zero(params);
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int k = 0; k < t.n; ++k) {
        int c = t.at(i, j, k);
        if (c == 0) continue;
        P.coeffs[canonical_classical_monomial({i, j, k}, params.p)] += c * inv6 % params.p;
      }
  P.normalize();
  return P;
}

namespace {

std::string monomial_key(const Monomial& m) {
  std::ostringstream os;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) os << '.';
    os << m[i];
  }
  return os.str();
}

Monomial parse_monomial_key(const std::string& key) {
  Monomial m;
  if (key.empty()) return m;
  std::istringstream is(key);
  std::string part;
  while (std::getline(is, part, '.')) m.push_back(std::stoi(part));
  return m;
}

}  // namespace

std::string CubicPolynomial::to_json() const {
  nlohmann::ordered_json j;
  j["p"] = params.p;
  j["n"] = params.n;
  j["kind"] = kind == PolyKind::Classical ? "classical" : "non-classical";
  nlohmann::ordered_json mons = nlohmann::ordered_json::object();
  // std::map ordering on the Monomial vectors is already deterministic; keys
  // sorted by (length, lexicographic index order) for readability.
  std::vector<std::pair<Monomial, int>> items(coeffs.begin(), coeffs.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first.size() != b.first.size()) return a.first.size() < b.first.size();
    return a.first < b.first;
  });
  for (const auto& [m, c] : items) {
    if (c == 0) continue;
    if (kind == PolyKind::Classical) {
      mons[monomial_key(m)] = c;
    } else {
      // always expressed over denominator 8
      int num8 = c * (8 / nc_modulus(m)) % 8;
      mons[monomial_key(m)] = std::to_string(num8) + "/8";
    }
  }
  j["monomials"] = mons;
  return j.dump(2);
}

CubicPolynomial CubicPolynomial::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CubicPolynomial P;
  P.params.p = j.at("p").get<int>();
  P.params.n = j.at("n").get<int>();
  P.params.validate();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "classical") {
    P.kind = PolyKind::Classical;
  } else if (kind == "non-classical") {
    P.kind = PolyKind::NonClassical;
    if (P.params.p != 2) throw Error("non-classical polynomial requires p = 2");
  } else {
    throw Error("polynomial JSON: unknown kind '" + kind + "'");
  }
  for (const auto& [key, val] : j.at("monomials").items()) {
    Monomial m = parse_monomial_key(key);
    for (int i : m)
      if (i < 0 || i >= P.params.n) throw Error("polynomial JSON: variable index out of range");
    if (P.kind == PolyKind::Classical) {
      P.coeffs[m] += val.get<int>();
    } else {
      std::string s = val.get<std::string>();
      auto slash = s.find('/');
      if (slash == std::string::npos || s.substr(slash + 1) != "8")
        throw Error("polynomial JSON: non-classical coefficient must look like 'a/8'");
      int num8 = std::stoi(s.substr(0, slash));
      int scale = 8 / nc_modulus(m);
      if (num8 % scale != 0)
        throw Error("polynomial JSON: coefficient " + s + " invalid for monomial '" + key + "'");
      P.coeffs[m] += num8 / scale;
    }
  }
  P.normalize();
  return P;
}

namespace {

void all_monomials_up_to(int n, int degree, Monomial& cur, int start,
                         std::vector<Monomial>& out) {
  out.push_back(cur);
  if (static_cast<int>(cur.size()) == degree) return;
  for (int i = start; i < n; ++i) {
    cur.push_back(i);
    all_monomials_up_to(n, degree, cur, i, out);  // repeats allowed
    cur.pop_back();
  }
}

}  // namespace

CubicPolynomial random_classical_polynomial(const FpParams& params, int degree, RngStream& rng) {
  CubicPolynomial P = CubicPolynomial::zero(params);
  Monomial cur;
  std::vector<Monomial> mons;
  all_monomials_up_to(params.n, degree, cur, 0, mons);
  for (const auto& m : mons) P.coeffs[m] = rng.next_residue(params.p);
  P.normalize();
  return P;
}

CubicPolynomial random_nonclassical_cubic(const FpParams& params, RngStream& rng) {
  if (params.p != 2) throw BadCharacteristic("non-classical polynomials require p = 2");
  CubicPolynomial P = CubicPolynomial::zero(params, PolyKind::NonClassical);
  int n = params.n;
  for (int i = 0; i < n; ++i) {
    P.coeffs[{i}] = static_cast<int>(rng.next_below(8));
    for (int j = i + 1; j < n; ++j) {
      P.coeffs[{i, j}] = static_cast<int>(rng.next_below(4));
      for (int k = j + 1; k < n; ++k) P.coeffs[{i, j, k}] = static_cast<int>(rng.next_below(2));
    }
  }
  P.normalize();
  return P;
}

}  // namespace hofa
