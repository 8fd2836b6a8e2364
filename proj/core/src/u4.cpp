#include "hofa/u4.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include <unordered_map>

#include "hofa/errors.hpp"
#include "hofa/symint.hpp"

namespace hofa {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

FpVector random_point(const FpParams& params, RngStream& rng) {
  FpVector x(params.n);
  for (int i = 0; i < params.n; ++i) x.set(i, rng.next_residue(params.p));
  return x;
}

FpVector random_nonzero(const FpParams& params, RngStream& rng) {
  for (;;) {
    FpVector x = random_point(params, rng);
    if (index_of(x, params.p) != 0) return x;
  }
}

int dot(const FpVector& a, const FpVector& b, int p) {
  int acc = 0;
  for (int i = 0; i < a.size(); ++i) acc = (acc + a.at(i) * b.at(i)) % p;
  return acc;
}

FpMatrix stack_rows(const std::vector<FpVector>& rows, int n) {
  FpMatrix m(static_cast<int>(rows.size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < n; ++j) m.set(static_cast<int>(i), j, rows[i].at(j));
  return m;
}

// random element of the span of `basis` (zero vector when the basis is empty)
FpVector random_in_span(const std::vector<FpVector>& basis, const FpParams& params,
                        RngStream& rng) {
  FpVector x(params.n);
  for (const FpVector& b : basis) {
    int c = rng.next_residue(params.p);
    if (c == 0) continue;
    x = fp_add(x, fp_scale(b, c, params.p), params.p);
  }
  return x;
}

// M = sum_l a_l b_l^T with rank(M) terms, by Gaussian peeling.
std::vector<std::pair<FpVector, FpVector>> rank_factorize(FpMatrix m, int p) {
  std::vector<std::pair<FpVector, FpVector>> out;
  for (;;) {
    int pi = -1, pj = -1;
    for (int i = 0; i < m.rows && pi < 0; ++i)
      for (int j = 0; j < m.cols; ++j)
        if (m.at(i, j) != 0) {
          pi = i;
          pj = j;
          break;
        }
    if (pi < 0) break;
    int inv = 1;
    while ((inv * m.at(pi, pj)) % p != 1) ++inv;
    FpVector a(m.rows), b(m.cols);
    for (int i = 0; i < m.rows; ++i) a.set(i, (m.at(i, pj) * inv) % p);
    for (int j = 0; j < m.cols; ++j) b.set(j, m.at(pi, j));
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j)
        m.set(i, j, ((m.at(i, j) - a.at(i) * b.at(j)) % p + p) % p);
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

void append_form(std::vector<FpVector>& forms, const FpVector& f, int p) {
  if (index_of(f, p) == 0) return;
  std::vector<FpVector> trial = forms;
  trial.push_back(f);
  if (span_rank(trial, p) > span_rank(forms, p)) forms.push_back(f);
}

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double take() {
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    t0 = t1;
    return ms;
  }
};

}  // namespace

QueryOracle mixed_derivative(const QueryOracle& f, const FpVector& a, const FpVector& b) {
  int p = f.params().p;
  QueryOracle base = f;
  return QueryOracle(f.params(), [base, a, b, p](const FpVector& x) {
    FpVector xa = fp_add(x, a, p);
    return base(x) * std::conj(base(xa)) * std::conj(base(fp_add(x, b, p))) *
           base(fp_add(xa, b, p));
  });
}

// --- derivative spectra ------------------------------------------------------

struct DerivativeSpectrumMap::Impl {
  QueryOracle f;
  double tau = 0.1;
  double delta = 0.05;
  ParamSchedule sched;
  RngStream base;
  mutable std::unordered_map<std::uint64_t, std::optional<WeightedCharacter>> cache;
  mutable std::mutex lock;
  // tiny-domain fast path: one base query per point, derivative tables by
  // array indexing through cached shift permutations
  mutable std::vector<cdouble> table;
  mutable std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> shifts;
  mutable std::vector<cdouble> dbuf, roots, tbuf;

  Impl(QueryOracle f_, double tau_, double delta_, RngStream rng_, const ParamSchedule& sched_)
      : f(std::move(f_)), tau(tau_), delta(delta_), sched(sched_), base(rng_) {}

  bool tiny() const {
    return static_cast<double>(f.params().group_size()) <= sched.get("gl.exact_below");
  }

  const std::vector<std::uint32_t>& shift(const FpVector& v) const {
    std::uint64_t key = index_of(v, f.params().p);
    auto it = shifts.find(key);
    if (it != shifts.end()) return it->second;
    std::uint64_t g = f.params().group_size();
    std::vector<std::uint32_t> perm(g);
    for (std::uint64_t x = 0; x < g; ++x)
      perm[x] = static_cast<std::uint32_t>(
          index_of(fp_add(vector_of(x, f.params()), v, f.params().p), f.params().p));
    return shifts.emplace(key, std::move(perm)).first->second;
  }

  std::optional<WeightedCharacter> resolve(const FpVector& a, const FpVector& b) const {
    std::uint64_t key = pair_index(f.params(), a, b);
    std::scoped_lock g(lock);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::optional<WeightedCharacter> top;
    if (tiny()) {
      int p = f.params().p, n = f.params().n;
      std::uint64_t gs = f.params().group_size();
      if (table.empty()) {
        table.resize(gs);
        for (std::uint64_t x = 0; x < gs; ++x) table[x] = f(vector_of(x, f.params()));
        roots.resize(static_cast<std::size_t>(p));
        for (int s = 0; s < p; ++s) roots[static_cast<std::size_t>(s)] =
            std::exp(cdouble(0.0, kTwoPi * s / p));
        dbuf.resize(gs);
        tbuf.resize(static_cast<std::size_t>(p));
      }
      const auto& pa = shift(a);
      const auto& pb = shift(b);
      for (std::uint64_t x = 0; x < gs; ++x)
        dbuf[x] = table[x] * std::conj(table[pa[x]]) * std::conj(table[pb[x]]) *
                  table[pa[pb[x]]];
      // in-place radix-p passes (same transform as exact_dft, no copies)
      std::size_t stride = gs / static_cast<std::size_t>(p);
      for (int axis = 0; axis < n; ++axis) {
        std::size_t block = stride * static_cast<std::size_t>(p);
        for (std::size_t base2 = 0; base2 < gs; base2 += block)
          for (std::size_t off = 0; off < stride; ++off) {
            for (int r = 0; r < p; ++r) {
              cdouble acc = 0.0;
              for (int s = 0; s < p; ++s)
                acc += dbuf[base2 + off + static_cast<std::size_t>(s) * stride] *
                       std::conj(roots[static_cast<std::size_t>(r * s % p)]);
              tbuf[static_cast<std::size_t>(r)] = acc;
            }
            for (int r = 0; r < p; ++r)
              dbuf[base2 + off + static_cast<std::size_t>(r) * stride] =
                  tbuf[static_cast<std::size_t>(r)];
          }
        stride /= static_cast<std::size_t>(p);
      }
      // the same acceptance the exact GL path applies at threshold 2 tau;
      // compare squared moduli to keep sqrt out of the scan
      double bar = 0.75 * 2.0 * tau * static_cast<double>(gs);
      double bar2 = bar * bar, best2 = 0.0;
      std::uint64_t best_r = 0;
      bool found = false;
      for (std::uint64_t r = 0; r < gs; ++r) {
        double w2 = std::norm(dbuf[r]);
        if (w2 >= bar2 && (!found || w2 > best2)) {
          best2 = w2;
          best_r = r;
          found = true;
        }
      }
      if (found)
        top = WeightedCharacter{vector_of(best_r, f.params()),
                                std::sqrt(best2) / static_cast<double>(gs)};
    } else {
      QueryOracle d = mixed_derivative(f, a, b);
      RngStream local = base.fork("dsm", key);
      SpectrumList list = goldreich_levin(d, 2.0 * tau, delta, local, sched);
      for (const WeightedCharacter& wc : list)
        if (!top || wc.weight > top->weight) top = wc;
    }
    cache.emplace(key, top);
    return top;
  }
};

DerivativeSpectrumMap::DerivativeSpectrumMap(QueryOracle f, double tau, double delta,
                                             RngStream rng, const ParamSchedule& sched)
    : impl_(std::make_shared<Impl>(std::move(f), tau, delta, rng, sched)) {}

bool DerivativeSpectrumMap::member_A(const FpVector& a, const FpVector& b) const {
  return impl_->resolve(a, b).has_value();
}

std::optional<FpVector> DerivativeSpectrumMap::phi(const FpVector& a, const FpVector& b) const {
  auto top = impl_->resolve(a, b);
  if (!top) return std::nullopt;
  return top->r;
}

const FpParams& DerivativeSpectrumMap::params() const { return impl_->f.params(); }
double DerivativeSpectrumMap::tau() const { return impl_->tau; }
std::uint64_t DerivativeSpectrumMap::pairs_resolved() const {
  std::scoped_lock g(impl_->lock);
  return impl_->cache.size();
}

bool member_A(const DerivativeSpectrumMap& m, const FpVector& a, const FpVector& b) {
  return m.member_A(a, b);
}
std::optional<FpVector> query_phi(const DerivativeSpectrumMap& m, const FpVector& a,
                                  const FpVector& b) {
  return m.phi(a, b);
}

// --- parallelogram geometry --------------------------------------------------

std::array<std::pair<FpVector, FpVector>, 4> VertPgram::points(int p) const {
  FpVector xw = fp_add(x, w, p);
  return {std::pair{x, y}, {x, fp_add(y, h, p)}, {xw, yp}, {xw, fp_add(yp, h, p)}};
}

std::optional<FpVector> pgram_value(const PartialBiMap& phi, const VertPgram& P, int p) {
  auto pts = P.points(p);
  std::array<FpVector, 4> v;
  for (int i = 0; i < 4; ++i) {
    auto val = phi(pts[i].first, pts[i].second);
    if (!val) return std::nullopt;
    v[i] = *val;
  }
  // signs +,-,-,+
  return fp_add(fp_sub(v[0], v[1], p), fp_sub(v[3], v[2], p), p);
}

std::optional<FpVector> second_order_value(const PartialBiMap& phi, const SecondOrderVP& Q,
                                           int p) {
  std::array<FpVector, 4> v;
  for (int i = 0; i < 4; ++i) {
    auto val = pgram_value(phi, Q.P[i], p);
    if (!val) return std::nullopt;
    v[i] = *val;
  }
  return fp_add(fp_sub(v[0], v[1], p), fp_sub(v[3], v[2], p), p);
}

Arrangement32 Arrangement32::sample(const FpParams& params, RngStream& rng) {
  int p = params.p;
  // shared outer width Omega and height H; each Q gets its own inner widths,
  // heights, and four parallelogram bases.
  FpVector Omega = random_point(params, rng);
  FpVector H = random_point(params, rng);
  auto make_q = [&](SecondOrderVP& Q) {
    FpVector W = random_point(params, rng);
    FpVector H1 = random_point(params, rng);
    FpVector H2 = random_point(params, rng);
    FpVector wo = fp_add(W, Omega, p);
    std::array<FpVector, 4> ws = {W, W, wo, wo};
    std::array<FpVector, 4> hs = {H1, fp_add(H1, H, p), H2, fp_add(H2, H, p)};
    for (int i = 0; i < 4; ++i) {
      Q.P[i].x = random_point(params, rng);
      Q.P[i].y = random_point(params, rng);
      Q.P[i].yp = random_point(params, rng);
      Q.P[i].w = ws[i];
      Q.P[i].h = hs[i];
    }
  };
  Arrangement32 arr;
  make_q(arr.Q1);
  make_q(arr.Q2);
  return arr;
}

std::vector<std::pair<FpVector, FpVector>> Arrangement32::all_points(int p) const {
  std::vector<std::pair<FpVector, FpVector>> out;
  out.reserve(32);
  for (const SecondOrderVP* q : {&Q1, &Q2})
    for (const VertPgram& P : q->P)
      for (auto& pt : P.points(p)) out.push_back(pt);
  return out;
}

// --- Freiman columns ---------------------------------------------------------

struct FreimanColumnMap::Impl {
  DerivativeSpectrumMap spec;
  double delta = 0.05;
  ParamSchedule sched;
  RngStream base;
  mutable std::unordered_map<std::uint64_t, std::optional<AffineMap>> cache;
  mutable std::mutex lock;

  Impl(DerivativeSpectrumMap spec_, double delta_, RngStream rng_, const ParamSchedule& sched_)
      : spec(std::move(spec_)), delta(delta_), sched(sched_), base(rng_) {}

  std::optional<AffineMap> fit_fast(const FpVector& a, RngStream& rng) const {
    const FpParams& params = spec.params();
    int p = params.p, n = params.n;
    auto c0 = spec.phi(a, FpVector(n));
    if (!c0) return std::nullopt;
    AffineMap m{FpMatrix(n, n), *c0};
    for (int j = 0; j < n; ++j) {
      auto cj = spec.phi(a, unit_vector(n, j));
      if (!cj) return std::nullopt;
      FpVector col = fp_sub(*cj, *c0, p);
      for (int i = 0; i < n; ++i) m.L.set(i, j, col.at(i));
    }
    int defined = 0, agree = 0;
    for (int t = 0; t < 16; ++t) {
      FpVector b = random_point(params, rng);
      auto v = spec.phi(a, b);
      if (!v) continue;
      ++defined;
      if (index_of(fp_sub(*v, m.apply(b, p), p), p) == 0) ++agree;
    }
    if (defined < 8 || agree * 5 < defined * 4) return std::nullopt;  // < 80 percent
    return m;
  }

  std::optional<AffineMap> column(const FpVector& a) const {
    std::uint64_t key = index_of(a, spec.params().p);
    std::scoped_lock g(lock);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    RngStream rng = base.fork("freiman", key);
    std::optional<AffineMap> m = fit_fast(a, rng);
    if (!m) {
      // exhaustive fallback: collect the defined part of the column and let
      // the mixture-aware fitter look for a map agreeing on most of it
      const FpParams& params = spec.params();
      std::vector<FpVector> elems;
      std::map<std::uint64_t, FpVector> vals;
      for (std::uint64_t i = 0; i < params.group_size(); ++i) {
        FpVector b = vector_of(i, params);
        auto v = spec.phi(a, b);
        if (!v) continue;
        elems.push_back(b);
        vals.emplace(i, *v);
      }
      if (elems.size() >= static_cast<std::size_t>(2 * params.n + 2)) {
        SetOracle A = SetOracle::from_set(params, elems);
        VecOracle phi_a = [this, &a](const FpVector& b) { return *spec.phi(a, b); };
        try {
          m = find_affine_map(A, phi_a, 0.5, delta, rng, sched);
        } catch (const NoAffineFound&) {
          m = std::nullopt;
        }
      }
    }
    cache.emplace(key, m);
    return m;
  }
};

FreimanColumnMap::FreimanColumnMap(DerivativeSpectrumMap spec, double delta, RngStream rng,
                                   const ParamSchedule& sched)
    : impl_(std::make_shared<Impl>(std::move(spec), delta, rng, sched)) {}

bool FreimanColumnMap::member(const FpVector& a, const FpVector& b) const {
  auto col = impl_->column(a);
  if (!col) return false;
  auto v = impl_->spec.phi(a, b);
  if (!v) return false;
  int p = impl_->spec.params().p;
  return index_of(fp_sub(*v, col->apply(b, p), p), p) == 0;
}

std::optional<AffineMap> FreimanColumnMap::column_map(const FpVector& a) const {
  return impl_->column(a);
}

bool member_A_tilde(const FreimanColumnMap& m, const FpVector& a, const FpVector& b) {
  return m.member(a, b);
}

// --- dependent random selection ----------------------------------------------

double DependentSelection::weight(const FpVector& x, const FpVector& y) const {
  if (!freiman_.member(x, y)) return 0.0;
  auto ph = spec_.phi(x, y);
  if (!ph) return 0.0;
  int p = spec_.params().p;
  double w = 1.0;
  for (std::size_t i = 0; i < s_.size(); ++i) {
    int theta = (dot(s_[i], *ph, p) + fp_bilinear(x, M_[i], y, p)) % p;
    w *= 0.5 * (1.0 + std::cos(kTwoPi * theta / p));
  }
  return w;
}

std::optional<FpVector> DependentSelection::phi(const FpVector& x, const FpVector& y) const {
  return spec_.phi(x, y);
}

bool DependentSelection::member(const FpVector& x, const FpVector& y) const {
  std::uint64_t key = pair_index(spec_.params(), x, y);
  {
    std::scoped_lock g(*lock_);
    auto it = decided_->find(key);
    if (it != decided_->end()) return it->second;
  }
  double w = weight(x, y);
  std::scoped_lock g(*lock_);
  bool in = false;
  if (w > 0.0) {
    auto it = store_->find(key);
    if (it == store_->end()) it = store_->emplace(key, draw_->next_real()).first;
    in = it->second <= w;
  }
  decided_->emplace(key, in);
  return in;
}

std::size_t DependentSelection::store_size() const {
  std::scoped_lock g(*lock_);
  return store_->size();
}

const FpParams& DependentSelection::params() const { return spec_.params(); }

bool member_A_prime(const DependentSelection& sel, const FpVector& x, const FpVector& y) {
  return sel.member(x, y);
}

DependentSelection DependentSelection::certify(const DerivativeSpectrumMap& spec,
                                               const FreimanColumnMap& freiman, double eta_dep,
                                               double delta, RngStream& rng,
                                               const ParamSchedule& sched) {
  const FpParams& params = spec.params();
  int p = params.p, n = params.n;
  int k = sched.geti("u4.k_dep");
  long long T = sched.geti("u4.cert_samples");
  double rho = 0.75 * eta_dep;
  const int attempts = 8;
  std::string last;

  for (int attempt = 0; attempt < attempts; ++attempt) {
    RngStream arng = rng.fork("certify", static_cast<std::uint64_t>(attempt));

    std::vector<FpVector> s;
    s.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) s.push_back(random_nonzero(params, arng));

    // Estimate the bilinear kernel of phi by mixed differencing and align
    // M_i = -sum_k s_i[k] T_k against it; a proposal that ignores phi keeps
    // the per-tuple retention probability at 2^{-32 k} and can never certify.
    std::vector<std::vector<FpVector>> D(static_cast<std::size_t>(n));
    for (auto& row : D) row.assign(static_cast<std::size_t>(n), FpVector(n));
    {
      std::vector<std::map<std::string, std::pair<int, FpVector>>> tally(
          static_cast<std::size_t>(n * n));
      for (int probe = 0; probe < 3; ++probe) {
        FpVector x0 = random_point(params, arng);
        FpVector y0 = random_point(params, arng);
        // phi at the (n+1)^2 grid corners around (x0, y0)
        auto grid = [&](int a, int b) -> std::optional<FpVector> {
          FpVector xa = a < 0 ? x0 : fp_add(x0, unit_vector(n, a), p);
          FpVector yb = b < 0 ? y0 : fp_add(y0, unit_vector(n, b), p);
          return spec.phi(xa, yb);
        };
        auto base = grid(-1, -1);
        if (!base) continue;
        for (int a = 0; a < n; ++a) {
          auto ga = grid(a, -1);
          if (!ga) continue;
          for (int b = 0; b < n; ++b) {
            auto gb = grid(-1, b);
            auto gab = grid(a, b);
            if (!gb || !gab) continue;
            FpVector d = fp_add(fp_sub(*gab, *ga, p), fp_sub(*base, *gb, p), p);
            auto& cell = tally[static_cast<std::size_t>(a * n + b)];
            std::string key = std::to_string(index_of(d, p));
            cell.emplace(key, std::pair{0, d}).first->second.first++;
          }
        }
      }
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          auto& cell = tally[static_cast<std::size_t>(a * n + b)];
          int best = 0;
          for (auto& [key, cnt] : cell)
            if (cnt.first > best) {
              best = cnt.first;
              D[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = cnt.second;
            }
        }
    }
    std::vector<FpMatrix> M;
    M.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      FpMatrix m(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          m.set(a, b, ((-dot(s[static_cast<std::size_t>(i)],
                             D[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)], p)) %
                           p +
                       p) %
                          p);
      M.push_back(std::move(m));
    }

    DependentSelection sel;
    sel.spec_ = spec;
    sel.freiman_ = freiman;
    sel.s_ = s;
    sel.M_ = M;
    sel.store_ = std::make_shared<std::unordered_map<std::uint64_t, double>>();
    sel.decided_ = std::make_shared<std::unordered_map<std::uint64_t, bool>>();
    sel.lock_ = std::make_shared<std::mutex>();
    sel.draw_ = std::make_shared<RngStream>(arng.fork("thresholds"));

    RngStream trng = arng.fork("tuples");
    long long retained = 0, respected = 0;
    for (long long t = 0; t < T; ++t) {
      Arrangement32 arr = Arrangement32::sample(params, trng);
      bool keep = true;
      for (auto& pt : arr.all_points(p))
        if (!sel.member(pt.first, pt.second)) {
          keep = false;
          break;
        }
      if (!keep) continue;
      ++retained;
      PartialBiMap phi_map = [&spec](const FpVector& a, const FpVector& b) {
        return spec.phi(a, b);
      };
      auto l1 = second_order_value(phi_map, arr.Q1, p);
      auto l2 = second_order_value(phi_map, arr.Q2, p);
      if (l1 && l2 && index_of(fp_sub(*l1, *l2, p), p) == 0) ++respected;
    }
    if (retained < T / 2) {
      last = "retained " + std::to_string(retained) + " of " + std::to_string(T);
      continue;
    }
    if (static_cast<double>(respected) < (1.0 - rho) * static_cast<double>(retained)) {
      last = "respected " + std::to_string(respected) + " of " + std::to_string(retained);
      continue;
    }
    sel.density_ = static_cast<double>(retained) / static_cast<double>(T);
    return sel;
  }
  throw CertifierExhausted("dependent selection: no certified (s, M) after " +
                           std::to_string(attempts) + " attempts; last: " + last);
}

// --- bilinear Bogolyubov -----------------------------------------------------

namespace {

SpectrumList row_spectrum(const BiOracle& f, const FpVector& w, double gamma, double delta,
                          RngStream& rng, const ParamSchedule& sched) {
  long long s_box = sched.geti("u4.box_samples");
  auto row_rng = std::make_shared<RngStream>(rng.fork("row", index_of(w, f.params().p)));
  const BiOracle* fp = &f;
  QueryOracle row(f.params(), [fp, w, s_box, row_rng](const FpVector& h) {
    return box_estimate(*fp, w, h, s_box, *row_rng);
  });
  RngStream grng = rng.fork("rowgl", index_of(w, f.params().p));
  return goldreich_levin(row, gamma, delta, grng, sched);
}

bool row_covered(const std::vector<AffineMap>& maps, const FpVector& w, const SpectrumList& list,
                 int p) {
  for (const AffineMap& m : maps) {
    FpVector pred = m.apply(w, p);
    for (const WeightedCharacter& wc : list)
      if (index_of(fp_sub(pred, wc.r, p), p) == 0) return true;
  }
  return false;
}

}  // namespace

std::vector<AffineMap> bogo_aff_map(const BiOracle& f, double gamma, double xi, double delta,
                                    RngStream& rng, const ParamSchedule& sched) {
  const FpParams& params = f.params();
  int p = params.p;
  long long rows = sched.geti("u4.bogo_rows");
  long long iters = sched.geti("u4.bogo_iters");
  auto cap = static_cast<std::size_t>(sched.geti("u4.max_maps"));
  std::size_t need = static_cast<std::size_t>(2 * params.n + 4);

  std::vector<AffineMap> maps;
  std::map<std::uint64_t, FpVector> uncovered;  // row -> top char
  for (long long iter = 0; iter < iters; ++iter) {
    long long bad = 0;
    for (long long i = 0; i < rows; ++i) {
      FpVector w = random_point(params, rng);
      SpectrumList list =
          row_spectrum(f, w, gamma, delta, rng, sched);
      if (list.empty()) continue;  // no large character: nothing to cover
      if (row_covered(maps, w, list, p)) continue;
      ++bad;
      const WeightedCharacter* top = &list[0];
      for (const WeightedCharacter& wc : list)
        if (wc.weight > top->weight) top = &wc;
      uncovered.emplace(index_of(w, p), top->r);
    }
    if (static_cast<double>(bad) <= xi * static_cast<double>(rows)) return maps;
    if (uncovered.size() >= need) {
      std::vector<FpVector> elems;
      elems.reserve(uncovered.size());
      for (auto& [idx, chr] : uncovered) elems.push_back(vector_of(idx, params));
      SetOracle A = SetOracle::from_set(params, elems);
      VecOracle lookup = [&uncovered, p](const FpVector& w) {
        return uncovered.at(index_of(w, p));
      };
      try {
        RngStream frng = rng.fork("bogofit", static_cast<std::uint64_t>(iter));
        AffineMap m = find_affine_map(A, lookup, 0.5, delta, frng, sched);
        bool dup = false;
        for (const AffineMap& e : maps)
          if (e.L.e == m.L.e && e.b.c == m.b.c) dup = true;
        if (!dup) maps.push_back(std::move(m));
        uncovered.clear();
      } catch (const NoAffineFound&) {
        // keep accumulating assignments; a larger sample may isolate a map
      }
    }
    if (maps.size() > cap)
      throw IterationCapExceeded("bogo_aff_map: exceeded " + std::to_string(cap) + " maps");
  }
  throw IterationCapExceeded("bogo_aff_map: uncovered rows above xi after " +
                             std::to_string(iters) + " rounds");
}

BiAffineMap bohr_aff_map(const BiOracle& f, const std::vector<AffineMap>& maps, double xi,
                         double delta, RngStream& rng, const ParamSchedule& sched,
                         bool improved) {
  const FpParams& params = f.params();
  int p = params.p, n = params.n;
  auto m = static_cast<double>(maps.size());
  auto codim_cap = static_cast<std::size_t>(sched.geti("u4.codim_cap"));
  long long s_box = sched.geti("u4.bogou_samples");

  BiAffineMap beta;
  beta.params = params;
  for (const AffineMap& map : maps) {
    BiAffineCoord c{fp_transpose(map.L), FpVector(n), map.b, 0};
    beta.coords.push_back(std::move(c));
  }

  double zeta;
  if (improved) {
    zeta = xi / 4.0;
  } else {
    zeta = xi * xi / std::max(1.0, m * m * std::pow(2.0, m));
    zeta = std::max(zeta, sched.get("u4.zeta_floor"));
  }

  // residual spectra: u_i(y) = (1/r) sum_l box_f(x_l, y) omega^{-<T_i x_l, y>}
  long long r_rows = std::max<long long>(
      4, static_cast<long long>(std::ceil(3.0 * std::log2(m + 1.0) + 2.0 * std::log2(1.0 / xi))));
  std::vector<FpVector> xs;
  for (long long l = 0; l < r_rows; ++l) xs.push_back(random_point(params, rng));

  std::vector<FpVector> y_forms;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const AffineMap& map = maps[i];
    auto urng = std::make_shared<RngStream>(rng.fork("bogou", i));
    const BiOracle* fp2 = &f;
    QueryOracle u(params, [fp2, &xs, map, p, s_box, urng](const FpVector& y) {
      cdouble acc = 0.0;
      for (const FpVector& x : xs) {
        int t = dot(map.apply(x, p), y, p);
        acc += box_estimate(*fp2, x, y, s_box, *urng) *
               std::exp(cdouble(0.0, -kTwoPi * t / p));
      }
      return acc / static_cast<double>(xs.size());
    });
    RngStream grng = rng.fork("bogougl", i);
    SpectrumList list = goldreich_levin(u, zeta, delta, grng, sched);
    for (const WeightedCharacter& wc : list) append_form(y_forms, wc.r, p);
    if (beta.coords.size() + y_forms.size() > codim_cap)
      throw CodimCapExceeded("bohr_aff_map: residual spectrum forms exceed codim cap");
  }

  if (improved) {
    // collision pairs: maps agreeing on a noticeable fraction of points share
    // structure; a basis of rowspace(L_i - L_j) replaces their joint spectrum
    long long t_g = sched.geti("u4.collision_samples");
    double bar = std::max(2.0 * std::pow(p, -static_cast<double>(r_rows)),
                          1.5 / static_cast<double>(t_g));
    for (std::size_t i = 0; i < maps.size(); ++i)
      for (std::size_t j = i + 1; j < maps.size(); ++j) {
        long long coll = 0;
        for (long long t = 0; t < t_g; ++t) {
          FpVector g = random_point(params, rng);
          if (index_of(fp_sub(maps[i].apply(g, p), maps[j].apply(g, p), p), p) == 0) ++coll;
        }
        if (static_cast<double>(coll) / static_cast<double>(t_g) < bar) continue;
        FpMatrix d = fp_mat_sub(maps[i].L, maps[j].L, p);
        for (auto& [a, b] : rank_factorize(d, p)) append_form(y_forms, b, p);
      }
  }

  for (const FpVector& v : y_forms) {
    BiAffineCoord c{FpMatrix(n, n), FpVector(n), v, 0};
    beta.coords.push_back(std::move(c));
  }
  if (beta.k() > static_cast<int>(codim_cap))
    throw CodimCapExceeded("bohr_aff_map: codim " + std::to_string(beta.k()) + " > cap " +
                           std::to_string(codim_cap));
  return beta;
}

// --- Bohr decomposition ------------------------------------------------------

FpVector BohrDecomposition::label_v(const FpVector& x) const {
  FpVector v(static_cast<int>(x0.size()));
  for (std::size_t i = 0; i < x0.size(); ++i)
    v.set(static_cast<int>(i), dot(x0[i], x, params().p));
  return v;
}

FpVector BohrDecomposition::label_w(const FpVector& y) const {
  FpVector w(static_cast<int>(y0.size()));
  for (std::size_t i = 0; i < y0.size(); ++i)
    w.set(static_cast<int>(i), dot(y0[i], y, params().p));
  return w;
}

bool BohrDecomposition::in_cell(const FpVector& x, const FpVector& y, const BohrCell& cell) const {
  int p = params().p;
  if (index_of(fp_sub(label_v(x), cell.v, p), p) != 0) return false;
  if (index_of(fp_sub(label_w(y), cell.w, p), p) != 0) return false;
  if (beta.k() == 0) return true;
  return index_of(fp_sub(beta.eval(x, y), cell.z, p), p) == 0;
}

bool BohrDecomposition::diff_member(const FpVector& w, const FpVector& h) const {
  int p = params().p;
  for (const FpVector& u : x0)
    if (dot(u, w, p) != 0) return false;
  for (const FpVector& u : y0)
    if (dot(u, h, p) != 0) return false;
  for (const BiAffineCoord& c : beta.coords)
    if (fp_bilinear(w, c.T, h, p) != 0) return false;
  return true;
}

std::vector<FpVector> BohrDecomposition::column_basis(const FpVector& w) const {
  int p = params().p, n = params().n;
  std::vector<FpVector> rows = y0;
  for (const BiAffineCoord& c : beta.coords) rows.push_back(fp_mat_apply_left(w, c.T, p));
  if (rows.empty()) {
    std::vector<FpVector> full;
    for (int i = 0; i < n; ++i) full.push_back(unit_vector(n, i));
    return full;
  }
  return nullspace(stack_rows(rows, n), p);
}

std::vector<FpVector> BohrDecomposition::row_basis(const FpVector& h) const {
  int p = params().p, n = params().n;
  std::vector<FpVector> rows = x0;
  for (const BiAffineCoord& c : beta.coords) rows.push_back(fp_mat_apply(c.T, h, p));
  if (rows.empty()) {
    std::vector<FpVector> full;
    for (int i = 0; i < n; ++i) full.push_back(unit_vector(n, i));
    return full;
  }
  return nullspace(stack_rows(rows, n), p);
}

std::vector<FpVector> BohrDecomposition::x_free_basis() const {
  int n = params().n;
  if (x0.empty()) {
    std::vector<FpVector> full;
    for (int i = 0; i < n; ++i) full.push_back(unit_vector(n, i));
    return full;
  }
  return nullspace(stack_rows(x0, n), params().p);
}

std::vector<FpVector> BohrDecomposition::y_free_basis() const {
  int n = params().n;
  if (y0.empty()) {
    std::vector<FpVector> full;
    for (int i = 0; i < n; ++i) full.push_back(unit_vector(n, i));
    return full;
  }
  return nullspace(stack_rows(y0, n), params().p);
}

BohrDecomposition bohr_decomp(const BiAffineMap& beta, int t, const ParamSchedule& sched) {
  const FpParams& params = beta.params;
  int p = params.p, n = params.n;
  auto enum_cap = sched.get("u4.enum_cap");

  BohrDecomposition out;
  out.beta.params = params;
  out.t = t;

  // pure affine coordinates go straight to the label forms
  std::vector<BiAffineCoord> cur;
  for (const BiAffineCoord& c : beta.coords) {
    bool bil = false;
    for (int e : c.T.e)
      if (e != 0) bil = true;
    if (bil) {
      cur.push_back(c);
    } else {
      append_form(out.x0, c.A, p);
      append_form(out.y0, c.B, p);
    }
  }

  while (!cur.empty()) {
    auto k = static_cast<int>(cur.size());
    double pk = std::pow(p, k);
    if (pk > enum_cap)
      throw ExactBudgetExceeded("bohr_decomp: p^" + std::to_string(k) +
                                " translates exceed the enumeration budget");
    auto total = static_cast<std::uint64_t>(pk);
    int best_rank = t;
    std::optional<FpVector> best_u;
    for (std::uint64_t idx = 1; idx < total; ++idx) {
      FpVector u = vector_of(idx, p, k);
      FpMatrix acc(n, n);
      for (int i = 0; i < k; ++i)
        if (u.at(i) != 0) acc = fp_mat_add(acc, fp_mat_scale(cur[static_cast<std::size_t>(i)].T, u.at(i), p), p);
      int r = gaussian_rank(acc, p);
      if (r < best_rank) {
        best_rank = r;
        best_u = u;
      }
    }
    if (!best_u) break;  // every translate has rank >= t

    const FpVector& u = *best_u;
    FpMatrix acc(n, n);
    FpVector au(n), bu(n);
    int pivot = -1;
    for (int i = 0; i < k; ++i) {
      int ui = u.at(i);
      if (ui == 0) continue;
      if (pivot < 0) pivot = i;
      const BiAffineCoord& c = cur[static_cast<std::size_t>(i)];
      acc = fp_mat_add(acc, fp_mat_scale(c.T, ui, p), p);
      au = fp_add(au, fp_scale(c.A, ui, p), p);
      bu = fp_add(bu, fp_scale(c.B, ui, p), p);
    }
    for (auto& [a, b] : rank_factorize(acc, p)) {
      append_form(out.x0, a, p);
      append_form(out.y0, b, p);
    }
    append_form(out.x0, au, p);
    append_form(out.y0, bu, p);
    cur.erase(cur.begin() + pivot);
  }

  out.beta.coords = std::move(cur);
  return out;
}

FiniteFunction proj_beta_exact(const FiniteFunction& F, const BohrDecomposition& decomp) {
  const FpParams& params = F.params;
  std::uint64_t g = params.group_size();
  std::map<std::string, std::pair<cdouble, long long>> cells;
  auto key_of = [&](std::uint64_t xi, std::uint64_t yi) {
    FpVector x = vector_of(xi, params), y = vector_of(yi, params);
    std::ostringstream os;
    os << index_of(decomp.label_v(x), params.p) << ':'
       << index_of(decomp.label_w(y), params.p) << ':'
       << (decomp.beta.k() > 0 ? index_of(decomp.beta.eval(x, y), params.p) : 0);
    return os.str();
  };
  for (std::uint64_t xi = 0; xi < g; ++xi)
    for (std::uint64_t yi = 0; yi < g; ++yi) {
      auto& cell = cells[key_of(xi, yi)];
      cell.first += F.values[xi * g + yi];
      cell.second += 1;
    }
  FiniteFunction out = F;
  for (std::uint64_t xi = 0; xi < g; ++xi)
    for (std::uint64_t yi = 0; yi < g; ++yi) {
      auto& cell = cells[key_of(xi, yi)];
      out.values[xi * g + yi] = cell.first / static_cast<double>(cell.second);
    }
  return out;
}

// --- high-rank Bohr set ------------------------------------------------------

BohrCell high_rk_bohr_set(const BohrDecomposition& decomp, const CellPsiPair& psi_pair,
                          const PointEstimator& mu_prime, const CellEstimator& xi_prime,
                          double eta_dep, double xi_allow, double delta, RngStream& rng,
                          const ParamSchedule& sched) {
  const FpParams& params = decomp.params();
  int p = params.p;
  long long tries = sched.geti("u4.bohr_tries");
  long long samples = sched.geti("u4.cell_samples");
  double rho = sched.get("u4.rho");
  double scale = sched.get("u4.testA_scale");
  (void)delta;

  // global density reference for Test B
  double mu_hat = 0.0;
  {
    RngStream mrng = rng.fork("mu-global");
    for (long long i = 0; i < samples; ++i) {
      FpVector x = random_point(params, mrng), y = random_point(params, mrng);
      mu_hat += mu_prime(x, y, mrng);
    }
    mu_hat /= static_cast<double>(samples);
  }
  double mu_ref = std::pow(mu_hat, 8.0);

  auto r = static_cast<double>(decomp.x0.size());
  auto s = static_cast<double>(decomp.y0.size());
  auto k = static_cast<double>(decomp.beta.k());
  double t = decomp.t;
  double thrA = scale * (1.0 - 5.0 * eta_dep) * std::pow(p, -3.0 * r - 5.0 * s) *
                std::max(std::pow(p, -7.0 * k) - 4.0 * std::pow(p, 2.0 * k - t), 0.0);

  std::map<std::string, BohrCell> seen;
  for (long long att = 0; att < tries; ++att) {
    FpVector x = random_point(params, rng), y = random_point(params, rng);
    BohrCell cell{decomp.label_v(x), decomp.label_w(y),
                  decomp.beta.k() > 0 ? decomp.beta.eval(x, y) : FpVector(0)};
    std::ostringstream os;
    os << index_of(cell.v, p) << ':' << index_of(cell.w, p) << ':'
       << (cell.z.size() > 0 ? index_of(cell.z, p) : 0);
    if (!seen.emplace(os.str(), cell).second) continue;

    // Test A: psi collision mass over shared (w, h)
    RngStream arng = rng.fork("testA", static_cast<std::uint64_t>(att));
    long long defined = 0, equal = 0;
    for (long long i = 0; i < samples; ++i) {
      auto pr = psi_pair(cell, arng);
      if (!pr) continue;
      ++defined;
      if (index_of(fp_sub(pr->first, pr->second, p), p) == 0) ++equal;
    }
    if (defined < samples / 2) continue;
    if (static_cast<double>(equal) < thrA * static_cast<double>(defined)) continue;

    // Test B: cell density against the global reference
    RngStream brng = rng.fork("testB", static_cast<std::uint64_t>(att));
    double mu_cell = 0.0;
    long long got = 0;
    for (long long i = 0; i < 64 * samples && got < samples; ++i) {
      FpVector cx = random_point(params, brng), cy = random_point(params, brng);
      if (!decomp.in_cell(cx, cy, cell)) continue;
      mu_cell += mu_prime(cx, cy, brng);
      ++got;
    }
    if (got < samples / 4) continue;
    mu_cell /= static_cast<double>(got);
    if (mu_cell < mu_ref / 2.0 - rho / 2.0) continue;

    // Test C: projection residual inside the cell
    RngStream crng = rng.fork("testC", static_cast<std::uint64_t>(att));
    if (xi_prime(cell, crng) > xi_allow + rho / 2.0) continue;

    return cell;
  }
  throw NoBohrSetPassed("high_rk_bohr_set: no sampled cell passed tests A-C (" +
                        std::to_string(seen.size()) + " distinct cells tried)");
}

// --- majority-corrected psi --------------------------------------------------

namespace {

// uniform point of an affine solution set F x = v (throws on inconsistency --
// callers only pass labels realized by actual points)
FpVector solve_label(const std::vector<FpVector>& forms, const FpVector& v,
                     const FpParams& params, RngStream& rng) {
  if (forms.empty()) return random_point(params, rng);
  FpMatrix F = stack_rows(forms, params.n);
  auto x0 = fp_solve(F, v, params.p);
  if (!x0) throw BasisExtractionFailed("cell label is not realized by any point");
  std::vector<FpVector> ker = nullspace(F, params.p);
  return fp_add(*x0, random_in_span(ker, params, rng), params.p);
}

}  // namespace

std::optional<FpVector> query_tilde_psi(const BohrDecomposition& decomp, const BohrCell& cell,
                                        const PartialBiMap& phi, const FpVector& w,
                                        const FpVector& h, double delta, RngStream& rng,
                                        const ParamSchedule& sched) {
  const FpParams& params = decomp.params();
  int p = params.p;
  if (!decomp.diff_member(w, h)) return std::nullopt;

  long long votes = std::max<long long>(9, 2 * static_cast<long long>(std::ceil(3.0 * std::log(1.0 / delta))) + 1);
  long long budget = 64 * votes * std::max<long long>(1, static_cast<long long>(std::pow(p, decomp.beta.k())));
  budget = std::min<long long>(budget, static_cast<long long>(sched.get("u4.enum_cap")));

  std::map<std::uint64_t, std::pair<long long, FpVector>> tally;
  long long got = 0;
  for (long long i = 0; i < budget && got < votes; ++i) {
    VertPgram P;
    P.w = w;
    P.h = h;
    P.x = solve_label(decomp.x0, cell.v, params, rng);
    P.y = solve_label(decomp.y0, cell.w, params, rng);
    P.yp = solve_label(decomp.y0, cell.w, params, rng);
    if (decomp.beta.k() > 0) {
      bool ok = true;
      for (auto& pt : P.points(p))
        if (!decomp.in_cell(pt.first, pt.second, cell)) {
          ok = false;
          break;
        }
      if (!ok) continue;
    }
    auto val = pgram_value(phi, P, p);
    if (!val) continue;
    tally.emplace(index_of(*val, p), std::pair{0LL, *val}).first->second.first++;
    ++got;
  }
  if (got < votes)
    throw RejectionBudgetExceeded("query_tilde_psi: " + std::to_string(got) + " of " +
                                  std::to_string(votes) + " votes within budget");
  const std::pair<long long, FpVector>* best = nullptr;
  for (auto& [idx, cnt] : tally)
    if (!best || cnt.first > best->first) best = &cnt;
  return best->second;
}

// --- bi-affine extension -----------------------------------------------------

BiAffineMap extend_biaffine(const BohrDecomposition& decomp, const TildePsi& psi, double eps_cell,
                            double delta, RngStream& rng, const ParamSchedule& sched) {
  const FpParams& params = decomp.params();
  int p = params.p, n = params.n;
  (void)delta;

  std::vector<FpVector> wfree = decomp.x_free_basis();
  if (wfree.empty()) throw NoFullRankSlice("extend_biaffine: X_0 has full rank, no rows left");
  if (decomp.beta.k() > 0) {
    bool any = false;
    for (int t = 0; t < 32 && !any; ++t) {
      FpVector w = random_in_span(wfree, params, rng);
      if (index_of(w, p) == 0) continue;
      if (!decomp.column_basis(w).empty()) any = true;
    }
    if (!any) throw NoFullRankSlice("extend_biaffine: no sampled row has a nontrivial column");
  }

  // collect psi values on B'' and fit tau_ijk; one additive repair per miss
  auto query = [&](const FpVector& w, const FpVector& h,
                   const std::vector<FpVector>& col) -> std::optional<FpVector> {
    auto direct = psi(w, h, rng);
    if (direct) return direct;
    FpVector h1 = random_in_span(col, params, rng);
    auto a = psi(w, fp_sub(h, h1, p), rng);
    auto b = psi(w, h1, rng);
    if (a && b) return fp_add(*a, *b, p);
    return std::nullopt;
  };

  long long want = 4LL * n * n + 16;
  std::vector<FpVector> ws, hs, vals;
  for (long long t = 0; t < 4 * want && static_cast<long long>(ws.size()) < want; ++t) {
    FpVector w = random_in_span(wfree, params, rng);
    if (index_of(w, p) == 0) continue;
    std::vector<FpVector> col = decomp.column_basis(w);
    if (col.empty()) continue;
    FpVector h = random_in_span(col, params, rng);
    if (index_of(h, p) == 0) continue;
    auto val = query(w, h, col);
    if (!val) continue;
    ws.push_back(w);
    hs.push_back(h);
    vals.push_back(*val);
  }
  if (ws.size() < static_cast<std::size_t>(n + 2))
    throw NoFullRankSlice("extend_biaffine: only " + std::to_string(ws.size()) +
                          " usable psi values");

  FpMatrix R(static_cast<int>(ws.size()), n * n);
  for (std::size_t e = 0; e < ws.size(); ++e)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        R.set(static_cast<int>(e), i * n + j, (ws[e].at(i) * hs[e].at(j)) % p);

  // per output coordinate k solve R tau_k = psi_k; free directions stay zero
  std::vector<FpMatrix> T(static_cast<std::size_t>(n), FpMatrix(n, n));
  for (int k = 0; k < n; ++k) {
    FpVector rhs(static_cast<int>(ws.size()));
    for (std::size_t e = 0; e < ws.size(); ++e) rhs.set(static_cast<int>(e), vals[e].at(k));
    auto sol = fp_solve(R, rhs, p);
    if (!sol) {
      // prune to a majority-consistent subset before giving up
      bool done = false;
      RngStream prng = rng.fork("prune", static_cast<std::uint64_t>(k));
      for (int round = 0; round < 6 && !done; ++round) {
        std::vector<int> keep;
        for (std::size_t e = 0; e < ws.size(); ++e)
          if (prng.next_bernoulli(0.5)) keep.push_back(static_cast<int>(e));
        if (keep.size() < static_cast<std::size_t>(n)) continue;
        FpMatrix Rk(static_cast<int>(keep.size()), n * n);
        FpVector rk(static_cast<int>(keep.size()));
        for (std::size_t e = 0; e < keep.size(); ++e) {
          for (int c = 0; c < n * n; ++c) Rk.set(static_cast<int>(e), c, R.at(keep[e], c));
          rk.set(static_cast<int>(e), rhs.at(keep[e]));
        }
        auto s2 = fp_solve(Rk, rk, p);
        if (s2) {
          sol = s2;
          done = true;
        }
      }
      if (!sol)
        throw BasisExtractionFailed("extend_biaffine: inconsistent psi system at coordinate " +
                                    std::to_string(k));
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) T[static_cast<std::size_t>(k)].set(i, j, sol->at(i * n + j));
  }

  // audit on fresh pairs
  long long audits = 24, misses = 0, checked = 0;
  for (long long t = 0; t < 4 * audits && checked < audits; ++t) {
    FpVector w = random_in_span(wfree, params, rng);
    std::vector<FpVector> col = decomp.column_basis(w);
    if (col.empty()) continue;
    FpVector h = random_in_span(col, params, rng);
    auto val = psi(w, h, rng);
    if (!val) continue;
    ++checked;
    FpVector pred(n);
    for (int k = 0; k < n; ++k) pred.set(k, fp_bilinear(w, T[static_cast<std::size_t>(k)], h, p));
    if (index_of(fp_sub(pred, *val, p), p) != 0) ++misses;
  }
  if (checked > 0 && static_cast<double>(misses) > eps_cell * static_cast<double>(checked))
    throw BasisExtractionFailed("extend_biaffine: audit misses " + std::to_string(misses) +
                                " of " + std::to_string(checked));

  BiAffineMap out;
  out.params = params;
  for (int k = 0; k < n; ++k) {
    BiAffineCoord c{T[static_cast<std::size_t>(k)], FpVector(n), FpVector(n), 0};
    out.coords.push_back(std::move(c));
  }
  return out;
}

// --- orchestration -----------------------------------------------------------

namespace {

Tensor3 tensor_of(const BiAffineMap& bimap) {
  int n = bimap.params.n;
  Tensor3 t(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) t.set(i, j, k, bimap.coords[static_cast<std::size_t>(k)].T.at(i, j));
  return t;
}

void write_checkpoint(const std::string& dir, const std::string& name, const std::string& body) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream os(dir + "/" + name);
  os << body;
}

std::optional<std::string> read_checkpoint(const std::string& dir, const std::string& name) {
  if (dir.empty()) return std::nullopt;
  std::ifstream is(dir + "/" + name);
  if (!is) return std::nullopt;
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string dump_tensor(const Tensor3& t, const FpParams& params) {
  std::ostringstream os;
  os << params.p << ' ' << params.n << '\n';
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int k = 0; k < t.n; ++k) os << t.at(i, j, k) << (k + 1 == t.n ? '\n' : ' ');
  return os.str();
}

std::optional<Tensor3> parse_tensor(const std::string& body, const FpParams& params) {
  std::istringstream is(body);
  int p = 0, n = 0;
  if (!(is >> p >> n) || p != params.p || n != params.n) return std::nullopt;
  Tensor3 t(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        int v;
        if (!(is >> v)) return std::nullopt;
        t.set(i, j, k, ((v % p) + p) % p);
      }
  return t;
}

}  // namespace

std::string FindCubicResult::report_json() const {
  nlohmann::json j;
  j["polynomial"] = nlohmann::json::parse(poly.to_json());
  j["correlation"] = correlation;
  nlohmann::json st = nlohmann::json::array();
  for (const StageRecord& s : stages) {
    nlohmann::json e;
    e["stage"] = s.name;
    e["millis"] = s.millis;
    e["queries"] = s.queries;
    if (!s.note.empty()) e["note"] = s.note;
    st.push_back(e);
  }
  j["stages"] = st;
  return j.dump(2);
}

FindCubicResult find_cubic(const QueryOracle& f, double eps, double delta, RngStream& rng,
                           const ParamSchedule& sched, bool improved,
                           const std::string& checkpoint_dir) {
  const FpParams& params = f.params();
  int p = params.p, n = params.n;
  FindCubicResult res;
  StageClock clock;
  std::string stage = "spectrum";

  auto record = [&](const std::string& note) {
    res.stages.push_back({stage, clock.take(), f.queries(), note});
  };
  auto fail = [&](const std::string& what) -> PipelineStageFailed {
    return PipelineStageFailed(stage, what);
  };

  try {
    // 1. derivative spectra.  tilde-eps = eps^16 / 2 floored by the schedule.
    double tau = std::max(std::pow(eps, 16.0) / 2.0, sched.get("u4.tau_floor"));
    DerivativeSpectrumMap spec(f, tau, delta, rng.fork("spectrum"), sched);
    record("tau=" + std::to_string(tau));

    // 2.2 Freiman columns
    stage = "freiman";
    FreimanColumnMap freiman(spec, delta, rng.fork("freiman"), sched);
    record("");

    // 2.1 dependent selection behind the certifier
    stage = "selection";
    double eta_dep = sched.get("u4.eta_dep");
    RngStream srng = rng.fork("selection");
    DependentSelection sel = DependentSelection::certify(spec, freiman, eta_dep, delta, srng, sched);
    record("density=" + std::to_string(sel.sampled_density()));

    // 3.1 Bogolyubov covering of the rows of box(1_{A'})
    stage = "bogolyubov";
    BiOracle ind(params, [&sel](const FpVector& x, const FpVector& y) {
      return cdouble(sel.member(x, y) ? 1.0 : 0.0, 0.0);
    });
    double gamma = sched.get("u4.bogo_gamma");
    double xi = sched.get("u4.bogo_xi");
    RngStream brng = rng.fork("bogo");
    std::vector<AffineMap> maps = bogo_aff_map(ind, gamma, xi, delta, brng, sched);
    record("maps=" + std::to_string(maps.size()));

    // 3.2 bi-affine Bohr map
    stage = "bohr-aff-map";
    RngStream mrng = rng.fork("bohr-map");
    BiAffineMap beta = bohr_aff_map(ind, maps, xi, delta, mrng, sched, improved);
    record("codim=" + std::to_string(beta.k()));

    // 4.1 decomposition at the dependence-breaking rank
    stage = "decomp";
    double t_formula =
        std::ceil(60.0 * beta.k() + 9.0 * std::log(1.0 / eta_dep) / std::log(double(p)));
    int t = std::max(1, std::min({n, static_cast<int>(t_formula),
                                  static_cast<int>(sched.geti("u4.t_rank_cap"))}));
    BohrDecomposition decomp = bohr_decomp(beta, t, sched);
    record("t=" + std::to_string(t) + " k=" + std::to_string(decomp.beta.k()) + " r=" +
           std::to_string(decomp.x0.size()) + " s=" + std::to_string(decomp.y0.size()));

    // 4.2 pick a good cell
    stage = "bohr-set";
    PartialBiMap phi_map = [&sel](const FpVector& a, const FpVector& b) { return sel.phi(a, b); };
    CellPsiPair psi_pair = [&](const BohrCell& cell, RngStream& prng)
        -> std::optional<std::pair<FpVector, FpVector>> {
      // one shared (w, h) in the difference domain, two independent pgram draws
      std::vector<FpVector> wfree = decomp.x_free_basis();
      if (wfree.empty()) return std::nullopt;
      FpVector w = random_in_span(wfree, params, prng);
      std::vector<FpVector> col = decomp.column_basis(w);
      if (col.empty()) return std::nullopt;
      FpVector h = random_in_span(col, params, prng);
      auto draw = [&]() -> std::optional<FpVector> {
        for (int t2 = 0; t2 < 24; ++t2) {
          VertPgram P;
          P.w = w;
          P.h = h;
          P.x = solve_label(decomp.x0, cell.v, params, prng);
          P.y = solve_label(decomp.y0, cell.w, params, prng);
          P.yp = solve_label(decomp.y0, cell.w, params, prng);
          if (decomp.beta.k() > 0) {
            bool ok = true;
            for (auto& pt : P.points(p))
              if (!decomp.in_cell(pt.first, pt.second, cell)) ok = false;
            if (!ok) continue;
          }
          auto v = pgram_value(phi_map, P, p);
          if (v) return v;
        }
        return std::nullopt;
      };
      auto a = draw();
      auto b = draw();
      if (!a || !b) return std::nullopt;
      return std::pair{*a, *b};
    };
    PointEstimator mu_est = [&sel](const FpVector& x, const FpVector& y, RngStream&) {
      return sel.member(x, y) ? 1.0 : 0.0;
    };
    long long s_box = sched.geti("u4.box_samples");
    CellEstimator xi_est = [&](const BohrCell& cell, RngStream& crng) {
      // E_cell (F - E_cell F)^2 for F = box(1_{A'}), sampled
      long long want2 = sched.geti("u4.cell_samples");
      std::vector<double> vals;
      for (long long i = 0; i < 64 * want2 && static_cast<long long>(vals.size()) < want2; ++i) {
        FpVector x = random_point(params, crng), y = random_point(params, crng);
        if (!decomp.in_cell(x, y, cell)) continue;
        vals.push_back(box_estimate(ind, x, y, s_box, crng).real());
      }
      if (vals.empty()) return 1.0;
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      return var / static_cast<double>(vals.size());
    };
    double zeta = improved ? xi / 4.0
                           : std::max(xi * xi / std::max(1.0, std::pow(2.0, maps.size()) *
                                                                  maps.size() * maps.size()),
                                      sched.get("u4.zeta_floor"));
    double xi_allow = 1.5 * zeta / gamma;
    RngStream cellrng = rng.fork("bohr-set");
    BohrCell cell = high_rk_bohr_set(decomp, psi_pair, mu_est, xi_est, eta_dep, xi_allow, delta,
                                     cellrng, sched);
    record("cell=" + std::to_string(index_of(cell.v, p)) + ":" +
           std::to_string(index_of(cell.w, p)));

    // 5 + 6: majority-corrected psi extended to an explicit trilinear tensor
    stage = "extend";
    Tensor3 tau_tensor(n);
    bool loaded = false;
    if (auto body = read_checkpoint(checkpoint_dir, "tensor.txt")) {
      if (auto t3 = parse_tensor(*body, params)) {
        tau_tensor = *t3;
        loaded = true;
      }
    }
    if (!loaded) {
      RngStream xrng = rng.fork("extend");
      TildePsi psi = [&](const FpVector& w, const FpVector& h, RngStream& qrng)
          -> std::optional<FpVector> {
        try {
          return query_tilde_psi(decomp, cell, phi_map, w, h, std::max(delta, 0.01), qrng, sched);
        } catch (const RejectionBudgetExceeded&) {
          return std::nullopt;
        }
      };
      BiAffineMap bimap = extend_biaffine(decomp, psi, sched.get("u4.cell_eps"), delta, xrng, sched);
      tau_tensor = tensor_of(bimap);
      write_checkpoint(checkpoint_dir, "tensor.txt", dump_tensor(tau_tensor, params));
    }
    record(loaded ? "tensor=checkpoint" : "tensor=fit");

    // 7: anti-differentiate
    stage = "cubic";
    CubicPolynomial kappa = CubicPolynomial::zero(params);
    if (p >= 5) {
      kappa = cubic_from_tensor_div6(tau_tensor, params);
    } else {
      SymmetrizationResult sym = find_sym(tau_tensor, p, n);
      if (p == 3) {
        CSMForm csm = find_csm(sym.sigma, p);
        kappa = integrate_cubic(csm.t, params);
      } else {
        NCSMForm ncsm = find_ncsm(sym.sigma);
        kappa = integrate_nonclassical(ncsm.t, params);
      }
    }
    record("terms=" + std::to_string(kappa.coeffs.size()));

    // 8: peel the cubic part and run the U^3 step on the remainder
    stage = "u3";
    QueryOracle g = twist_by_phase(f, kappa);
    RngStream urng = rng.fork("u3-step");
    QuadraticResult qr = find_quadratic(g, std::max(0.5 * eps, 0.1), delta, urng, sched);
    CubicPolynomial total = qr.q ? kappa.plus(*qr.q) : kappa;
    record(qr.q ? "quadratic=found" : "quadratic=none");

    // 9: fresh verification; nothing unverified leaves the pipeline
    stage = "verify";
    double corr = 0.0;
    if (static_cast<double>(params.group_size()) <= sched.get("exact.max_table")) {
      FiniteFunction tab = FiniteFunction::zeros(params);
      for (std::uint64_t i = 0; i < params.group_size(); ++i)
        tab.values[i] = f(vector_of(i, params));
      corr = std::abs(exact_correlation_with_phase(tab, total));
    } else {
      RngStream vrng = rng.fork("verify");
      QueryOracle ph = QueryOracle::from_phase(total);
      Estimate est = approx_iprod(f, ph, 0.02, delta, vrng, sched);
      corr = std::abs(est.value);
    }
    double floor_corr = sched.get("u4.eta") / 2.0;
    if (corr < floor_corr)
      throw Error("verified correlation " + std::to_string(corr) + " below " +
                  std::to_string(floor_corr));
    res.poly = total;
    res.correlation = corr;
    record("corr=" + std::to_string(corr));
  } catch (const PipelineStageFailed&) {
    throw;
  } catch (const Error& e) {
    throw fail(e.what());
  }
  return res;
}

}  // namespace hofa
