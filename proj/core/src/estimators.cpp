#include "hofa/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hofa {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<cdouble> roots_of_unity(int p) {
  std::vector<cdouble> w(static_cast<std::size_t>(p));
  for (int t = 0; t < p; ++t) {
    double a = kTwoPi * t / p;
    w[static_cast<std::size_t>(t)] = {std::cos(a), std::sin(a)};
  }
  return w;
}

void check_exact_budget(std::size_t size, const ParamSchedule& sched) {
  if (static_cast<double>(size) > sched.get("exact.max_table"))
    throw ExactBudgetExceeded("table of size " + std::to_string(size) +
                              " exceeds exact.max_table");
}

// given a capped sample count, the honest achievable additive error at 1-delta
double capped_error(double eps, double delta, long long t, double c) {
  double need = static_cast<double>(chernoff_samples(eps, delta, c));
  if (static_cast<double>(t) >= need) return eps;
  return eps * std::sqrt(need / static_cast<double>(t));
}

FpVector random_point(const FpParams& params, RngStream& rng) {
  FpVector x(params.n);
  for (int i = 0; i < params.n; ++i) x.set(i, rng.next_residue(params.p));
  return x;
}

}  // namespace

// --- DFT --------------------------------------------------------------------

FiniteFunction exact_dft(const FiniteFunction& f, const ParamSchedule& sched) {
  if (f.bivariate() || is_fp_valued(f.kind))
    throw Error("exact_dft wants a univariate complex table");
  check_exact_budget(f.domain_size(), sched);
  int p = f.params.p, n = f.params.n;
  auto N = f.domain_size();
  std::vector<cdouble> a = f.values;
  std::vector<cdouble> w = roots_of_unity(p);
  // one p-point transform along each coordinate axis; coordinate j has stride
  // p^{n-1-j} in the canonical big-endian index
  std::size_t stride = N / static_cast<std::size_t>(p);
  std::vector<cdouble> tmp(static_cast<std::size_t>(p));
  for (int axis = 0; axis < n; ++axis) {
    std::size_t block = stride * static_cast<std::size_t>(p);
    for (std::size_t base = 0; base < N; base += block) {
      for (std::size_t off = 0; off < stride; ++off) {
        for (int r = 0; r < p; ++r) {
          cdouble acc = 0.0;
          for (int s = 0; s < p; ++s)
            acc += a[base + off + static_cast<std::size_t>(s) * stride] *
                   std::conj(w[static_cast<std::size_t>(r * s % p)]);
          tmp[static_cast<std::size_t>(r)] = acc;
        }
        for (int r = 0; r < p; ++r)
          a[base + off + static_cast<std::size_t>(r) * stride] = tmp[static_cast<std::size_t>(r)];
      }
    }
    stride /= static_cast<std::size_t>(p);
  }
  FiniteFunction out = f;
  out.values = std::move(a);
  double scale = 1.0 / static_cast<double>(N);
  for (auto& v : out.values) v *= scale;
  return out;
}

FiniteFunction exact_dft_naive(const FiniteFunction& f) {
  int p = f.params.p;
  auto N = f.domain_size();
  FiniteFunction out = FiniteFunction::zeros(f.params);
  std::vector<cdouble> w = roots_of_unity(p);
  for (std::size_t ri = 0; ri < N; ++ri) {
    FpVector r = vector_of(ri, p, f.params.n);
    cdouble acc = 0.0;
    for (std::size_t xi = 0; xi < N; ++xi) {
      FpVector x = vector_of(xi, p, f.params.n);
      acc += f.values[xi] * std::conj(w[static_cast<std::size_t>(fp_dot(r, x, p))]);
    }
    out.values[ri] = acc / static_cast<double>(N);
  }
  return out;
}

FiniteFunction exact_idft(const FiniteFunction& fhat, const ParamSchedule& sched) {
  check_exact_budget(fhat.domain_size(), sched);
  // conjugation trick: idft(g) = N * conj(dft(conj(g)))
  FiniteFunction g = fhat;
  for (auto& v : g.values) v = std::conj(v);
  FiniteFunction h = exact_dft(g, sched);
  double N = static_cast<double>(fhat.domain_size());
  for (auto& v : h.values) v = std::conj(v) * N;
  return h;
}

std::vector<std::pair<FpVector, cdouble>> exact_spectrum(const FiniteFunction& f, double gamma,
                                                         const ParamSchedule& sched) {
  FiniteFunction fh = exact_dft(f, sched);
  std::vector<std::pair<FpVector, cdouble>> out;
  for (std::size_t i = 0; i < fh.values.size(); ++i)
    if (std::abs(fh.values[i]) >= gamma)
      out.emplace_back(vector_of(i, f.params.p, f.params.n), fh.values[i]);
  return out;
}

// --- U^k --------------------------------------------------------------------

namespace {

double u2_fourth_power(const FiniteFunction& f, const ParamSchedule& sched) {
  FiniteFunction fh = exact_dft(f, sched);
  double acc = 0.0;
  for (const cdouble& v : fh.values) {
    double m = std::norm(v);
    acc += m * m;
  }
  return acc;
}

FiniteFunction derivative_table(const FiniteFunction& f, std::size_t hi) {
  int p = f.params.p;
  auto N = f.domain_size();
  FpVector h = vector_of(hi, p, f.params.n);
  FiniteFunction d = FiniteFunction::zeros(f.params);
  for (std::size_t xi = 0; xi < N; ++xi) {
    FpVector x = vector_of(xi, p, f.params.n);
    std::size_t si = index_of(fp_add(x, h, p), p);
    d.values[xi] = f.values[si] * std::conj(f.values[xi]);
  }
  return d;
}

double uk_power(const FiniteFunction& f, int k, const ParamSchedule& sched) {
  if (k == 2) return u2_fourth_power(f, sched);
  auto N = f.domain_size();
  double acc = 0.0;
  for (std::size_t hi = 0; hi < N; ++hi)
    acc += uk_power(derivative_table(f, hi), k - 1, sched);
  return acc / static_cast<double>(N);
}

}  // namespace

double exact_uk_norm(const FiniteFunction& f, int k, const ParamSchedule& sched) {
  if (k < 2 || k > 4) throw Error("exact_uk_norm supports k in 2..4");
  if (f.bivariate() || is_fp_valued(f.kind))
    throw Error("exact_uk_norm wants a univariate complex table");
  check_exact_budget(f.domain_size() * f.domain_size(), sched);
  double power = uk_power(f, k, sched);
  power = std::max(power, 0.0);
  return std::pow(power, 1.0 / static_cast<double>(1 << k));
}

double exact_uk_norm_naive(const FiniteFunction& f, int k) {
  int p = f.params.p;
  auto N = f.domain_size();
  int kk = k;
  // enumerate (x, h_1..h_k); product over subsets with alternating conjugation
  std::vector<std::size_t> idx(static_cast<std::size_t>(kk) + 1, 0);
  double total = 0.0;
  bool done = false;
  while (!done) {
    FpVector x = vector_of(idx[0], p, f.params.n);
    std::vector<FpVector> hs;
    for (int i = 1; i <= kk; ++i) hs.push_back(vector_of(idx[static_cast<std::size_t>(i)], p, f.params.n));
    cdouble prod = 1.0;
    for (unsigned mask = 0; mask < (1u << kk); ++mask) {
      FpVector pt = x;
      int bits = 0;
      for (int i = 0; i < kk; ++i)
        if (mask & (1u << i)) {
          pt = fp_add(pt, hs[static_cast<std::size_t>(i)], p);
          ++bits;
        }
      cdouble v = f.values[index_of(pt, p)];
      prod *= (bits % 2 == 1) ? std::conj(v) : v;
    }
    total += prod.real();
    done = true;
    for (auto& i : idx) {
      if (++i < N) {
        done = false;
        break;
      }
      i = 0;
    }
  }
  double denom = std::pow(static_cast<double>(N), kk + 1);
  double power = std::max(total / denom, 0.0);
  return std::pow(power, 1.0 / static_cast<double>(1 << kk));
}

// --- mixed convolution ------------------------------------------------------

FiniteFunction exact_mixed_convolution(const FiniteFunction& f4, const FiniteFunction& f3,
                                       const FiniteFunction& f2, const FiniteFunction& f1,
                                       const ParamSchedule& sched) {
  const FpParams& params = f4.params;
  for (const FiniteFunction* g : {&f4, &f3, &f2, &f1})
    if (!g->bivariate() || is_fp_valued(g->kind) || !(g->params == params))
      throw Error("exact_mixed_convolution wants four complex2 tables over one group");
  auto N = params.group_size();
  check_exact_budget(N * N, sched);
  // factor over the middle variables:
  //   u_x(h)  = E_y f4(x,y) conj(f3(x,y+h))
  //   v_x(h)  = E_y conj(f2(x,y)) f1(x,y+h)
  //   out(w,h) = E_x u_x(h) v_{x+w}(h)
  int p = params.p;
  std::vector<cdouble> u(N * N, 0.0), v(N * N, 0.0);
  for (std::size_t xi = 0; xi < N; ++xi) {
    for (std::size_t hi = 0; hi < N; ++hi) {
      FpVector h = vector_of(hi, p, params.n);
      cdouble au = 0.0, av = 0.0;
      for (std::size_t yi = 0; yi < N; ++yi) {
        FpVector y = vector_of(yi, p, params.n);
        std::size_t yhi = index_of(fp_add(y, h, p), p);
        au += f4.values[xi * N + yi] * std::conj(f3.values[xi * N + yhi]);
        av += std::conj(f2.values[xi * N + yi]) * f1.values[xi * N + yhi];
      }
      u[xi * N + hi] = au / static_cast<double>(N);
      v[xi * N + hi] = av / static_cast<double>(N);
    }
  }
  FiniteFunction out = FiniteFunction::zeros(params, FuncKind::Complex2);
  for (std::size_t wi = 0; wi < N; ++wi) {
    FpVector w = vector_of(wi, p, params.n);
    for (std::size_t hi = 0; hi < N; ++hi) {
      cdouble acc = 0.0;
      for (std::size_t xi = 0; xi < N; ++xi) {
        FpVector x = vector_of(xi, p, params.n);
        std::size_t xwi = index_of(fp_add(x, w, p), p);
        acc += u[xi * N + hi] * v[xwi * N + hi];
      }
      out.values[wi * N + hi] = acc / static_cast<double>(N);
    }
  }
  return out;
}

FiniteFunction exact_mixed_convolution(const FiniteFunction& f, const ParamSchedule& sched) {
  return exact_mixed_convolution(f, f, f, f, sched);
}

double exact_sq_brac(const FiniteFunction& f, const ParamSchedule& sched) {
  FiniteFunction d = exact_mixed_convolution(f, sched);
  double acc = 0.0;
  for (const cdouble& v : d.values) acc += std::norm(v);
  acc /= static_cast<double>(d.values.size());
  return std::pow(acc, 1.0 / 8.0);
}

// --- sampled ----------------------------------------------------------------

Estimate approx_iprod(const QueryOracle& f, const QueryOracle& g, double eps, double delta,
                      RngStream& rng, const ParamSchedule& sched) {
  double c = sched.get("est.chernoff_c");
  long long t = std::min(chernoff_samples(eps, delta, c),
                         static_cast<long long>(sched.get("est.sample_cap")));
  cdouble acc = 0.0;
  for (long long i = 0; i < t; ++i) {
    FpVector x = random_point(f.params(), rng);
    acc += f(x) * std::conj(g(x));
  }
  return Estimate{acc / static_cast<double>(t), capped_error(eps, delta, t, c), 1.0 - delta};
}

Estimate approx_mean(const QueryOracle& f, double eps, double delta, RngStream& rng,
                     const ParamSchedule& sched) {
  return approx_iprod(f, QueryOracle::constant(f.params(), 1.0), eps, delta, rng, sched);
}

cdouble sample_uk_term(const QueryOracle& f, const std::vector<FpVector>& hs, const FpVector& x) {
  int p = f.params().p;
  int k = static_cast<int>(hs.size());
  cdouble prod = 1.0;
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    FpVector pt = x;
    int bits = 0;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) {
        pt = fp_add(pt, hs[static_cast<std::size_t>(i)], p);
        ++bits;
      }
    cdouble v = f(pt);
    prod *= (bits % 2 == 1) ? std::conj(v) : v;
  }
  return prod;
}

int uk_test(const QueryOracle& f, double eps, int k, double delta, RngStream& rng,
            const ParamSchedule& sched) {
  double c = sched.get("est.chernoff_c");
  long long t = std::min(chernoff_samples(eps / 2.0, delta, c),
                         static_cast<long long>(sched.get("est.sample_cap")));
  double acc = 0.0;
  for (long long i = 0; i < t; ++i) {
    FpVector x = random_point(f.params(), rng);
    std::vector<FpVector> hs;
    hs.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) hs.push_back(random_point(f.params(), rng));
    acc += sample_uk_term(f, hs, x).real();
  }
  double alpha = acc / static_cast<double>(t);
  return alpha <= eps ? 1 : 0;
}

cdouble box_estimate(const BiOracle& f, const FpVector& w, const FpVector& h, long long s,
                     RngStream& rng) {
  int p = f.params().p;
  cdouble acc = 0.0;
  for (long long i = 0; i < s; ++i) {
    FpVector x = random_point(f.params(), rng);
    FpVector y = random_point(f.params(), rng);
    FpVector yp = random_point(f.params(), rng);
    FpVector xw = fp_add(x, w, p);
    acc += f(x, y) * std::conj(f(x, fp_add(y, h, p))) * std::conj(f(xw, yp)) *
           f(xw, fp_add(yp, h, p));
  }
  return acc / static_cast<double>(s);
}

std::vector<FpVector> rejection_sample(const FpParams& params,
                                       const std::function<bool(const FpVector&)>& membership,
                                       long long t, double alpha, RngStream& rng,
                                       const ParamSchedule& sched) {
  if (alpha <= 0.0) alpha = sched.get("sampler.alpha_floor");
  auto budget = static_cast<long long>(sched.get("sampler.budget_factor") / alpha *
                                       static_cast<double>(t)) +
                1;
  std::vector<FpVector> out;
  out.reserve(static_cast<std::size_t>(t));
  for (long long i = 0; i < budget && static_cast<long long>(out.size()) < t; ++i) {
    FpVector x = random_point(params, rng);
    if (membership(x)) out.push_back(std::move(x));
  }
  if (static_cast<long long>(out.size()) < t)
    throw DensityTooLow("rejection sampler found " + std::to_string(out.size()) + " of " +
                        std::to_string(t) + " requested members within budget");
  return out;
}

// --- distributions ----------------------------------------------------------

Estimate dist_inner_product(const Distribution& d1, const Distribution& d2, RngStream& rng,
                            const ParamSchedule& sched) {
  long long t = sched.geti("dist.samples");
  long long hits = 0;
  for (long long i = 0; i < t; ++i) {
    FpVector a = d1.draw(rng);
    FpVector b = d2.draw(rng);
    if (a.c == b.c) ++hits;
  }
  double conf = 0.99;
  double err = std::sqrt(std::log(2.0 / (1.0 - conf)) / (2.0 * static_cast<double>(t)));
  return Estimate{cdouble{static_cast<double>(hits) / static_cast<double>(t), 0.0}, err, conf};
}

Distribution box_dist(const FpParams& params, VecBiMap phi, FpVector w, FpVector h) {
  int p = params.p;
  return Distribution{params, [params, phi = std::move(phi), w = std::move(w), h = std::move(h),
                               p](RngStream& rng) -> FpVector {
                        FpVector x = random_point(params, rng);
                        FpVector y = random_point(params, rng);
                        FpVector yp = random_point(params, rng);
                        FpVector xw = fp_add(x, w, p);
                        FpVector s = phi(x, y);
                        s = fp_sub(s, phi(x, fp_add(y, h, p)), p);
                        s = fp_sub(s, phi(xw, yp), p);
                        s = fp_add(s, phi(xw, fp_add(yp, h, p)), p);
                        return s;
                      }};
}

Estimate sq_brac_dist(const FpParams& params, const VecBiMap& phi, const FpVector& w,
                      const FpVector& h, RngStream& rng, const ParamSchedule& sched) {
  Distribution d = box_dist(params, phi, w, h);
  return dist_inner_product(d, d, rng, sched);
}

}  // namespace hofa
