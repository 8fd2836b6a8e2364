#include "hofa/gl.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>

namespace hofa {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

cdouble unit(int p, int e) {
  double t = kTwoPi * (((e % p) + p) % p) / p;
  return {std::cos(t), std::sin(t)};
}

}  // namespace

Estimate bucket_norm_estimate(const QueryOracle& f, const Bucket& B, double eps, double delta,
                              RngStream& rng, const ParamSchedule& sched) {
  const FpParams& params = f.params();
  int p = params.p, n = params.n;
  if (B.a < 0 || B.a > n || B.prefix.size() != B.a) throw Error("malformed bucket");
  double c = sched.get("est.chernoff_c");
  long long t = std::min(chernoff_samples(eps, delta, c),
                         static_cast<long long>(sched.get("gl.sample_cap")));
  // unbiased form of E_x |E_{y in U_a} f(x-y) w^{y.v_b}|^2 with U_a the span
  // of the first a coordinates: one (x, y, y') triple per sample
  double acc = 0.0;
  for (long long i = 0; i < t; ++i) {
    FpVector x(n), y(n), yp(n);
    for (int j = 0; j < n; ++j) x.set(j, rng.next_residue(p));
    int phase = 0;
    for (int j = 0; j < B.a; ++j) {
      int yj = rng.next_residue(p);
      int ypj = rng.next_residue(p);
      y.set(j, yj);
      yp.set(j, ypj);
      phase += (yj - ypj) * B.prefix.at(j);
    }
    cdouble v = f(fp_sub(x, y, p)) * std::conj(f(fp_sub(x, yp, p))) * unit(p, phase);
    acc += v.real();
  }
  double need = static_cast<double>(chernoff_samples(eps, delta, c));
  double err = static_cast<double>(t) >= need
                   ? eps
                   : eps * std::sqrt(need / static_cast<double>(t));
  return Estimate{cdouble{acc / static_cast<double>(t), 0.0}, err, 1.0 - delta};
}

SpectrumList goldreich_levin(const QueryOracle& f, double tau, double delta, RngStream& rng,
                             const ParamSchedule& sched) {
  return noisy_goldreich_levin(f, tau, 0.0, 0.0, delta, rng, sched);
}

SpectrumList noisy_goldreich_levin(const QueryOracle& f, double tau, double eta, double omega,
                                   double delta, RngStream& rng, const ParamSchedule& sched) {
  const FpParams& params = f.params();
  int p = params.p, n = params.n;
  double theta = tau - eta - (1.0 - eta) * omega;
  if (theta <= 0.0) throw Error("goldreich_levin: tau does not clear the noise level");
  // Parseval keeps at most theta^-2 buckets above the discard threshold
  auto cap = static_cast<std::size_t>(std::ceil(1.0 / (theta * theta))) + 1;
  cap = std::min(cap, static_cast<std::size_t>(sched.geti("gl.max_alive")));

  // Tiny groups: tabulate and transform. One base query per point, and the
  // 0.75*theta acceptance sits strictly inside the sampled path's envelope.
  if (static_cast<double>(params.group_size()) <= sched.get("gl.exact_below")) {
    FiniteFunction tab = FiniteFunction::zeros(params);
    for (std::uint64_t i = 0; i < params.group_size(); ++i)
      tab.values[i] = f(vector_of(i, params));
    FiniteFunction hat = exact_dft(tab, sched);
    SpectrumList out;
    for (std::uint64_t i = 0; i < params.group_size(); ++i) {
      double w = std::abs(hat.values[i]);
      if (w >= 0.75 * theta) out.push_back({vector_of(i, params), w});
    }
    if (out.size() > cap) {
      std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cap), out.end(),
                        [](const WeightedCharacter& a, const WeightedCharacter& b) {
                          return a.weight > b.weight;
                        });
      out.resize(cap);
    }
    std::sort(out.begin(), out.end(), [p](const WeightedCharacter& a, const WeightedCharacter& b) {
      return index_of(a.r, p) < index_of(b.r, p);
    });
    return out;
  }
  double delta_split =
      delta / (static_cast<double>(n) * static_cast<double>(p) * static_cast<double>(cap) +
               static_cast<double>(cap) + 1.0);

  struct Alive {
    Bucket bucket;
    double est;
  };
  std::vector<Alive> alive{{Bucket{0, FpVector(0)}, 1.0}};
  double discard = 0.75 * theta * theta;
  for (int level = 0; level < n; ++level) {
    std::vector<Alive> next;
    for (const Alive& cur : alive) {
      for (int d = 0; d < p; ++d) {
        Bucket child;
        child.a = level + 1;
        child.prefix = FpVector(child.a);
        for (int j = 0; j < level; ++j) child.prefix.set(j, cur.bucket.prefix.at(j));
        child.prefix.set(level, d);
        RngStream sub = rng.fork("gl-bucket", index_of(child.prefix, p) * (n + 1) +
                                                  static_cast<std::size_t>(child.a));
        Estimate e =
            bucket_norm_estimate(f, child, theta * theta / 4.0, delta_split, sub, sched);
        if (e.value.real() >= discard) next.push_back({std::move(child), e.value.real()});
      }
    }
    if (next.size() > cap) {
      std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(cap), next.end(),
                        [](const Alive& a, const Alive& b) { return a.est > b.est; });
      next.resize(cap);
    }
    alive = std::move(next);
    if (alive.empty()) break;
  }

  SpectrumList out;
  for (const Alive& leaf : alive) {
    assert(leaf.bucket.a == n);
    const FpVector& r = leaf.bucket.prefix;
    RngStream sub = rng.fork("gl-leaf", index_of(r, p));
    QueryOracle chi(params, [r, p](const FpVector& x) { return unit(p, fp_dot(r, x, p)); });
    Estimate c = approx_iprod(f, chi, theta / 4.0, delta_split, sub, sched);
    double w = std::abs(c.value);
    if (w >= 0.75 * theta) out.push_back({r, w});
  }
  std::sort(out.begin(), out.end(), [p](const WeightedCharacter& a, const WeightedCharacter& b) {
    return index_of(a.r, p) < index_of(b.r, p);
  });
  for (std::size_t i = 1; i < out.size(); ++i)
    assert(!(out[i - 1].r.c == out[i].r.c) && "duplicate leaf characters cannot happen");
  return out;
}

}  // namespace hofa
