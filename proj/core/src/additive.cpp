#include "hofa/additive.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hofa {

SetOracle SetOracle::from_set(const FpParams& params, const std::vector<FpVector>& elems) {
  if (elems.empty()) throw Error("SetOracle::from_set: empty set");
  auto list = std::make_shared<std::vector<FpVector>>(elems);
  auto idx = std::make_shared<std::unordered_set<std::uint64_t>>();
  for (const FpVector& x : elems) idx->insert(index_of(x, params.p));
  SetOracle A;
  A.params = params;
  A.member = [idx, p = params.p](const FpVector& x) { return idx->count(index_of(x, p)) > 0; };
  A.sample = [list](RngStream& rng) { return (*list)[rng.next_below(list->size())]; };
  A.density = static_cast<double>(idx->size()) / static_cast<double>(params.group_size());
  return A;
}

EnergyReport exact_additive_energy(const std::vector<FpVector>& A, const FpParams& params,
                                   const ParamSchedule& sched) {
  EnergyReport rep;
  rep.set_size = A.size();
  if (A.empty()) return rep;
  auto N = params.group_size();
  if (static_cast<double>(N) <= sched.get("exact.max_table")) {
    // rep(s) = #pairs summing to s via the convolution theorem
    FiniteFunction c = FiniteFunction::zeros(params);
    for (const FpVector& x : A) c.values[index_of(x, params.p)] += 1.0;
    FiniteFunction ch = exact_dft(c, sched);
    for (auto& v : ch.values) v *= v;
    FiniteFunction conv = exact_idft(ch, sched);
    for (const cdouble& v : conv.values) {
      // rep(s) = N * idft(c-hat^2)(s) is the number of pairs summing to s
      long long r = std::llround(v.real() * static_cast<double>(N));
      if (r > 0) rep.quadruples += static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(r);
    }
  } else if (A.size() <= (1u << 12)) {
    std::unordered_map<std::uint64_t, std::uint64_t> counts;
    for (const FpVector& x : A)
      for (const FpVector& y : A) counts[index_of(fp_add(x, y, params.p), params.p)] += 1;
    for (const auto& [s, r] : counts) rep.quadruples += r * r;
  } else {
    throw ExactBudgetExceeded("additive energy: table and pair-loop budgets both exceeded");
  }
  double m = static_cast<double>(A.size());
  rep.energy = static_cast<double>(rep.quadruples) / (m * m * m);
  return rep;
}

std::size_t exact_sumset_size(const std::vector<FpVector>& A, int p) {
  std::unordered_set<std::uint64_t> sums;
  for (const FpVector& x : A)
    for (const FpVector& y : A) sums.insert(index_of(fp_add(x, y, p), p));
  return sums.size();
}

int edge_test(const SetOracle& A, const FpVector& a, const FpVector& b, double rho,
              double /*gamma*/, double /*delta*/, RngStream& rng, const ParamSchedule& sched) {
  long long t = sched.geti("bsg.edge_samples");
  FpVector s = fp_add(a, b, A.params.p);
  long long hits = 0;
  for (long long i = 0; i < t; ++i)
    if (A.member(fp_sub(s, A.sample(rng), A.params.p))) ++hits;
  return static_cast<double>(hits) >= (rho / 2.0) * static_cast<double>(t) ? 1 : 0;
}

BsgTester::BsgTester(SetOracle A, FpVector u, double rho, double delta,
                     const ParamSchedule& sched, RngStream stream)
    : A_(std::move(A)), u_(std::move(u)), rho_(rho), delta_(delta),
      t_edge_(sched.geti("bsg.edge_samples")), stream_(stream) {
  // frozen draw: the gamma interval and every sample list are fixed here, so
  // all answers for this u come from one parameter realization
  double width = rho_ * rho_ * rho_ / 1600.0;
  auto intervals = static_cast<std::uint64_t>(std::ceil(rho_ / width));
  RngStream gs = stream_.fork("gamma");
  gamma_ = -rho_ / 2.0 + (static_cast<double>(gs.next_below(intervals)) + 0.5) * width;

  int m = sched.geti("bsg.m_samples");
  int r = sched.geti("bsg.r_samples");
  int pair = sched.geti("bsg.pair_samples");
  RngStream ds = stream_.fork("draw");
  for (int i = 0; i < m; ++i) e_.push_back(A_.sample(ds));
  for (int i = 0; i < r; ++i) a_.push_back(A_.sample(ds));
  for (int i = 0; i < r; ++i)
    if (edge_cached(u_, a_[static_cast<std::size_t>(i)]) == 1) retained_.push_back(i);

  double eta2 = rho_ / 4.0;
  for (int i : retained_) {
    const FpVector& ai = a_[static_cast<std::size_t>(i)];
    int xsum = 0;
    std::vector<FpVector> ci;
    std::vector<int> yi;
    for (int j = 0; j < pair; ++j) {
      xsum += edge_cached(ai, A_.sample(ds));
      FpVector cj = A_.sample(ds);
      yi.push_back(edge_cached(ai, cj));
      ci.push_back(std::move(cj));
    }
    B_.push_back(static_cast<double>(xsum) >= (eta2 / 2.0) * pair ? 1 : 0);
    c_.push_back(std::move(ci));
    Y_.push_back(std::move(yi));
  }
}

int BsgTester::edge_cached(const FpVector& a, const FpVector& b) {
  std::uint64_t key = index_of(fp_add(a, b, A_.params.p), A_.params.p);
  auto it = edge_cache_.find(key);
  if (it != edge_cache_.end()) return it->second;
  // per-sum forked stream keeps the frozen-draw semantics under memoization
  RngStream es = stream_.fork("edge", key);
  FpVector s = vector_of(key, A_.params);
  long long hits = 0;
  for (long long i = 0; i < t_edge_; ++i)
    if (A_.member(fp_sub(s, A_.sample(es), A_.params.p))) ++hits;
  int ans = static_cast<double>(hits) >= (rho_ / 2.0) * static_cast<double>(t_edge_) ? 1 : 0;
  edge_cache_.emplace(key, ans);
  return ans;
}

int BsgTester::test(const FpVector& v) {
  if (edge_cached(u_, v) == 0) return 0;
  double T = 0.0;
  for (const FpVector& e : e_) T += edge_cached(v, e);
  T /= static_cast<double>(e_.size());
  double eta1 = rho_ / 4.0;
  if (T <= eta1) return 0;
  if (retained_.empty()) return 0;  // degenerate vertex: cannot certify
  double eta3 = rho_ * rho_ * rho_ / 160.0;
  double eta4 = rho_ / 10.0;
  double bc = 0.0;
  for (std::size_t i = 0; i < retained_.size(); ++i) {
    if (B_[i] == 0) continue;  // B_i C_i = 0 regardless of C_i
    double yz = 0.0;
    for (std::size_t j = 0; j < Y_[i].size(); ++j)
      if (Y_[i][j] == 1 && edge_cached(v, c_[i][j]) == 1) yz += 1.0;
    yz /= static_cast<double>(Y_[i].size());
    if (yz <= eta3) bc += 1.0;  // C_i = 1
  }
  bc /= static_cast<double>(retained_.size());
  return bc <= eta4 / 5.0 ? 1 : 0;
}

int bsg_test(const SetOracle& A, const FpVector& u, const FpVector& v, double rho, double delta,
             RngStream& rng, const ParamSchedule& sched) {
  BsgTester tester(A, u, rho, delta, sched, rng.fork("bsg-test", index_of(u, A.params.p)));
  return tester.test(v);
}

double affine_agreement_floor(double rho, const FpParams& params) {
  double qpoly = std::pow(rho, std::log2(1.0 / rho)) / 1024.0;
  double tiny = 4.0 / static_cast<double>(params.group_size());
  return std::max(qpoly, tiny);
}

AffineMap find_affine_map(const SetOracle& A, const VecOracle& phi, double rho, double delta,
                          RngStream& rng, const ParamSchedule& sched) {
  const FpParams& params = A.params;
  int p = params.p, n = params.n;
  FpParams params2{p, 2 * n};
  int restarts = sched.geti("affine.restarts");
  int rounds = sched.geti("affine.ransac_rounds");
  int verify_samples = sched.geti("affine.verify_samples");
  double floor = affine_agreement_floor(rho, params);

  auto embed = [n, p](const FpVector& x, const FpVector& y) {
    FpVector z(2 * n);
    for (int i = 0; i < n; ++i) {
      z.set(i, x.at(i));
      z.set(n + i, y.at(i));
    }
    return z;
  };

  // When A is at least half the group the BSG core step is a no-op (the
  // graph already has macroscopic energy) and only burns phi queries.
  bool dense = A.density >= 0.5;

  for (int restart = 0; restart < restarts; ++restart) {
    RngStream rs = rng.fork("affine-restart", static_cast<std::uint64_t>(restart));
    std::size_t pool_target = static_cast<std::size_t>(std::max(4 * n, 48));
    std::vector<FpVector> pool;
    RngStream ps = rs.fork("pool");
    if (dense) {
      for (std::size_t i = 0; i < pool_target; ++i) pool.push_back(A.sample(ps));
    } else {
      FpVector u = A.sample(rs);
      // BSG on the graph of phi isolates the small-doubling core where the
      // quadruple hypothesis forces near-affine structure
      SetOracle Z;
      Z.params = params2;
      Z.member = [&A, &phi, n](const FpVector& z) {
        FpVector x(n), y(n);
        for (int i = 0; i < n; ++i) {
          x.set(i, z.at(i));
          y.set(i, z.at(n + i));
        }
        if (!A.member(x)) return false;
        return phi(x) == y;
      };
      Z.sample = [&A, &phi, embed](RngStream& r2) {
        FpVector a = A.sample(r2);
        return embed(a, phi(a));
      };
      Z.density = A.density / static_cast<double>(params.group_size());
      BsgTester tester(Z, embed(u, phi(u)), rho, delta, sched, rs.fork("tester"));
      for (std::size_t tries = 0; tries < 64 * pool_target && pool.size() < pool_target;
           ++tries) {
        FpVector a = A.sample(ps);
        if (tester.test(embed(a, phi(a))) == 1) pool.push_back(std::move(a));
      }
    }
    if (static_cast<int>(pool.size()) < n + 2) continue;

    RngStream cs = rs.fork("ransac");
    std::optional<AffineMap> cand;
    double cand_agree = -1.0;
    for (int round = 0; round < rounds; ++round) {
      FpMatrix D(n, n), E(n, n);
      bool degenerate = false;
      for (int k = 0; k < n; ++k) {
        const FpVector& x = pool[cs.next_below(pool.size())];
        const FpVector& y = pool[cs.next_below(pool.size())];
        if (x == y) {
          degenerate = true;
          break;
        }
        FpVector d = fp_sub(x, y, p);
        FpVector e = fp_sub(phi(x), phi(y), p);
        for (int i = 0; i < n; ++i) {
          D.set(i, k, d.at(i));
          E.set(i, k, e.at(i));
        }
      }
      if (degenerate) continue;
      std::optional<FpMatrix> Dinv = fp_mat_inverse(D, p);
      if (!Dinv) continue;
      FpMatrix L = fp_mat_mul(E, *Dinv, p);
      // offset by majority of phi(x) - Lx over the core pool
      std::map<FpVector, int> votes;
      for (const FpVector& x : pool) votes[fp_sub(phi(x), fp_mat_apply(L, x, p), p)] += 1;
      auto best = std::max_element(votes.begin(), votes.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; });
      AffineMap T{L, best->first};
      RngStream vs = rs.fork("verify", static_cast<std::uint64_t>(round));
      long long agree = 0;
      for (int i = 0; i < verify_samples; ++i) {
        FpVector x = A.sample(vs);
        if (phi(x) == T.apply(x, p)) ++agree;
      }
      // The bar has to clear both the structural floor and the chance level
      // t/p^n, else RANSAC's wrong candidates win by luck at small n.  Among
      // clearing candidates keep the argmax: a map that is off by a rank-one
      // correction still agrees on a subspace of directions and would
      // otherwise win by coming first.
      double t = static_cast<double>(verify_samples);
      double chance = t / static_cast<double>(params.group_size());
      double bar = std::max({floor * t, std::min(8.0 * chance, 0.3 * t), 3.0});
      if (static_cast<double>(agree) >= bar && static_cast<double>(agree) > cand_agree) {
        cand = T;
        cand_agree = static_cast<double>(agree);
        if (cand_agree >= 0.9 * t) return *cand;
      }
    }
    if (cand) return *cand;
  }
  throw NoAffineFound("no affine map cleared the agreement floor after all restarts");
}

}  // namespace hofa
