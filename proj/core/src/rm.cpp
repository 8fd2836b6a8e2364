#include "hofa/rm.hpp"

#include <algorithm>
#include <bit>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "hofa/errors.hpp"

namespace hofa {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require_word(const FiniteFunction& w) {
  if (w.bivariate() || w.kind != FuncKind::Fp)
    throw Error("reed-muller wants a univariate F_p table");
}

void require_classical(const CubicPolynomial& Q) {
  if (Q.kind != PolyKind::Classical) throw Error("hamming_dist wants a classical polynomial");
}

// Errors that signal misconfiguration rather than absence of structure.
bool budget_error(const Error& e) {
  return dynamic_cast<const ExactBudgetExceeded*>(&e) != nullptr ||
         dynamic_cast<const BadCharacteristic*>(&e) != nullptr;
}

// Histogram of word - Q over the table: the best constant completion and the
// distance it achieves.
struct Repair {
  int constant = 0;
  double dist = 1.0;
};

Repair constant_repair(const FiniteFunction& word, const CubicPolynomial& Q) {
  int p = word.params.p;
  std::uint64_t N = word.domain_size();
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(p), 0);
  for (std::uint64_t i = 0; i < N; ++i) {
    FpVector x = vector_of(i, word.params);
    int d = word.residues[i] - Q.eval_classical(x);
    ++counts[static_cast<std::size_t>(((d % p) + p) % p)];
  }
  Repair r;
  std::uint64_t best = 0;
  for (int c = 0; c < p; ++c)
    if (counts[static_cast<std::size_t>(c)] > best) {
      best = counts[static_cast<std::size_t>(c)];
      r.constant = c;
    }
  r.dist = 1.0 - static_cast<double>(best) / static_cast<double>(N);
  return r;
}

CubicPolynomial strip_constant(const CubicPolynomial& q) {
  CubicPolynomial out = q;
  out.coeffs.erase(Monomial{});
  out.normalize();
  return out;
}

}  // namespace

CodewordFunction CodewordFunction::from_polynomial(const CubicPolynomial& P) {
  require_classical(P);
  CodewordFunction f;
  f.word = FiniteFunction::zeros(P.params, FuncKind::Fp);
  std::uint64_t N = P.params.group_size();
  for (std::uint64_t i = 0; i < N; ++i)
    f.word.residues[i] = P.eval_classical(vector_of(i, P.params));
  f.generator = P;
  return f;
}

CodewordFunction CodewordFunction::plant_noisy(const CubicPolynomial& P, double rate,
                                               RngStream& rng) {
  CodewordFunction f = from_polynomial(P);
  int p = P.params.p;
  for (std::uint64_t i = 0; i < f.word.domain_size(); ++i)
    if (rng.next_real() < rate) f.word.residues[i] = rng.next_residue(p);
  return f;
}

QueryOracle CodewordFunction::phase_oracle(int t) const {
  require_word(word);
  int p = word.params.p;
  FiniteFunction ph = FiniteFunction::zeros(word.params, FuncKind::Complex);
  for (std::uint64_t i = 0; i < word.domain_size(); ++i) {
    int v = ((t * word.residues[i]) % p + p) % p;
    ph.values[i] = std::polar(1.0, 2.0 * std::numbers::pi * v / static_cast<double>(p));
  }
  return QueryOracle::from_table(std::make_shared<const FiniteFunction>(std::move(ph)));
}

double hamming_dist(const CodewordFunction& f, const CubicPolynomial& Q) {
  require_word(f.word);
  require_classical(Q);
  std::uint64_t N = f.word.domain_size();
  std::uint64_t bad = 0;
  for (std::uint64_t i = 0; i < N; ++i) {
    FpVector x = vector_of(i, f.word.params);
    int p = f.word.params.p;
    if (((Q.eval_classical(x) % p) + p) % p != f.word.residues[i]) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(N);
}

Estimate hamming_dist_estimate(const CodewordFunction& f, const CubicPolynomial& Q, double eps,
                               double delta, RngStream& rng, const ParamSchedule& sched) {
  require_word(f.word);
  require_classical(Q);
  long long t = std::min(chernoff_samples(eps, delta, sched.get("est.chernoff_c")),
                         static_cast<long long>(sched.geti("est.sample_cap")));
  int p = f.word.params.p, n = f.word.params.n;
  long long bad = 0;
  for (long long s = 0; s < t; ++s) {
    FpVector x(n);
    for (int i = 0; i < n; ++i) x.set(i, rng.next_residue(p));
    if (((Q.eval_classical(x) % p) + p) % p != f.word.residue_at(x)) ++bad;
  }
  Estimate e;
  e.value = static_cast<double>(bad) / static_cast<double>(t);
  e.additive_error = eps;
  e.confidence = 1.0 - delta;
  return e;
}

double pigeonhole_correlation(const FiniteFunction& word, const CubicPolynomial& P) {
  require_word(word);
  require_classical(P);
  int p = word.params.p;
  std::uint64_t N = word.domain_size();
  std::vector<double> freq(static_cast<std::size_t>(p), 0.0);
  for (std::uint64_t i = 0; i < N; ++i) {
    FpVector x = vector_of(i, word.params);
    int d = ((word.residues[i] - P.eval_classical(x)) % p + p) % p;
    freq[static_cast<std::size_t>(d)] += 1.0 / static_cast<double>(N);
  }
  double best = 0.0;
  for (int t = 1; t < p; ++t) {
    cdouble acc = 0.0;
    for (int j = 0; j < p; ++j)
      acc += freq[static_cast<std::size_t>(j)] *
             std::polar(1.0, 2.0 * std::numbers::pi * ((t * j) % p) / static_cast<double>(p));
    best = std::max(best, std::abs(acc));
  }
  return best;
}

ConvexityChain convexity_chain(const FiniteFunction& word, const CubicPolynomial& P,
                               const ParamSchedule& sched) {
  require_word(word);
  require_classical(P);
  if (word.params.p != 2) throw BadCharacteristic("convexity_chain is the p = 2 chain");
  std::uint64_t N = word.domain_size();
  FiniteFunction g = FiniteFunction::zeros(word.params, FuncKind::Complex);
  double mean = 0.0;
  for (std::uint64_t i = 0; i < N; ++i) {
    FpVector x = vector_of(i, word.params);
    int e = ((word.residues[i] - P.eval_classical(x)) % 2 + 2) % 2;
    g.values[i] = e == 0 ? 1.0 : -1.0;
    mean += g.values[i].real();
  }
  mean /= static_cast<double>(N);
  FiniteFunction gh = exact_dft(g, sched);
  double sum4 = 0.0;
  for (const cdouble& c : gh.values) sum4 += std::norm(c) * std::norm(c);
  ConvexityChain ch;
  ch.eps = mean / 2.0;  // agreement = 1/2 + eps
  ch.first_order = 0.5 + 0.5 * mean * mean;
  ch.second_order = 0.5 + 0.5 * sum4;
  return ch;
}

namespace {

// mask -> (mask without its lowest bit, lowest-bit position)
struct MaskChain {
  std::array<int, 16> parent{}, lsb{};
  MaskChain() {
    for (int m = 1; m < 16; ++m) {
      parent[static_cast<std::size_t>(m)] = m & (m - 1);
      lsb[static_cast<std::size_t>(m)] = std::countr_zero(static_cast<unsigned>(m));
    }
  }
};

// Index-space addition without carries, tabulated when quadratic space is
// affordable.  p = 2 needs no table: indices add by xor.
struct IndexAdder {
  const FpParams* params = nullptr;
  std::uint32_t N = 0;
  bool xorable = false;
  std::vector<std::uint16_t> table;

  explicit IndexAdder(const FpParams& pr) : params(&pr) {
    N = static_cast<std::uint32_t>(pr.group_size());
    xorable = pr.p == 2;
    if (!xorable && N <= 1024) {
      table.resize(static_cast<std::size_t>(N) * N);
      for (std::uint32_t a = 0; a < N; ++a)
        for (std::uint32_t b = 0; b < N; ++b)
          table[static_cast<std::size_t>(a) * N + b] = static_cast<std::uint16_t>(
              index_of(fp_add(vector_of(a, pr), vector_of(b, pr), pr.p), pr.p));
    }
  }
  std::uint32_t operator()(std::uint32_t a, std::uint32_t b) const {
    if (xorable) return a ^ b;
    if (!table.empty()) return table[static_cast<std::size_t>(a) * N + b];
    return static_cast<std::uint32_t>(
        index_of(fp_add(vector_of(a, *params), vector_of(b, *params), params->p), params->p));
  }
};

// Counter-based uniform draw below N: cheap, deterministic, and free of
// shared state so the per-point loops can run on any thread.
inline std::uint32_t draw_below(std::uint64_t& ctr, std::uint64_t key, std::uint32_t N) {
  std::uint64_t r = splitmix64(key ^ ++ctr);
  return static_cast<std::uint32_t>((static_cast<unsigned __int128>(r) * N) >> 64);
}

}  // namespace

FiniteFunction majority_smooth(const FiniteFunction& word, long long votes, RngStream& rng,
                               int threads) {
  require_word(word);
  FiniteFunction out = word;
  if (votes <= 0) return out;
  const int p = word.params.p;
  const std::uint32_t N = static_cast<std::uint32_t>(word.domain_size());
  const IndexAdder add(word.params);
  const MaskChain mc;
  const int* w = word.residues.data();
  int* res = out.residues.data();

  auto smooth_point = [&](std::uint32_t x, std::vector<std::uint64_t>& stamp,
                          std::uint64_t* tally) {
    for (int c = 0; c < p; ++c) tally[c] = 0;
    const std::uint64_t key = rng.fork("pt", x).seed();
    std::uint64_t ctr = 0;
    std::array<std::uint32_t, 16> idx{};
    idx[0] = x;
    long long cast = 0;
    for (long long v = 0; v < votes * 2 && cast < votes; ++v) {
      std::uint64_t r1 = splitmix64(key ^ ++ctr), r2 = splitmix64(key ^ ++ctr);
      const std::uint32_t h[4] = {
          static_cast<std::uint32_t>(((r1 & 0xffffffffu) * N) >> 32),
          static_cast<std::uint32_t>(((r1 >> 32) * N) >> 32),
          static_cast<std::uint32_t>(((r2 & 0xffffffffu) * N) >> 32),
          static_cast<std::uint32_t>(((r2 >> 32) * N) >> 32)};
      // Unique nonzero stamp per (point, vote) on this thread: vote counts
      // stay far below 2^40.
      const std::uint64_t tick =
          (static_cast<std::uint64_t>(x) << 40) + static_cast<std::uint64_t>(v) + 1;
      stamp[x] = tick;
      int acc = 0;
      bool distinct = true;
      for (int m = 1; m < 16; ++m) {
        std::uint32_t id = add(idx[static_cast<std::size_t>(mc.parent[static_cast<std::size_t>(m)])],
                               h[mc.lsb[static_cast<std::size_t>(m)]]);
        idx[static_cast<std::size_t>(m)] = id;
        // A repeated vertex means some 0/1 combination of the directions
        // vanishes; the alternating sum then telescopes onto raw symbols and
        // the vote would echo the noise.  Only non-degenerate flats vote.
        if (stamp[id] == tick) {
          distinct = false;
          break;
        }
        stamp[id] = tick;
        // P(x) = -sum (-1)^{|eps|} P(vertex): odd |eps| adds, even subtracts
        int val = w[id];
        acc += (std::popcount(static_cast<unsigned>(m)) & 1) ? val : p - val;
      }
      if (!distinct) continue;
      ++cast;
      ++tally[acc % p];
    }
    int winner = 0;
    for (int c = 1; c < p; ++c)
      if (tally[c] > tally[winner]) winner = c;
    res[x] = winner;
  };

  int T = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (T < 1) T = 1;
  T = std::min<int>(T, static_cast<int>(N));
  if (T == 1) {
    std::vector<std::uint64_t> stamp(N, 0);
    std::vector<std::uint64_t> tally(static_cast<std::size_t>(p));
    for (std::uint32_t x = 0; x < N; ++x) smooth_point(x, stamp, tally.data());
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    pool.emplace_back([&, t] {
      std::vector<std::uint64_t> stamp(N, 0);
      std::vector<std::uint64_t> tally(static_cast<std::size_t>(p));
      for (std::uint32_t x = static_cast<std::uint32_t>(t); x < N;
           x += static_cast<std::uint32_t>(T))
        smooth_point(x, stamp, tally.data());
    });
  }
  for (std::thread& th : pool) th.join();
  return out;
}

double flat_consistency(const FiniteFunction& word, long long samples, RngStream& rng) {
  require_word(word);
  const int p = word.params.p;
  const std::uint32_t N = static_cast<std::uint32_t>(word.domain_size());
  const IndexAdder add(word.params);
  const MaskChain mc;
  const int* w = word.residues.data();
  std::vector<std::uint64_t> stamp(N, 0);
  std::uint64_t tick = 0;
  const std::uint64_t key = rng.fork("flat").seed();
  std::uint64_t ctr = 0;
  std::array<std::uint32_t, 16> idx{};
  long long seen = 0, pass = 0;
  for (long long s = 0; s < samples * 2 && seen < samples; ++s) {
    idx[0] = draw_below(ctr, key, N);
    std::uint32_t h[4];
    for (int i = 0; i < 4; ++i) h[i] = draw_below(ctr, key, N);
    ++tick;
    stamp[idx[0]] = tick;
    int acc = w[idx[0]];  // eps = 0 enters with sign +1 in the full sum
    bool distinct = true;
    for (int m = 1; m < 16; ++m) {
      std::uint32_t id = add(idx[static_cast<std::size_t>(mc.parent[static_cast<std::size_t>(m)])],
                             h[mc.lsb[static_cast<std::size_t>(m)]]);
      idx[static_cast<std::size_t>(m)] = id;
      if (stamp[id] == tick) {
        distinct = false;
        break;
      }
      stamp[id] = tick;
      int val = w[id];
      acc += (std::popcount(static_cast<unsigned>(m)) & 1) ? p - val : val;
    }
    if (!distinct) continue;
    ++seen;
    if (acc % p == 0) ++pass;
  }
  if (seen == 0) return 0.0;
  return static_cast<double>(pass) / static_cast<double>(seen);
}

std::optional<CubicPolynomial> classical_form(const CubicPolynomial& q) {
  if (q.kind == PolyKind::Classical) return q;
  CubicPolynomial out = CubicPolynomial::zero(q.params, PolyKind::Classical);
  for (const auto& [m, c] : q.coeffs) {
    int half = CubicPolynomial::nc_modulus(m) / 2;
    if (c % half != 0) return std::nullopt;
    int cc = (c / half) % 2;
    if (cc != 0) out.add_term(m, 1);
  }
  out.normalize();
  return out;
}

CorrectionReport self_correct(const CodewordFunction& f, double eps, double delta, RngStream& rng,
                              const ParamSchedule& sched) {
  require_word(f.word);
  if (eps <= 0.0 || eps >= 1.0) throw Error("self_correct wants eps in (0,1)");
  const FpParams params = f.word.params;
  int p = params.p;
  double bar = 1.0 - 1.0 / p - sched.get("rm.eta");
  double find_eps = sched.get("rm.u4_eps");

  CorrectionReport rep;
  double t0 = now_ms();
  // Escalating majority vote: the per-vote plurality margin is rho^15 with
  // rho the agreement correlation, so the votes needed are unknowable up
  // front; multiply by 8 until the smoothed word scores as near-cubic on
  // sampled 4-flats, then hand find_cubic a mostly clean oracle.
  long long votes = std::max<long long>(1, sched.geti("rm.smooth_votes"));
  const long long cap = std::max(votes, (long long)sched.geti("rm.smooth_cap"));
  const long long flat_samples = sched.geti("rm.flat_samples");
  const double accept = sched.get("rm.flat_accept");
  const int threads = static_cast<int>(sched.geti("cli.threads"));
  FiniteFunction sm = f.word;
  long long spent = 0;
  double score = 0.0;
  for (int round = 0;; ++round) {
    RngStream sr = rng.fork("smooth", static_cast<std::uint64_t>(round));
    sm = majority_smooth(f.word, votes, sr, threads);
    spent += votes;
    RngStream cr = rng.fork("flat", static_cast<std::uint64_t>(round));
    double pass = flat_consistency(sm, flat_samples, cr);
    score = (pass - 1.0 / p) / (1.0 - 1.0 / p);
    if (score >= accept || votes >= cap) break;
    votes = std::min(cap, votes * 8);
  }
  std::uint64_t changed = 0;
  for (std::uint64_t i = 0; i < sm.domain_size(); ++i)
    if (sm.residues[i] != f.word.residues[i]) ++changed;
  {
    StageRecord s;
    s.name = "smooth";
    s.millis = now_ms() - t0;
    s.queries = spent * 15 * static_cast<long long>(sm.domain_size());
    s.note = "changed " + std::to_string(changed) + "/" + std::to_string(sm.domain_size()) +
             ", flat score " + std::to_string(score) + ", votes " + std::to_string(votes);
    rep.stages.push_back(s);
  }
  CodewordFunction smoothed;
  smoothed.word = sm;

  if (p >= 3) {
    std::vector<int> order;
    for (int t = 1; t < p; ++t) order.push_back(t);
    RngStream tr = rng.fork("torder");
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(tr.next_below(i))]);
    for (int t : order) {
      ++rep.attempts;
      double t1 = now_ms();
      QueryOracle oracle = smoothed.phase_oracle(t);
      StageRecord s;
      s.name = "u4 t=" + std::to_string(t);
      try {
        RngStream fr = rng.fork("t", static_cast<std::uint64_t>(t));
        FindCubicResult res = find_cubic(oracle, find_eps, delta / (p - 1), fr, sched);
        CubicPolynomial cand = strip_constant(res.poly.scaled(fp_inv(t, p)));
        Repair r = constant_repair(f.word, cand);
        s.millis = now_ms() - t1;
        s.queries = oracle.queries();
        s.note = "corr " + std::to_string(res.correlation) + " dist " + std::to_string(r.dist);
        rep.stages.push_back(s);
        if (r.dist <= bar) {
          cand.add_term({}, r.constant);
          rep.q = cand;
          rep.dist = r.dist;
          rep.t_used = t;
          return rep;
        }
      } catch (const Error& e) {
        if (budget_error(e)) throw;
        s.millis = now_ms() - t1;
        s.queries = oracle.queries();
        s.note = e.what();
        rep.stages.push_back(s);
      }
    }
    throw CorrectionFailed("no twist verified below 1 - 1/p - eta");
  }

  // p = 2: run the engine on (-1)^f and insist on a classical certificate.
  int tries = sched.geti("rm.p2_tries");
  QueryOracle oracle = smoothed.phase_oracle(1);
  for (int a = 0; a < tries; ++a) {
    ++rep.attempts;
    double t1 = now_ms();
    StageRecord s;
    s.name = "u4 try=" + std::to_string(a);
    try {
      RngStream fr = rng.fork("try", static_cast<std::uint64_t>(a));
      FindCubicResult res = find_cubic(oracle, find_eps, delta / tries, fr, sched);
      std::optional<CubicPolynomial> cl = classical_form(strip_constant(res.poly));
      if (!cl) {
        s.millis = now_ms() - t1;
        s.queries = oracle.queries();
        s.note = "non-classical output rejected";
        rep.stages.push_back(s);
        continue;
      }
      Repair r = constant_repair(f.word, *cl);
      s.millis = now_ms() - t1;
      s.queries = oracle.queries();
      s.note = "corr " + std::to_string(res.correlation) + " dist " + std::to_string(r.dist);
      rep.stages.push_back(s);
      if (r.dist <= bar) {
        CubicPolynomial q = *cl;
        q.add_term({}, r.constant);
        rep.q = q;
        rep.dist = r.dist;
        rep.t_used = 0;
        return rep;
      }
    } catch (const Error& e) {
      if (budget_error(e)) throw;
      s.millis = now_ms() - t1;
      s.queries = oracle.queries();
      s.note = e.what();
      rep.stages.push_back(s);
    }
  }
  throw CorrectionFailed("no retry produced a verified classical cubic");
}

std::string CorrectionReport::report_json() const {
  nlohmann::json j;
  j["polynomial"] = nlohmann::json::parse(q.to_json());
  j["dist"] = dist;
  j["t"] = t_used;
  j["attempts"] = attempts;
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

}  // namespace hofa
