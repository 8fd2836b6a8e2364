#include "hofa/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include <json.hpp>

#include "hofa/errors.hpp"
#include "hofa/estimators.hpp"
#include "hofa/gl.hpp"
#include "hofa/u3.hpp"
#include "hofa/u4.hpp"

namespace hofa {

namespace {

CubicPolynomial strip_constant(const CubicPolynomial& q) {
  CubicPolynomial out = q;
  out.coeffs.erase(Monomial{});
  out.normalize();
  return out;
}

// Order of a phase as a span generator: p classically, the non-classical
// top modulus for p = 2.
int phase_modulus(const CubicPolynomial& q) {
  if (q.kind == PolyKind::NonClassical) return 8;
  return q.params.p;
}

// Value of a basis phase at x in its own modulus (the exponent of the phase).
int phase_value(const CubicPolynomial& q, const FpVector& x) {
  if (q.kind == PolyKind::NonClassical) return q.eval_num8(x);
  return q.eval_classical(x);
}

struct SpanBuild {
  std::vector<CubicPolynomial> phases;          // dedup, zero first
  std::map<std::string, std::size_t> index;     // normalized key -> slot
  std::vector<std::size_t> combo_phase;         // odometer combo -> slot
  std::vector<int> moduli;                      // per basis element
  std::size_t combos = 1;
};

// Enumerate every combination sum_a i_a b_a over the mixed-radix box of the
// basis moduli.  Distinct combinations may collide after normalization (the
// Z/8 modulus of a non-classical generator can fold onto a classical one);
// deduplication keeps the span exact and coefficient extraction accumulates.
SpanBuild build_span(const FpParams& params, const std::vector<CubicPolynomial>& basis) {
  SpanBuild sb;
  for (const CubicPolynomial& b : basis) {
    sb.moduli.push_back(phase_modulus(b));
    sb.combos *= static_cast<std::size_t>(sb.moduli.back());
  }
  std::vector<int> digits(basis.size(), 0);
  for (std::size_t combo = 0; combo < sb.combos; ++combo) {
    CubicPolynomial q = CubicPolynomial::zero(params);
    for (std::size_t a = 0; a < basis.size(); ++a)
      if (digits[a] != 0) q = q.plus(basis[a].scaled(digits[a]));
    q = strip_constant(q);
    std::string key = q.to_json();
    auto it = sb.index.find(key);
    if (it == sb.index.end()) {
      sb.index.emplace(key, sb.phases.size());
      sb.combo_phase.push_back(sb.phases.size());
      sb.phases.push_back(std::move(q));
    } else {
      sb.combo_phase.push_back(it->second);
    }
    for (std::size_t a = 0; a < basis.size(); ++a) {
      if (++digits[a] < sb.moduli[a]) break;
      digits[a] = 0;
    }
  }
  return sb;
}

std::vector<CubicPolynomial> basis_polys(const PhaseList& L) {
  std::vector<CubicPolynomial> out;
  for (std::size_t b : L.basis) out.push_back(L.phases[b]);
  return out;
}

std::size_t phase_cap(const FpParams& params, const ParamSchedule& sched) {
  double eta = sched.get("reg.eta");
  double paper = std::pow(static_cast<double>(params.p), 2.0 / (eta * eta));
  double cap = std::min(paper, sched.get("reg.max_phases"));
  return static_cast<std::size_t>(cap);
}

}  // namespace

PhaseList PhaseList::empty(const FpParams& params) {
  PhaseList L;
  L.params = params;
  L.phases.push_back(CubicPolynomial::zero(params));
  return L;
}

bool PhaseList::contains(const CubicPolynomial& q) const {
  std::string key = strip_constant(q).to_json();
  for (const CubicPolynomial& ph : phases)
    if (ph.to_json() == key) return true;
  return false;
}

bool PhaseList::add_generator(const CubicPolynomial& q, const ParamSchedule& sched) {
  CubicPolynomial g = strip_constant(q);
  if (g.is_zero() || contains(g)) return false;
  std::size_t cap = phase_cap(params, sched);
  if (size() * static_cast<std::size_t>(phase_modulus(g)) > cap)
    throw PhaseCapExceeded("span of " + std::to_string(size()) + " phases times modulus " +
                           std::to_string(phase_modulus(g)) + " exceeds cap " +
                           std::to_string(cap));
  std::vector<CubicPolynomial> bs = basis_polys(*this);
  bs.push_back(g);
  SpanBuild sb = build_span(params, bs);
  phases = std::move(sb.phases);
  basis.clear();
  for (const CubicPolynomial& b : bs) basis.push_back(sb.index.at(b.to_json()));
  return true;
}

SigmaProjection sigma_algebra_project(const QueryOracle& f, const PhaseList& L, double delta,
                                      RngStream& rng, const ParamSchedule& sched) {
  const FpParams params = f.params();
  std::size_t cap = phase_cap(params, sched);
  if (L.size() > cap)
    throw PhaseCapExceeded("phase list of " + std::to_string(L.size()) + " exceeds cap " +
                           std::to_string(cap));
  std::vector<CubicPolynomial> bs = basis_polys(L);
  SpanBuild sb = build_span(params, bs);
  // The span enumeration must agree with the caller's list (slot for slot):
  // both are rebuilt by the same closure from the same basis.
  if (sb.phases.size() != L.size())
    throw Error("sigma_algebra_project: phase list is not span-closed");

  SigmaProjection out;
  std::uint64_t N = params.group_size();
  if (N <= static_cast<std::uint64_t>(sched.geti("exact.max_table"))) {
    // Exact path: level-set averages over the cells of the basis values, then
    // a mixed-radix DFT of the cell averages yields the phase coefficients.
    std::size_t cells = 1;
    for (int m : sb.moduli) cells *= static_cast<std::size_t>(m);
    std::vector<cdouble> cellsum(cells, 0.0);
    std::vector<std::uint64_t> cellcnt(cells, 0);
    std::vector<std::uint32_t> keys(N);
    for (std::uint64_t i = 0; i < N; ++i) {
      FpVector x = vector_of(i, params);
      std::size_t key = 0, stride = 1;
      for (std::size_t a = 0; a < bs.size(); ++a) {
        int v = phase_value(bs[a], x) % sb.moduli[a];
        key += static_cast<std::size_t>(v) * stride;
        stride *= static_cast<std::size_t>(sb.moduli[a]);
      }
      keys[i] = static_cast<std::uint32_t>(key);
      cellsum[key] += f(x);
      ++cellcnt[key];
    }
    std::vector<cdouble> cellavg(cells, 0.0);
    for (std::size_t c = 0; c < cells; ++c)
      if (cellcnt[c] > 0) cellavg[c] = cellsum[c] / static_cast<double>(cellcnt[c]);

    FiniteFunction proj = FiniteFunction::zeros(params, FuncKind::Complex);
    double energy = 0.0;
    for (std::uint64_t i = 0; i < N; ++i) {
      proj.values[i] = cellavg[keys[i]];
      energy += std::norm(proj.values[i]);
    }
    out.energy = energy / static_cast<double>(N);

    out.coeffs.assign(L.size(), 0.0);
    std::vector<std::vector<cdouble>> roots;
    for (int m : sb.moduli) {
      std::vector<cdouble> rt(static_cast<std::size_t>(m));
      for (int j = 0; j < m; ++j)
        rt[static_cast<std::size_t>(j)] =
            std::polar(1.0, -2.0 * std::numbers::pi * j / static_cast<double>(m));
      roots.push_back(std::move(rt));
    }
    for (std::size_t combo = 0; combo < cells; ++combo) {
      cdouble c = 0.0;
      for (std::size_t cell = 0; cell < cells; ++cell) {
        if (cellcnt[cell] == 0) continue;
        cdouble w = 1.0;
        std::size_t ci = combo, ce = cell;
        for (std::size_t a = 0; a < sb.moduli.size(); ++a) {
          std::size_t m = static_cast<std::size_t>(sb.moduli[a]);
          w *= roots[a][(ci % m) * (ce % m) % m];
          ci /= m;
          ce /= m;
        }
        c += cellavg[cell] * w;
      }
      out.coeffs[sb.combo_phase[combo]] += c / static_cast<double>(cells);
    }
    out.structured = QueryOracle::from_table(std::make_shared<FiniteFunction>(std::move(proj)));
    out.exact = true;
    return out;
  }

  // Sampled path: Gram matrix of the span phases on common sample points,
  // modified Gram-Schmidt in span coordinates, then <f, b_k> by approx_iprod
  // against each orthonormal vector scaled to be 1-bounded.
  std::size_t r = L.size();
  long long S = sched.geti("reg.phase_samples");
  RngStream pr = rng.fork("gram-pts");
  std::vector<FpVector> pts;
  pts.reserve(static_cast<std::size_t>(S));
  for (long long s = 0; s < S; ++s) {
    FpVector x(params.n);
    for (int i = 0; i < params.n; ++i) x.set(i, pr.next_residue(params.p));
    pts.push_back(std::move(x));
  }
  std::vector<std::vector<cdouble>> ph(r, std::vector<cdouble>(pts.size()));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t s = 0; s < pts.size(); ++s) ph[j][s] = L.phases[j].phase(pts[s]);
  std::vector<std::vector<cdouble>> gram(r, std::vector<cdouble>(r, 0.0));
  for (std::size_t a = 0; a < r; ++a)
    for (std::size_t b = 0; b <= a; ++b) {
      cdouble acc = 0.0;
      for (std::size_t s = 0; s < pts.size(); ++s) acc += ph[a][s] * std::conj(ph[b][s]);
      acc /= static_cast<double>(pts.size());
      gram[a][b] = acc;
      gram[b][a] = std::conj(acc);
    }

  auto gram_conj = [&](const std::vector<cdouble>& v) {
    std::vector<cdouble> out2(r, 0.0);
    for (std::size_t a = 0; a < r; ++a) {
      cdouble acc = 0.0;
      for (std::size_t b = 0; b < r; ++b) acc += gram[a][b] * std::conj(v[b]);
      out2[a] = acc;
    }
    return out2;
  };
  double tol = sched.get("reg.gram_tol");
  std::vector<std::vector<cdouble>> rows;       // orthonormal vectors, span coords
  std::vector<std::vector<cdouble>> row_gconj;  // gram * conj(row), cached
  for (std::size_t j = 0; j < r; ++j) {
    std::vector<cdouble> v(r, 0.0);
    v[j] = 1.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      cdouble ip = 0.0;
      for (std::size_t a = 0; a < r; ++a) ip += v[a] * row_gconj[k][a];
      for (std::size_t a = 0; a < r; ++a) v[a] -= ip * rows[k][a];
    }
    std::vector<cdouble> gv = gram_conj(v);
    cdouble nrm2 = 0.0;
    for (std::size_t a = 0; a < r; ++a) nrm2 += v[a] * gv[a];
    double n2 = std::max(0.0, nrm2.real());
    if (n2 < tol) continue;  // numerically inside the span of earlier phases
    double inv = 1.0 / std::sqrt(n2);
    for (std::size_t a = 0; a < r; ++a) v[a] *= inv;
    row_gconj.push_back(gram_conj(v));
    rows.push_back(std::move(v));
  }

  double eta = sched.get("reg.eta");
  double prec = std::max(sched.get("reg.beta_floor"), eta * eta / (50.0 * static_cast<double>(r)));
  double dshare = delta / static_cast<double>(rows.size() + 1);
  auto phases_sp = std::make_shared<std::vector<CubicPolynomial>>(L.phases);
  out.coeffs.assign(r, 0.0);
  out.energy = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    double bound = 0.0;
    for (std::size_t a = 0; a < r; ++a) bound += std::abs(rows[k][a]);
    if (bound < 1e-12) continue;
    auto row_sp = std::make_shared<std::vector<cdouble>>(rows[k]);
    QueryOracle bk(params, [phases_sp, row_sp, bound](const FpVector& x) {
      cdouble acc = 0.0;
      for (std::size_t a = 0; a < row_sp->size(); ++a)
        if (std::abs((*row_sp)[a]) > 1e-15) acc += (*row_sp)[a] * (*phases_sp)[a].phase(x);
      return acc / bound;
    });
    RngStream br = rng.fork("beta", k);
    Estimate est = approx_iprod(f, bk, prec / std::max(1.0, bound), dshare, br, sched);
    cdouble beta = est.value * bound;
    out.energy += std::norm(beta);
    for (std::size_t a = 0; a < r; ++a) out.coeffs[a] += beta * std::conj(rows[k][a]);
  }
  auto coeff_sp = std::make_shared<std::vector<cdouble>>(out.coeffs);
  out.structured = QueryOracle(params, [phases_sp, coeff_sp](const FpVector& x) {
    cdouble acc = 0.0;
    for (std::size_t a = 0; a < coeff_sp->size(); ++a)
      if (std::abs((*coeff_sp)[a]) > 1e-15) acc += (*coeff_sp)[a] * (*phases_sp)[a].phase(x);
    return acc;
  });
  out.exact = false;
  return out;
}

namespace {

QueryOracle difference_oracle(const QueryOracle& f, const QueryOracle& s, double scale) {
  return QueryOracle(f.params(), [f, s, scale](const FpVector& x) { return (f(x) - s(x)) * scale; });
}

bool budget_error(const Error& e) {
  return dynamic_cast<const ExactBudgetExceeded*>(&e) != nullptr ||
         dynamic_cast<const PhaseCapExceeded*>(&e) != nullptr ||
         dynamic_cast<const BadCharacteristic*>(&e) != nullptr;
}

}  // namespace

FindPoly find_poly_for(int k, double eps, double delta, const ParamSchedule& sched) {
  if (k < 2 || k > 4) throw Error("find_poly_for supports k in 2..4");
  return [k, eps, delta, sched](const QueryOracle& g,
                                RngStream& rng) -> std::optional<CubicPolynomial> {
    try {
      if (k == 2) {
        // ||g||_{U^2}^2 >= eps forces a Fourier coefficient of size >= eps.
        double tau = std::max(sched.get("u3.verify_floor"), 0.9 * eps * eps);
        RngStream gr = rng.fork("gl");
        SpectrumList lst = goldreich_levin(g, tau, delta, gr, sched);
        const WeightedCharacter* top = nullptr;
        for (const WeightedCharacter& wc : lst) {
          if (index_of(wc.r, g.params().p) == 0) continue;  // constants are not phases
          if (!top || std::abs(wc.weight) > std::abs(top->weight)) top = &wc;
        }
        if (!top) return std::nullopt;
        CubicPolynomial lin = CubicPolynomial::zero(g.params());
        for (int i = 0; i < g.params().n; ++i)
          if (top->r.at(i) != 0) lin.add_term({i}, top->r.at(i));
        return lin;
      }
      if (k == 3) {
        RngStream qr = rng.fork("quad");
        QuadraticResult res = find_quadratic(g, eps, delta, qr, sched);
        if (!res.q) return std::nullopt;
        return *res.q;
      }
      RngStream cr = rng.fork("cubic");
      FindCubicResult res = find_cubic(g, eps, delta, cr, sched);
      return res.poly;
    } catch (const Error& e) {
      if (budget_error(e)) throw;
      return std::nullopt;  // sound structure-absence signal
    }
  };
}

Decomposition weak_regularity(const QueryOracle& f0, double eps, double delta, int k,
                              const FindPoly& find_poly, RngStream& rng,
                              const ParamSchedule& sched) {
  if (k < 2 || k > 4) throw Error("weak_regularity supports k in 2..4");
  const FpParams params = f0.params();
  std::uint64_t N = params.group_size();
  std::uint64_t max_table = static_cast<std::uint64_t>(sched.geti("exact.max_table"));
  bool exact_tab = N <= max_table;
  bool exact_gate = N * N <= max_table;  // exact_uk_norm budgets its O(N^2) recursion

  QueryOracle f = caching_oracle(f0);
  std::shared_ptr<const FiniteFunction> ftab;
  if (exact_tab) {
    FiniteFunction t = FiniteFunction::zeros(params, FuncKind::Complex);
    for (std::uint64_t i = 0; i < N; ++i) t.values[i] = f(vector_of(i, params));
    ftab = std::make_shared<const FiniteFunction>(std::move(t));
    f = QueryOracle::from_table(ftab);  // all further work reads the table
  }

  double eta = sched.get("reg.eta");
  int cap = static_cast<int>(std::ceil(10.0 / (9.0 * eta * eta)));
  int max_iters = std::min(sched.geti("reg.max_iters"), cap);
  double dshare = delta / (3.0 * static_cast<double>(max_iters + 1));
  int retries = sched.geti("reg.poly_retries");

  PhaseList L = PhaseList::empty(params);
  RngStream pr = rng.fork("proj", 0);
  SigmaProjection proj = sigma_algebra_project(f, L, dshare, pr, sched);

  Decomposition out;
  out.energy.push_back(proj.energy);

  auto residual_table = [&]() {
    FiniteFunction g = FiniteFunction::zeros(params, FuncKind::Complex);
    for (std::uint64_t i = 0; i < N; ++i) {
      FpVector x = vector_of(i, params);
      g.values[i] = f(x) - proj.structured(x);
    }
    return g;
  };

  std::string note;
  int added = 0;
  for (int iter = 0; iter <= max_iters; ++iter) {
    // Gate on the current residual.  The source box names f here, but the
    // residual is plainly the intended argument; we test the residual.
    double sup = 1.0;
    if (exact_gate) {
      FiniteFunction gt = residual_table();
      if (exact_uk_norm(gt, k, sched) <= eps) break;
      for (std::uint64_t i = 0; i < N; ++i) sup = std::max(sup, std::abs(gt.values[i]));
    } else {
      QueryOracle g = difference_oracle(f, proj.structured, 1.0);
      RngStream sr = rng.fork("sup", iter);
      long long ssamp = sched.geti("reg.supnorm_samples");
      double smax = 0.0;
      for (long long s = 0; s < ssamp; ++s) {
        FpVector x(params.n);
        for (int i = 0; i < params.n; ++i) x.set(i, sr.next_residue(params.p));
        smax = std::max(smax, std::abs(g(x)));
      }
      sup = std::max(1.0, 1.05 * smax);
      double thresh = std::max(std::pow(eps / sup, 1 << k), sched.get("reg.gate_floor"));
      RngStream ur = rng.fork("gate", iter);
      int verdict = uk_test(difference_oracle(f, proj.structured, 1.0 / sup), thresh, k, dshare,
                            ur, sched);
      if (verdict == 1) break;
    }
    if (iter == max_iters) {
      note = "iteration cap";
      break;
    }

    QueryOracle gn = difference_oracle(f, proj.structured, 1.0 / sup);
    std::optional<CubicPolynomial> q;
    std::exception_ptr last;
    for (int t = 0; t <= retries && !q; ++t) {
      try {
        RngStream fr = rng.fork("find", static_cast<std::uint64_t>(iter) * 131 + t);
        q = find_poly(gn, fr);
        if (q) {
          CubicPolynomial cand = strip_constant(*q);
          if (cand.is_zero() || L.contains(cand)) q.reset();  // no progress, fresh dice
        }
      } catch (const Error&) {
        last = std::current_exception();
      }
    }
    if (!q) {
      if (last) std::rethrow_exception(last);
      throw PipelineStageFailed("weak-regularity",
                                "no new phase found while the residual gate fails");
    }
    try {
      L.add_generator(*q, sched);
    } catch (const PhaseCapExceeded&) {
      note = "phase cap";
      break;
    }
    ++added;
    RngStream ir = rng.fork("proj", static_cast<std::uint64_t>(added));
    proj = sigma_algebra_project(f, L, dshare, ir, sched);
    out.energy.push_back(proj.energy);
  }

  out.phases = L;
  out.coeffs = proj.coeffs;
  out.residual = difference_oracle(f, proj.structured, 1.0);
  out.iterations = added;
  out.note = note;
  if (exact_gate) {
    FiniteFunction gt = residual_table();
    out.residual_uk = exact_uk_norm(gt, k, sched);
  } else {
    // Sampled estimate of ||g||_{U^k}^{2^k}, reported on the norm scale.
    RngStream er = rng.fork("resid");
    long long t = 2000;
    double acc = 0.0;
    for (long long s = 0; s < t; ++s) {
      std::vector<FpVector> hs;
      for (int i = 0; i < k; ++i) {
        FpVector h(params.n);
        for (int j = 0; j < params.n; ++j) h.set(j, er.next_residue(params.p));
        hs.push_back(std::move(h));
      }
      FpVector x(params.n);
      for (int j = 0; j < params.n; ++j) x.set(j, er.next_residue(params.p));
      acc += sample_uk_term(out.residual, hs, x).real();
    }
    out.residual_uk = std::pow(std::max(0.0, acc / static_cast<double>(t)),
                               1.0 / static_cast<double>(1 << k));
  }
  return out;
}

std::string Decomposition::report_json() const {
  nlohmann::json j;
  nlohmann::json ph = nlohmann::json::array();
  nlohmann::json cf = nlohmann::json::array();
  for (std::size_t i = 0; i < phases.phases.size(); ++i) {
    if (i < coeffs.size() && std::abs(coeffs[i]) <= 1e-9) continue;
    ph.push_back(nlohmann::json::parse(phases.phases[i].to_json()));
    nlohmann::json c;
    c["re"] = coeffs[i].real();
    c["im"] = coeffs[i].imag();
    cf.push_back(c);
  }
  j["phases"] = ph;
  j["coeffs"] = cf;
  j["residual_uk"] = residual_uk;
  j["iterations"] = iterations;
  j["span"] = phases.phases.size();
  j["energy"] = energy;
  if (!note.empty()) j["note"] = note;
  return j.dump(2);
}

}  // namespace hofa
