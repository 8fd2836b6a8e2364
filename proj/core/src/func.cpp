#include "hofa/func.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace hofa {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

cdouble root_of_unity(int p, long long e) {
  double t = kTwoPi * static_cast<double>(((e % p) + p) % p) / p;
  return {std::cos(t), std::sin(t)};
}
}  // namespace

bool is_bivariate(FuncKind k) { return k == FuncKind::Complex2 || k == FuncKind::Fp2; }
bool is_fp_valued(FuncKind k) { return k == FuncKind::Fp || k == FuncKind::Fp2; }

std::string kind_name(FuncKind k) {
  switch (k) {
    case FuncKind::Complex: return "complex";
    case FuncKind::Fp: return "fp";
    case FuncKind::Complex2: return "complex2";
    case FuncKind::Fp2: return "fp2";
  }
  throw Error("bad FuncKind");
}

FuncKind kind_from_name(const std::string& name) {
  if (name == "complex") return FuncKind::Complex;
  if (name == "fp") return FuncKind::Fp;
  if (name == "complex2") return FuncKind::Complex2;
  if (name == "fp2") return FuncKind::Fp2;
  throw Error(".func header: unknown kind '" + name + "' (expected complex|fp|complex2|fp2)");
}

FiniteFunction FiniteFunction::zeros(const FpParams& params, FuncKind kind) {
  FiniteFunction f;
  f.params = params;
  f.kind = kind;
  std::size_t sz = f.domain_size();
  if (is_fp_valued(kind))
    f.residues.assign(sz, 0);
  else
    f.values.assign(sz, cdouble{0.0, 0.0});
  return f;
}

std::size_t FiniteFunction::domain_size() const {
  std::size_t g = params.group_size();
  return bivariate() ? g * g : g;
}

std::size_t pair_index(const FpParams& params, const FpVector& x, const FpVector& y) {
  return index_of(x, params.p) * params.group_size() + index_of(y, params.p);
}

cdouble FiniteFunction::at(const FpVector& x) const {
  if (bivariate()) throw Error("univariate access to bivariate table");
  std::size_t i = index_of(x, params.p);
  if (is_fp_valued(kind)) return root_of_unity(params.p, residues[i]);
  return values[i];
}

cdouble FiniteFunction::at2(const FpVector& x, const FpVector& y) const {
  if (!bivariate()) throw Error("bivariate access to univariate table");
  std::size_t i = pair_index(params, x, y);
  if (is_fp_valued(kind)) return root_of_unity(params.p, residues[i]);
  return values[i];
}

int FiniteFunction::residue_at(const FpVector& x) const {
  if (!is_fp_valued(kind) || bivariate()) throw Error("residue_at on non-fp table");
  return residues[index_of(x, params.p)];
}

int FiniteFunction::residue_at2(const FpVector& x, const FpVector& y) const {
  if (!is_fp_valued(kind) || !bivariate()) throw Error("residue_at2 wants an fp2 table");
  return residues[pair_index(params, x, y)];
}

double FiniteFunction::max_modulus() const {
  if (is_fp_valued(kind)) return residues.empty() ? 0.0 : 1.0;
  double m = 0.0;
  for (const cdouble& v : values) m = std::max(m, std::abs(v));
  return m;
}

FiniteFunction FiniteFunction::phase_table() const {
  if (!is_fp_valued(kind)) throw Error("phase_table needs a residue-valued function");
  FiniteFunction out;
  out.params = params;
  out.kind = bivariate() ? FuncKind::Complex2 : FuncKind::Complex;
  out.values.resize(residues.size());
  for (std::size_t i = 0; i < residues.size(); ++i)
    out.values[i] = root_of_unity(params.p, residues[i]);
  return out;
}

// --- .func I/O --------------------------------------------------------------

FiniteFunction read_func(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error(".func: empty input, expected header 'p n kind'");
  std::istringstream hs(header);
  int p = 0, n = -1;
  std::string kind_str;
  if (!(hs >> p >> n >> kind_str))
    throw Error(".func header: could not parse 'p n kind' from '" + header + "'");
  std::string extra;
  if (hs >> extra) throw Error(".func header: trailing token '" + extra + "'");
  FiniteFunction f;
  f.params = FpParams{p, n};
  f.params.validate();
  f.kind = kind_from_name(kind_str);
  std::size_t sz = f.domain_size();
  std::string line;
  for (std::size_t i = 0; i < sz; ++i) {
    if (!std::getline(in, line))
      throw Error(".func: expected " + std::to_string(sz) + " value lines, got " +
                  std::to_string(i));
    std::istringstream ls(line);
    if (is_fp_valued(f.kind)) {
      int r;
      if (!(ls >> r) || r < 0 || r >= p)
        throw Error(".func line " + std::to_string(i + 2) + ": bad residue '" + line + "'");
      f.residues.push_back(r);
    } else {
      // strtod, not stream extraction: the writer emits hexfloat and C++
      // streams refuse to parse it back
      std::string tre, tim;
      if (!(ls >> tre >> tim))
        throw Error(".func line " + std::to_string(i + 2) + ": expected 're im', got '" + line +
                    "'");
      char* end = nullptr;
      double re = std::strtod(tre.c_str(), &end);
      bool ok = end && *end == '\0';
      double im = std::strtod(tim.c_str(), &end);
      ok = ok && end && *end == '\0';
      if (!ok)
        throw Error(".func line " + std::to_string(i + 2) + ": bad complex value '" + line + "'");
      f.values.emplace_back(re, im);
    }
  }
  return f;
}

FiniteFunction read_func_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_func(in);
}

void write_func(const FiniteFunction& f, std::ostream& out) {
  out << f.params.p << ' ' << f.params.n << ' ' << kind_name(f.kind) << '\n';
  if (is_fp_valued(f.kind)) {
    for (int r : f.residues) out << r << '\n';
  } else {
    // hexfloat guarantees a bit-exact round trip
    for (const cdouble& v : f.values) {
      out << std::hexfloat << v.real() << ' ' << v.imag() << '\n';
    }
    out << std::defaultfloat;
  }
}

void write_func_file(const FiniteFunction& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_func(f, out);
}

// --- oracles ----------------------------------------------------------------

QueryOracle::QueryOracle(const FpParams& params, Fn fn)
    : params_(params),
      fn_(std::move(fn)),
      counter_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

QueryOracle QueryOracle::from_table(std::shared_ptr<const FiniteFunction> table) {
  if (table->bivariate()) throw Error("QueryOracle::from_table wants a univariate table");
  FpParams params = table->params;
  return QueryOracle(params, [table](const FpVector& x) { return table->at(x); });
}

QueryOracle QueryOracle::from_table(const FiniteFunction& table) {
  return from_table(std::make_shared<const FiniteFunction>(table));
}

QueryOracle QueryOracle::constant(const FpParams& params, cdouble value) {
  return QueryOracle(params, [value](const FpVector&) { return value; });
}

QueryOracle QueryOracle::from_phase(const CubicPolynomial& P) {
  return QueryOracle(P.params, [P](const FpVector& x) { return P.phase(x); });
}

cdouble QueryOracle::operator()(const FpVector& x) const {
  counter_->fetch_add(1, std::memory_order_relaxed);
  return fn_(x);
}

void QueryOracle::reset_queries() const {
  if (counter_) counter_->store(0);
}

QueryOracle mult_derivative(const QueryOracle& f, const FpVector& h) {
  int p = f.params().p;
  QueryOracle base = f;
  QueryOracle d(f.params(), [base, h, p](const FpVector& x) {
    return base(fp_add(x, h, p)) * std::conj(base(x));
  });
  return d;
}

QueryOracle mult_derivative_iter(const QueryOracle& f, const std::vector<FpVector>& hs) {
  QueryOracle cur = f;
  for (const FpVector& h : hs) cur = mult_derivative(cur, h);
  return cur;
}

QueryOracle twist_by_phase(const QueryOracle& f, const CubicPolynomial& P) {
  QueryOracle base = f;
  return QueryOracle(f.params(),
                     [base, P](const FpVector& x) { return base(x) * std::conj(P.phase(x)); });
}

QueryOracle twist_by_character(const QueryOracle& f, const FpVector& r) {
  int p = f.params().p;
  QueryOracle base = f;
  return QueryOracle(f.params(), [base, r, p](const FpVector& x) {
    return base(x) * std::conj(root_of_unity(p, fp_dot(r, x, p)));
  });
}

BiOracle::BiOracle(const FpParams& params, Fn fn)
    : params_(params),
      fn_(std::move(fn)),
      counter_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

BiOracle BiOracle::from_table(std::shared_ptr<const FiniteFunction> table) {
  if (!table->bivariate()) throw Error("BiOracle::from_table wants a bivariate table");
  FpParams params = table->params;
  return BiOracle(params,
                  [table](const FpVector& x, const FpVector& y) { return table->at2(x, y); });
}

BiOracle BiOracle::from_table(const FiniteFunction& table) {
  return from_table(std::make_shared<const FiniteFunction>(table));
}

cdouble BiOracle::operator()(const FpVector& x, const FpVector& y) const {
  counter_->fetch_add(1, std::memory_order_relaxed);
  return fn_(x, y);
}

QueryOracle caching_oracle(const QueryOracle& f) {
  struct Cache {
    std::mutex mu;
    std::unordered_map<std::size_t, cdouble> seen;
  };
  auto cache = std::make_shared<Cache>();
  QueryOracle base = f;
  int p = f.params().p;
  return QueryOracle(f.params(), [base, cache, p](const FpVector& x) {
    std::size_t i = index_of(x, p);
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->seen.find(i);
      if (it != cache->seen.end()) return it->second;
    }
    cdouble v = base(x);
    std::lock_guard<std::mutex> lock(cache->mu);
    return cache->seen.emplace(i, v).first->second;
  });
}

// --- planted instances and noise --------------------------------------------

FiniteFunction character_mix(const FpParams& params,
                             const std::vector<std::pair<FpVector, cdouble>>& terms) {
  double total = 0.0;
  for (const auto& [r, c] : terms) total += std::abs(c);
  if (total > 1.0 + 1e-12) throw Error("character_mix: sum of |coefficients| exceeds 1");
  FiniteFunction f = FiniteFunction::zeros(params);
  std::size_t sz = params.group_size();
  for (std::size_t i = 0; i < sz; ++i) {
    FpVector x = vector_of(i, params.p, params.n);
    cdouble v = 0.0;
    for (const auto& [r, c] : terms) v += c * root_of_unity(params.p, fp_dot(r, x, params.p));
    f.values[i] = v;
  }
  return f;
}

FiniteFunction phase_table(const CubicPolynomial& P) {
  FiniteFunction f = FiniteFunction::zeros(P.params);
  std::size_t sz = P.params.group_size();
  for (std::size_t i = 0; i < sz; ++i)
    f.values[i] = P.phase(vector_of(i, P.params.p, P.params.n));
  return f;
}

FiniteFunction random_bounded_function(const FpParams& params, RngStream& rng) {
  FiniteFunction f = FiniteFunction::zeros(params);
  for (auto& v : f.values) {
    double r = std::sqrt(rng.next_real());  // uniform on the unit disc
    double t = kTwoPi * rng.next_real();
    v = {r * std::cos(t), r * std::sin(t)};
  }
  return f;
}

FiniteFunction random_phase_function(const FpParams& params, RngStream& rng) {
  FiniteFunction f = FiniteFunction::zeros(params);
  for (auto& v : f.values) {
    double t = kTwoPi * rng.next_real();
    v = {std::cos(t), std::sin(t)};
  }
  return f;
}

FiniteFunction random_residue_function(const FpParams& params, RngStream& rng) {
  FiniteFunction f = FiniteFunction::zeros(params, FuncKind::Fp);
  for (auto& r : f.residues) r = rng.next_residue(params.p);
  return f;
}

FiniteFunction perturb_bounded(const FiniteFunction& f, double omega, RngStream& rng) {
  FiniteFunction g = f;
  for (auto& v : g.values) {
    double r = omega * std::sqrt(rng.next_real());
    double t = kTwoPi * rng.next_real();
    v += cdouble{r * std::cos(t), r * std::sin(t)};
  }
  return g;
}

namespace {
std::vector<std::size_t> distinct_points(std::size_t count, std::size_t universe, RngStream& rng) {
  std::vector<std::size_t> all(universe);
  for (std::size_t i = 0; i < universe; ++i) all[i] = i;
  for (std::size_t i = 0; i < count && i + 1 < universe; ++i) {
    std::size_t j = i + rng.next_below(universe - i);
    std::swap(all[i], all[j]);
  }
  all.resize(std::min(count, universe));
  return all;
}
}  // namespace

FiniteFunction corrupt_fraction(const FiniteFunction& f, double eta, RngStream& rng) {
  FiniteFunction g = f;
  auto count = static_cast<std::size_t>(std::ceil(eta * static_cast<double>(g.values.size())));
  for (std::size_t i : distinct_points(count, g.values.size(), rng)) {
    double t = kTwoPi * rng.next_real();
    g.values[i] = {std::cos(t), std::sin(t)};
  }
  return g;
}

FiniteFunction corrupt_with_uniform_phases(const FiniteFunction& f, double rate, RngStream& rng) {
  FiniteFunction g = f;
  auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(g.values.size())));
  for (std::size_t i : distinct_points(count, g.values.size(), rng))
    g.values[i] = root_of_unity(g.params.p, rng.next_residue(g.params.p));
  return g;
}

FiniteFunction corrupt_symbols(const FiniteFunction& f, double rate, RngStream& rng) {
  if (!is_fp_valued(f.kind)) throw Error("corrupt_symbols wants a residue-valued table");
  FiniteFunction g = f;
  for (auto& r : g.residues)
    if (rng.next_bernoulli(rate)) r = rng.next_residue(g.params.p);
  return g;
}

cdouble exact_inner_product(const FiniteFunction& f, const FiniteFunction& g) {
  if (f.domain_size() != g.domain_size()) throw Error("inner product: size mismatch");
  cdouble acc = 0.0;
  std::size_t sz = f.domain_size();
  bool ffp = is_fp_valued(f.kind), gfp = is_fp_valued(g.kind);
  for (std::size_t i = 0; i < sz; ++i) {
    cdouble a = ffp ? root_of_unity(f.params.p, f.residues[i]) : f.values[i];
    cdouble b = gfp ? root_of_unity(g.params.p, g.residues[i]) : g.values[i];
    acc += a * std::conj(b);
  }
  return acc / static_cast<double>(sz);
}

double exact_correlation_with_phase(const FiniteFunction& f, const CubicPolynomial& Q) {
  if (f.bivariate()) throw Error("correlation wants a univariate table");
  cdouble acc = 0.0;
  std::size_t sz = f.domain_size();
  bool ffp = is_fp_valued(f.kind);
  for (std::size_t i = 0; i < sz; ++i) {
    FpVector x = vector_of(i, f.params.p, f.params.n);
    cdouble a = ffp ? root_of_unity(f.params.p, f.residues[i]) : f.values[i];
    acc += a * std::conj(Q.phase(x));
  }
  return std::abs(acc) / static_cast<double>(sz);
}

}  // namespace hofa
