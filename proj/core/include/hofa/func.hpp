#pragma once

// Dense function tables over G = F_p^n (and G x G), query-counted oracles,
// noise wrappers, and the .func file format.

#include <atomic>
#include <complex>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hofa/fp.hpp"
#include "hofa/poly.hpp"
#include "hofa/rng.hpp"

namespace hofa {

using cdouble = std::complex<double>;

enum class FuncKind { Complex, Fp, Complex2, Fp2 };

bool is_bivariate(FuncKind k);
bool is_fp_valued(FuncKind k);
std::string kind_name(FuncKind k);
FuncKind kind_from_name(const std::string& name);

// Dense table in canonical index order. Complex kinds fill `values`, residue
// kinds fill `residues`; the other vector stays empty.
struct FiniteFunction {
  FpParams params;
  FuncKind kind = FuncKind::Complex;
  std::vector<cdouble> values;
  std::vector<int> residues;

  static FiniteFunction zeros(const FpParams& params, FuncKind kind = FuncKind::Complex);

  std::size_t domain_size() const;
  bool bivariate() const { return is_bivariate(kind); }

  cdouble at(const FpVector& x) const;
  cdouble at2(const FpVector& x, const FpVector& y) const;
  int residue_at(const FpVector& x) const;
  int residue_at2(const FpVector& x, const FpVector& y) const;

  double max_modulus() const;
  bool is_bounded(double slack = 1e-12) const { return max_modulus() <= 1.0 + slack; }

  // residue table -> unit-modulus table x -> omega^{f(x)}
  FiniteFunction phase_table() const;
};

std::size_t pair_index(const FpParams& params, const FpVector& x, const FpVector& y);

// --- .func I/O (bit-exact round trip: hexfloat payload) ---------------------

FiniteFunction read_func(std::istream& in);
FiniteFunction read_func_file(const std::string& path);
void write_func(const FiniteFunction& f, std::ostream& out);
void write_func_file(const FiniteFunction& f, const std::string& path);

// --- query-counted oracles --------------------------------------------------

// Copyable; copies share the query counter (derived oracles bill the base).
class QueryOracle {
 public:
  using Fn = std::function<cdouble(const FpVector&)>;

  QueryOracle() = default;
  QueryOracle(const FpParams& params, Fn fn);

  static QueryOracle from_table(std::shared_ptr<const FiniteFunction> table);
  static QueryOracle from_table(const FiniteFunction& table);  // copies the table
  static QueryOracle constant(const FpParams& params, cdouble value);
  static QueryOracle from_phase(const CubicPolynomial& P);

  cdouble operator()(const FpVector& x) const;
  const FpParams& params() const { return params_; }
  std::uint64_t queries() const { return counter_ ? counter_->load() : 0; }
  void reset_queries() const;

 private:
  FpParams params_;
  Fn fn_;
  std::shared_ptr<std::atomic<std::uint64_t>> counter_;
};

// d_h f(x) = f(x+h) conj(f(x)); two base queries per evaluation.
QueryOracle mult_derivative(const QueryOracle& f, const FpVector& h);
// iterated derivative d_{h1} ... d_{hk} f
QueryOracle mult_derivative_iter(const QueryOracle& f, const std::vector<FpVector>& hs);
// f(x) * conj(omega^{P(x)})
QueryOracle twist_by_phase(const QueryOracle& f, const CubicPolynomial& P);
// f(x) * conj(omega^{r.x})
QueryOracle twist_by_character(const QueryOracle& f, const FpVector& r);

// Bivariate oracle over G x G, same counter-sharing semantics.
class BiOracle {
 public:
  using Fn = std::function<cdouble(const FpVector&, const FpVector&)>;

  BiOracle() = default;
  BiOracle(const FpParams& params, Fn fn);

  static BiOracle from_table(std::shared_ptr<const FiniteFunction> table);
  static BiOracle from_table(const FiniteFunction& table);

  cdouble operator()(const FpVector& x, const FpVector& y) const;
  const FpParams& params() const { return params_; }
  std::uint64_t queries() const { return counter_ ? counter_->load() : 0; }

 private:
  FpParams params_;
  Fn fn_;
  std::shared_ptr<std::atomic<std::uint64_t>> counter_;
};

// Memoizing wrapper: repeated queries at one point return the first answer
// (consistency contract for dynamic testers). Single-writer synchronized.
QueryOracle caching_oracle(const QueryOracle& f);

// --- planted instances and noise --------------------------------------------

// f(x) = sum_i c_i omega^{r_i . x}; requires sum |c_i| <= 1 so f is bounded and
// f-hat(r_i) = c_i exactly.
FiniteFunction character_mix(const FpParams& params,
                             const std::vector<std::pair<FpVector, cdouble>>& terms);

// table of omega^{P(x)}
FiniteFunction phase_table(const CubicPolynomial& P);

FiniteFunction random_bounded_function(const FpParams& params, RngStream& rng);
FiniteFunction random_phase_function(const FpParams& params, RngStream& rng);  // unit modulus
FiniteFunction random_residue_function(const FpParams& params, RngStream& rng);

// adds an independent uniform complex perturbation of modulus <= omega per point
FiniteFunction perturb_bounded(const FiniteFunction& f, double omega, RngStream& rng);
// replaces ceil(eta * N) distinct points with arbitrary unit-modulus values
FiniteFunction corrupt_fraction(const FiniteFunction& f, double eta, RngStream& rng);
// replaces floor(rate * N) distinct points with fresh uniform phases omega^r
FiniteFunction corrupt_with_uniform_phases(const FiniteFunction& f, double rate, RngStream& rng);
// residue table: each symbol independently replaced by a uniform residue w.p. rate
FiniteFunction corrupt_symbols(const FiniteFunction& f, double rate, RngStream& rng);

// exact <f, g> = E_x f(x) conj(g(x)) from tables
cdouble exact_inner_product(const FiniteFunction& f, const FiniteFunction& g);
// exact |E_x f(x) conj(omega^{Q(x)})|
double exact_correlation_with_phase(const FiniteFunction& f, const CubicPolynomial& Q);

}  // namespace hofa
