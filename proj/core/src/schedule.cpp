#include "hofa/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hofa/errors.hpp"

namespace hofa {

const std::map<std::string, ScheduleEntry>& ParamSchedule::registry() {
  static const std::map<std::string, ScheduleEntry> reg = {
      {"est.chernoff_c", {8.0, "multiplier c in the sample count ceil(c * eps^-2 * ln(4/delta))"}},
      {"est.sample_cap", {200000.0, "hard cap on samples per single estimate; error widens if hit"}},
      {"exact.max_table", {4194304.0, "largest dense table (p^n or p^{2n}) exact mode will touch"}},
      {"sampler.budget_factor", {64.0, "rejection sampler draws factor/alpha * t points before giving up"}},
      {"sampler.alpha_floor", {1e-4, "assumed density lower bound when the caller supplies none"}},
      {"dist.samples", {2000.0, "sample pairs for inner products of distributions"}},
      {"gl.max_alive", {128.0, "cap on simultaneously alive buckets per Goldreich-Levin level"}},
      {"gl.sample_cap", {20000.0, "per-estimate sample cap inside the GL bucket tree"}},
      {"gl.exact_below", {1024.0, "tabulate-and-transform instead of bucket descent when p^n <= this"}},
      {"bsg.edge_samples", {256.0, "samples per edge test"}},
      {"bsg.m_samples", {64.0, "vertex-degree probe count in the BSG test"}},
      {"bsg.r_samples", {40.0, "retained-neighbour sample count in the BSG test"}},
      {"bsg.pair_samples", {40.0, "per-neighbour pair samples for the B_i / C_i indicators"}},
      {"bsg.success_floor", {0.05, "required success fraction over random vertices u"}},
      {"bsg.doubling_cap", {32.0, "acceptance cap on |A'+A'| / |A'| for the accepted set"}},
      {"bsg.size_floor_frac", {0.02, "acceptance floor on |A'| as a fraction of |A|"}},
      {"affine.restarts", {10.0, "independent restarts of the affine-map fitter"}},
      {"affine.ransac_rounds", {80.0, "difference-pair sampling rounds per restart"}},
      {"affine.mode_samples", {120.0, "samples when scoring a candidate linear part by mode"}},
      {"affine.verify_samples", {600.0, "fresh samples for final agreement verification"}},
      {"u3.h_samples", {48.0, "number of derivative directions h tried by find_quadratic"}},
      {"u3.tau_floor", {0.1, "floor on the GL threshold used on derivative functions"}},
      {"u3.verify_floor", {0.05, "floor on the verified correlation accepted by find_quadratic"}},
      {"u4.tau_floor", {0.1, "floor on the GL threshold inside the U4 pipeline"}},
      {"u4.eta", {0.25, "verified-correlation target of find_cubic at desk scale"}},
      {"u4.eta_dep", {0.01, "eta of the dependent random selection (paper sets 1e-10)"}},
      {"u4.k_dep", {8.0, "number of (s_i, M_i) pairs drawn by dependent random selection"}},
      {"u4.t_rank_cap", {24.0, "budget cap on the bilinear rank parameter t"}},
      {"u4.cert_samples", {400.0, "samples per certifier pass"}},
      {"u4.arrangement_samples", {200.0, "sampled 4-arrangements per respect test"}},
      {"u4.testA_scale", {1.0, "multiplier on the Test A count threshold (its constant is a choice)"}},
      {"u4.bohr_tries", {20.0, "candidate (v,w,z) triples drawn before NoBohrSetPassed"}},
      {"u4.psi_budget_factor", {64.0, "rejection budget factor/alpha * ln(1/delta) for psi queries"}},
      {"u4.cell_eps", {0.1, "epsilon_cell of extend_biaffine's cell tests"}},
      {"u4.cell_samples", {32.0, "draws per additive-triple / good-column / good-cell test"}},
      {"u4.box_samples", {16.0, "parallelogram samples per mixed-convolution estimate"}},
      {"u4.bogou_samples", {32.0, "row samples per bogo-u coefficient estimate"}},
      {"u4.bogo_rows", {24.0, "derivative rows surveyed per Bogolyubov iteration"}},
      {"u4.bogo_iters", {12.0, "iteration cap of the Bogolyubov covering loop"}},
      {"u4.bogo_gamma", {0.25, "row-spectrum threshold gamma of the covering loop"}},
      {"u4.bogo_xi", {0.15, "uncovered-row fraction below which the covering loop stops"}},
      {"u4.max_maps", {12.0, "cap on the affine-map list returned by the covering loop"}},
      {"u4.codim_cap", {48.0, "cap on the bi-affine codimension assembled by bohr_aff_map"}},
      {"u4.zeta_floor", {0.002, "floor on the spectrum threshold zeta of bohr_aff_map"}},
      {"u4.rho", {0.1, "estimator slack rho_1 = rho_2 of the Bohr-set tests B and C"}},
      {"u4.enum_cap", {20000.0, "largest exhaustive enumeration (p^k translates, cell triples)"}},
      {"u4.collision_samples", {48.0, "probes per map pair when hunting kernel collisions"}},
      {"reg.eta", {0.25, "correlation eta fed back by the inverse theorem inside regularity"}},
      {"reg.max_phases", {512.0, "desk cap on the phase list (paper cap is p^{2/eta^2})"}},
      {"reg.max_iters", {64.0, "iteration cap of the energy-increment loop"}},
      {"reg.poly_retries", {2.0, "find_poly retries per iteration before the failure propagates"}},
      {"reg.phase_samples", {4096.0, "common sample points behind the sampled Gram matrix"}},
      {"reg.gram_tol", {1e-6, "residual-norm^2 pivot tolerance of the sampled Gram-Schmidt"}},
      {"reg.beta_floor", {0.002, "additive-precision floor of sampled projection coefficients"}},
      {"reg.supnorm_samples", {128.0, "points sampled to normalize the residual before find_poly"}},
      {"reg.gate_floor", {1e-3, "floor on the sampled uk_test threshold of the residual gate"}},
      {"rm.eta", {0.05, "eta_sched in the output guarantee dist <= 1 - 1/p - eta_sched"}},
      {"rm.p2_tries", {20.0, "retry budget of the p=2 correction pipeline"}},
      {"rm.smooth_votes", {4096.0, "starting parallelepiped votes per point of the pre-corrector"}},
      {"rm.smooth_cap", {8e7, "per-point vote ceiling of the escalating pre-corrector"}},
      {"rm.flat_accept", {0.35, "4-flat consistency score that stops vote escalation"}},
      {"rm.flat_samples", {8000.0, "4-flats sampled per consistency check"}},
      {"rm.u4_eps", {0.5, "eps handed to find_cubic once the oracle is majority-smoothed"}},
      {"cli.threads", {0.0, "worker threads; 0 means hardware concurrency"}},
  };
  return reg;
}

ParamSchedule ParamSchedule::defaults() {
  ParamSchedule s;
  for (const auto& [k, e] : registry()) s.values_[k] = e.value;
  return s;
}

double ParamSchedule::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error("unknown schedule key '" + key + "'");
  return it->second;
}

int ParamSchedule::geti(const std::string& key) const {
  return static_cast<int>(std::llround(get(key)));
}

void ParamSchedule::set(const std::string& key, double value) {
  if (!registry().count(key)) throw Error("unknown schedule key '" + key + "'");
  values_[key] = value;
}

void ParamSchedule::load_line(const std::string& raw) {
  std::string line = raw.substr(0, raw.find('#'));
  auto notspace = [](unsigned char c) { return !std::isspace(c); };
  line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
  line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
  if (line.empty()) return;
  auto eq = line.find('=');
  if (eq == std::string::npos) throw Error("config line without '=': '" + raw + "'");
  std::string key = line.substr(0, eq);
  key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
  std::string val = line.substr(eq + 1);
  val.erase(val.begin(), std::find_if(val.begin(), val.end(), notspace));
  try {
    set(key, std::stod(val));
  } catch (const std::invalid_argument&) {
    throw Error("config value for '" + key + "' is not a number: '" + val + "'");
  }
}

void ParamSchedule::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::string line;
  while (std::getline(in, line)) load_line(line);
}

std::string ParamSchedule::dump() const {
  std::ostringstream os;
  for (const auto& [k, e] : registry()) {
    os << "# " << e.doc << '\n';
    double v = values_.count(k) ? values_.at(k) : e.value;
    os << k << " = " << v << '\n';
  }
  return os.str();
}

long long chernoff_samples(double eps, double delta, double c) {
  if (eps <= 0.0 || delta <= 0.0 || delta >= 1.0) throw Error("chernoff_samples: bad (eps, delta)");
  double t = c / (eps * eps) * std::log(4.0 / delta);
  return std::max(1ll, static_cast<long long>(std::ceil(t)));
}

}  // namespace hofa
