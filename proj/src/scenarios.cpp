#include "weaktime/scenarios.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Core>

#include "json.hpp"
#include "weaktime/error.hpp"
#include "weaktime/parallel.hpp"

namespace weaktime {

const char* library_version() { return "weaktime 0.4.0"; }

// ---------------------------------------------------------------- config

namespace {

const std::set<std::string> kKeys = {
    "name",          "system",         "grid.n",         "grid.x_min",    "grid.dx",
    "potential.kind", "potential.v0",  "potential.lo",   "potential.hi",  "potential.width",
    "packet.kind",   "packet.x0",      "packet.sigma",   "packet.k0",     "packet.level",
    "window.t_i",    "window.t_f",     "time.dt",        "time.method",   "region.lo",
    "region.hi",     "postselection",  "pipelines",      "moments.max_l", "meter.pointer_width",
    "meter.couplings", "toy.coupling", "toy.ratios",     "threads"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw ValidationError(key + ": not a number: '" + v + "'");
  return x;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!kKeys.count(key)) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (c.values_.count(key)) throw ValidationError("config: duplicate key '" + key + "'");
    c.values_[key] = value;
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("config: missing key '" + key + "'");
  return it->second;
}

double Config::number(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, require(key)) : fallback;
}

int Config::integer(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const double x = parse_double(key, require(key));
  if (x != std::floor(x) || std::abs(x) > 1e9) throw ValidationError(key + ": expected an integer");
  return static_cast<int>(x);
}

std::vector<double> Config::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split(get(key, ""), ',')) out.push_back(parse_double(key, item));
  return out;
}

std::string Config::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::string Config::hash() const {
  const std::string text = canonical();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

// -------------------------------------------------------------- scenario

Grid Scenario::grid() const { return Grid(grid_n, x_min, x_max()); }

std::vector<double> Scenario::potential_values() const {
  const Grid g = grid();
  std::vector<double> v(grid_n, 0.0);
  auto fill = [&](double lo, double hi) {
    for (int j = 0; j < grid_n; ++j)
      if (lo <= g.x(j) && g.x(j) < hi) v[j] = v0;
  };
  switch (potential) {
    case PotentialKind::free:
      break;
    case PotentialKind::barrier:
    case PotentialKind::well:
      fill(b_lo, b_hi);
      break;
    case PotentialKind::double_barrier:
      fill(b_lo, b_lo + b_width);
      fill(b_hi - b_width, b_hi);
      break;
  }
  return v;
}

Region Scenario::region() const { return omega ? *omega : Region::whole(grid()); }

Setup Scenario::setup() const {
  if (system == SystemKind::spin) {
    Hamiltonian h;
    h.space = {FactorSpace::spin2()};
    h.kinetic = false;
    return {Propagator{PropagationMethod::dense_exponential, dt, h}, window, 0};
  }
  return {Propagator{method, dt, system_hamiltonian(grid(), potential_values())}, window, 0};
}

QuantumState Scenario::initial_state() const {
  if (system == SystemKind::spin) return spin_state(1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)).at_time(window.t_i);
  if (!stationary) return gaussian_packet(grid(), x0, sigma, k0).at_time(window.t_i);
  const Setup s = setup();
  const Eigensystem es = eigendecompose(assemble(s.propagator.hamiltonian, window.t_i));
  if (level < 0 || level >= static_cast<int>(es.vectors.size()))
    throw ValidationError("packet.level out of range");
  QuantumState v = es.vectors[level];
  // fix the global phase: largest component real and positive
  Eigen::Index at = 0;
  v.amplitudes().cwiseAbs().maxCoeff(&at);
  const cplx ph = std::abs(v.amplitudes()(at)) / v.amplitudes()(at);
  return QuantumState(v.space(), v.amplitudes() * ph, window.t_i);
}

bool Scenario::wants(const std::string& p) const {
  return std::find(pipelines.begin(), pipelines.end(), p) != pipelines.end();
}

double boundary_budget(const Scenario& s) {
  const Setup setup = s.setup();
  const Grid g = s.grid();
  const double zone = 0.05 * (g.x_max() - g.x_min());
  std::vector<int> edge;
  for (int j = 0; j < g.size(); ++j)
    if (g.x(j) - g.x_min() < zone || g.x_max() - g.x(j) < zone) edge.push_back(j);
  Evolution ev(setup.propagator);
  Vector a = s.initial_state().amplitudes();
  const long steps = step_count(s.window.t_i, s.window.t_f, s.dt);
  auto mass = [&] {
    double m = 0.0;
    for (int j : edge) m += std::norm(a(j));
    return m * g.dx();
  };
  double worst = mass();
  const long stride = 100;
  for (long k = 0; k < steps; k += stride) {
    const long n = std::min(stride, steps - k);
    ev.advance(a, s.window.t_i + k * s.dt, s.window.t_i + (k + n) * s.dt);
    worst = std::max(worst, mass());
  }
  return worst;
}

std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> warnings;
  auto fail = [&](const std::string& m) { throw ValidationError(s.name + ": " + m); };
  if (s.name.empty()) fail("name is empty");
  if (!(s.window.t_f > s.window.t_i)) fail("window.t_f must exceed window.t_i");
  if (!(s.dt > 0.0)) fail("time.dt must be positive");
  try {
    step_count(s.window.t_i, s.window.t_f, s.dt);
  } catch (const Error& e) {
    fail(e.what());
  }
  for (const auto& p : s.pipelines)
    if (p != "sojourn" && p != "clocks" && p != "meter") fail("unknown pipeline '" + p + "'");
  if (s.pipelines.empty()) fail("no pipelines requested");
  if (!(s.pointer_width > 0.0)) fail("meter.pointer_width must be positive");
  for (double g : s.couplings)
    if (!(g > 0.0)) fail("meter.couplings must be positive");

  if (s.system == SystemKind::spin) {
    if (s.pipelines != std::vector<std::string>{"meter"}) fail("spin systems support the meter pipeline only");
    for (double r : s.toy_ratios)
      if (!(r > 0.0)) fail("toy.ratios must be positive");
    if (!(s.toy_coupling > 0.0)) fail("toy.coupling must be positive");
    return warnings;
  }

  if (s.grid_n < 16) fail("grid.n must be at least 16");
  if (!(s.dx > 0.0)) fail("grid.dx must be positive");
  if (s.max_moment < 1 || s.max_moment > 4) fail("moments.max_l must lie in 1..4");
  const Grid g = s.grid();
  if (s.potential != PotentialKind::free) {
    if (!(s.b_lo < s.b_hi)) fail("potential.lo must be below potential.hi");
    if (s.b_lo <= g.x_min() || s.b_hi >= g.x_max()) fail("potential extent leaves the box");
    if (s.potential == PotentialKind::well && !(s.v0 < 0.0)) fail("a well needs potential.v0 < 0");
    if (s.potential == PotentialKind::double_barrier && !(s.b_width > 0.0 && 2 * s.b_width < s.b_hi - s.b_lo))
      fail("double barrier walls must be positive and not overlap");
  }
  try {
    s.region().indices(g);
  } catch (const Error& e) {
    fail(std::string("region: ") + e.what());
  }
  if (s.postselection == "transmitted_reflected") {
    if (s.potential != PotentialKind::barrier && s.potential != PotentialKind::double_barrier)
      fail("transmitted_reflected postselection needs a barrier");
  } else if (s.postselection.rfind("cell:", 0) == 0) {
    const double x = parse_double("postselection", s.postselection.substr(5));
    if (x < g.x_min() || x > g.x_max()) fail("postselection cell outside the box");
  } else if (s.postselection != "none") {
    fail("unknown postselection '" + s.postselection + "'");
  }
  if (!s.stationary) {
    if (!(s.sigma > 3.0 * s.dx)) fail("packet.sigma must exceed 3 grid.dx");
    if (std::abs(s.k0) * s.dx > 1.0) fail("packet.k0 is not resolved by grid.dx");
    if (packet_edge_clearance(g, s.x0, s.sigma) < 5.0) fail("packet within 5 sigma of a wall");
    std::vector<double> features;
    if (s.potential != PotentialKind::free) features = {s.b_lo, s.b_hi};
    if (s.omega) {
      if (s.omega->lo() > g.x_min()) features.push_back(s.omega->lo());
      if (s.omega->hi() < g.x_max()) features.push_back(s.omega->hi());
    }
    for (double f : features)
      if (std::abs(s.x0 - f) < 5.0 * s.sigma) fail("packet within 5 sigma of a region or barrier edge");
    if (s.omega) {
      const double gap = std::max({0.0, s.omega->lo() - s.x0, s.x0 - s.omega->hi()});
      if (gap > 2.0 * std::abs(s.k0) * s.window.length() + 3.0 * s.sigma)
        warnings.push_back("window too short for the packet to reach the region");
    }
  }
  const double budget = boundary_budget(s);
  if (budget > kBoundaryBudget) {
    std::ostringstream os;
    os << "boundary mass " << budget << " exceeds " << kBoundaryBudget << " during the window";
    fail(os.str());
  }
  return warnings;
}

Scenario scenario_from_config(const Config& c) {
  Scenario s;
  s.name = c.require("name");
  const std::string system = c.get("system", "position");
  if (system == "spin")
    s.system = SystemKind::spin;
  else if (system != "position")
    throw ValidationError("system must be position or spin");
  s.grid_n = c.integer("grid.n", s.grid_n);
  s.x_min = c.number("grid.x_min", s.x_min);
  s.dx = c.number("grid.dx", s.dx);
  const std::string kind = c.get("potential.kind", "free");
  if (kind == "free")
    s.potential = PotentialKind::free;
  else if (kind == "barrier")
    s.potential = PotentialKind::barrier;
  else if (kind == "double_barrier")
    s.potential = PotentialKind::double_barrier;
  else if (kind == "well")
    s.potential = PotentialKind::well;
  else
    throw ValidationError("potential.kind: unknown '" + kind + "'");
  s.v0 = c.number("potential.v0", 0.0);
  s.b_lo = c.number("potential.lo", 0.0);
  s.b_hi = c.number("potential.hi", 0.0);
  s.b_width = c.number("potential.width", 0.0);
  const std::string packet = c.get("packet.kind", "gaussian");
  if (packet == "stationary")
    s.stationary = true;
  else if (packet != "gaussian")
    throw ValidationError("packet.kind must be gaussian or stationary");
  s.level = c.integer("packet.level", 0);
  s.x0 = c.number("packet.x0", 0.0);
  s.sigma = c.number("packet.sigma", 1.0);
  s.k0 = c.number("packet.k0", 0.0);
  s.window = {c.number("window.t_i", 0.0), c.number("window.t_f", 1.0)};
  s.dt = c.number("time.dt", 1e-3);
  const std::string method = c.get("time.method", "implicit");
  if (method == "implicit")
    s.method = PropagationMethod::implicit_step;
  else if (method == "dense")
    s.method = PropagationMethod::dense_exponential;
  else
    throw ValidationError("time.method must be implicit or dense");
  if (c.has("region.lo") != c.has("region.hi")) throw ValidationError("region needs both lo and hi");
  if (c.has("region.lo")) s.omega = Region(c.number("region.lo", 0.0), c.number("region.hi", 0.0));
  s.postselection = c.get("postselection", "none");
  if (c.has("pipelines")) s.pipelines = split(c.get("pipelines", ""), ',');
  s.max_moment = c.integer("moments.max_l", s.max_moment);
  s.pointer_width = c.number("meter.pointer_width", s.pointer_width);
  s.couplings = c.numbers("meter.couplings");
  s.toy_coupling = c.number("toy.coupling", s.toy_coupling);
  if (c.has("toy.ratios")) s.toy_ratios = c.numbers("toy.ratios");
  s.threads = c.integer("threads", 1);
  if (s.threads < 1) throw ValidationError("threads must be positive");
  s.config_hash = c.hash();
  return s;
}

namespace {

const char* kCatalog[][2] = {
    {"a",
     "name = a\n"
     "grid.n = 512\ngrid.x_min = -40\ngrid.dx = 0.15625\n"
     "potential.kind = free\n"
     "packet.x0 = -10\npacket.sigma = 2\npacket.k0 = 1\n"
     "window.t_i = 0\nwindow.t_f = 6\ntime.dt = 0.001\n"
     "postselection = none\npipelines = sojourn,clocks,meter\nmoments.max_l = 2\n"},
    {"b",
     "name = b\n"
     "grid.n = 256\ngrid.x_min = -20\ngrid.dx = 0.15625\n"
     "potential.kind = well\npotential.v0 = -4\npotential.lo = -2\npotential.hi = 2\n"
     "packet.kind = stationary\npacket.level = 0\n"
     "window.t_i = 0\nwindow.t_f = 2\ntime.dt = 0.001\n"
     "region.lo = -8\nregion.hi = 8\n"
     "postselection = none\npipelines = sojourn,clocks,meter\nmoments.max_l = 2\n"},
    {"c",
     "name = c\n"
     "grid.n = 512\ngrid.x_min = -40\ngrid.dx = 0.15625\n"
     "potential.kind = barrier\npotential.v0 = 8\npotential.lo = 0\npotential.hi = 0.75\n"
     "packet.x0 = -12\npacket.sigma = 2\npacket.k0 = 2\n"
     "window.t_i = 0\nwindow.t_f = 6\ntime.dt = 0.001\n"
     "region.lo = 0\nregion.hi = 0.75\n"
     "postselection = transmitted_reflected\npipelines = sojourn,clocks,meter\nmoments.max_l = 2\n"},
    {"d",
     "name = d\n"
     "grid.n = 512\ngrid.x_min = -40\ngrid.dx = 0.15625\n"
     "potential.kind = barrier\npotential.v0 = 8\npotential.lo = 0\npotential.hi = 0.75\n"
     "packet.x0 = -12\npacket.sigma = 2\npacket.k0 = 2\n"
     "window.t_i = 0\nwindow.t_f = 6\ntime.dt = 0.001\n"
     "region.lo = 0.75\nregion.hi = 1.75\n"
     "postselection = transmitted_reflected\npipelines = sojourn,clocks,meter\nmoments.max_l = 2\n"},
    {"e",
     "name = e\nsystem = spin\n"
     "window.t_i = 0\nwindow.t_f = 0.01\ntime.dt = 0.01\n"
     "pipelines = meter\ntoy.coupling = 1\ntoy.ratios = 0.1,0.3,0.5,2,10,100\n"},
};

}  // namespace

std::vector<std::string> catalog_names() { return {"a", "b", "c", "d", "e"}; }

Config catalog_config(const std::string& name) {
  for (const auto& entry : kCatalog)
    if (name == entry[0]) return Config::parse(entry[1]);
  throw ValidationError("no catalog scenario '" + name + "'");
}

Scenario catalog(const std::string& name) { return scenario_from_config(catalog_config(name)); }

// ---------------------------------------------------------- postselection

TransmittedReflected postselect_transmitted_reflected(const QuantumState& psi_final, double b_lo,
                                                      double b_hi) {
  if (psi_final.space().size() != 1) throw StructuralError("postselection needs a position-only state");
  const Grid& g = psi_final.space()[0].grid();
  const Vector& a = psi_final.amplitudes();
  Vector t = Vector::Zero(a.size()), r = t, in = t;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double x = g.x(static_cast<int>(j));
    if (x >= b_hi)
      t(j) = a(j);
    else if (x < b_lo)
      r(j) = a(j);
    else
      in(j) = a(j);
  }
  const double m = g.dx();
  const double norm2 = a.squaredNorm() * m;
  const double residual = in.squaredNorm() * m / norm2;
  if (residual > kBarrierBudget) {
    std::ostringstream os;
    os << "norm fraction " << residual << " still inside the barrier at t_f; lengthen the window";
    throw TimingError(os.str());
  }
  auto unit = [&](const Vector& v) {
    QuantumState s(psi_final.space(), v, psi_final.time());
    return s.normalized();
  };
  TransmittedReflected out{unit(t), unit(r), std::nullopt, 0.0, 0.0, 0.0, residual};
  if (t.squaredNorm() == 0.0 || r.squaredNorm() == 0.0)
    throw DegeneratePostselectionError("transmitted or reflected part vanishes");
  const double nrm = std::sqrt(norm2);
  out.p_t = inner_product(out.chi_t, psi_final) / nrm;
  out.p_r = inner_product(out.chi_r, psi_final) / nrm;
  if (in.squaredNorm() > 0.0) {
    out.chi_b = unit(in);
    out.p_b = inner_product(*out.chi_b, psi_final) / nrm;
  }
  return out;
}

// ---------------------------------------------------------------- bundle

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

const ResultRow* ResultBundle::find(const std::string& method, const std::string& post, int l) const {
  for (const auto& r : rows)
    if (r.method == method && r.postselection == post && r.l == l) return &r;
  return nullptr;
}

namespace {

struct Builder {
  ResultBundle& b;

  void add(const std::string& method, const std::string& post, int l, double value, double tol,
           double residual, std::vector<std::string> flags) {
    std::string f;
    for (const auto& x : flags) {
      if (x.empty()) continue;
      if (!f.empty()) f += ';';
      f += x;
    }
    b.rows.push_back({b.scenario, method, post, l, value, tol, residual, f});
  }
  // Agreement with a reference under max(rel |ref|, residual).
  void compare(const std::string& method, const std::string& post, int l, double value, double ref,
               double rel, double residual, std::vector<std::string> flags = {}) {
    const double tol = std::max(rel * std::abs(ref), residual);
    flags.insert(flags.begin(), std::abs(value - ref) <= tol ? "agree" : "disagree");
    add(method, post, l, value, tol, residual, std::move(flags));
  }
  void sweep(const std::string& method, const std::string& post, const std::vector<double>& g,
             const std::vector<cplx>& f, const Extrapolation& e) {
    b.sweeps.push_back({method, post, g, f, e.value, e.order, e.residual});
  }
};

struct Post {
  std::string label;
  QuantumState chi;
  cplx p;
  std::vector<double> mask;
};

struct Context {
  const Scenario& s;
  Grid grid;
  Setup setup;
  Region region;
  QuantumState psi0;
  QuantumState psi_f;
  SojournOperator t;
  // T, R, then B when present; otherwise the two half-lines about x = 0,
  // used for the sum rules only.
  std::vector<Post> posts;
  bool far_side = false;
  bool transmitted_reflected = false;
};

Context prepare(const Scenario& s) {
  const Setup setup = s.setup();
  const Region region = s.region();
  const QuantumState psi0 = s.initial_state();
  Context c{s, s.grid(), setup, region, psi0, at_final(psi0, setup), sojourn_matrix(region, setup), {}, false};
  if (s.postselection == "transmitted_reflected") {
    const auto tr = postselect_transmitted_reflected(c.psi_f, s.b_lo, s.b_hi);
    auto mask = [&](auto keep) {
      std::vector<double> m(s.grid_n);
      for (int j = 0; j < s.grid_n; ++j) m[j] = keep(c.grid.x(j)) ? 1.0 : 0.0;
      return m;
    };
    c.posts.push_back({"T", tr.chi_t, tr.p_t, mask([&](double x) { return x >= s.b_hi; })});
    c.posts.push_back({"R", tr.chi_r, tr.p_r, mask([&](double x) { return x < s.b_lo; })});
    if (tr.chi_b)
      c.posts.push_back({"B", *tr.chi_b, tr.p_b, mask([&](double x) { return s.b_lo <= x && x < s.b_hi; })});
    c.far_side = region.lo() >= s.b_hi;
    c.transmitted_reflected = true;
  } else {
    for (int side = 0; side < 2; ++side) {
      Vector a = c.psi_f.amplitudes();
      std::vector<double> m(s.grid_n);
      for (int j = 0; j < s.grid_n; ++j) {
        m[j] = (c.grid.x(j) >= 0.0) == (side == 1) ? 1.0 : 0.0;
        if (m[j] == 0.0) a(j) = 0.0;
      }
      if (a.squaredNorm() == 0.0) {
        c.posts.clear();
        break;
      }
      const QuantumState chi = QuantumState(c.psi_f.space(), a, c.psi_f.time()).normalized();
      c.posts.push_back({side ? "x>=0" : "x<0", chi, inner_product(chi, c.psi_f), m});
    }
  }
  return c;
}

std::string family(const Context& c) {
  std::string f;
  for (const auto& p : c.posts) f += (f.empty() ? "" : "+") + p.label;
  return f;
}

cplx reference(const Context& c, const std::string& label, int l) {
  if (label == "none") return moment(c.psi0, c.psi_f, c.t, l);
  for (const auto& p : c.posts)
    if (p.label == label) return moment_complex(c.psi0, p.chi, c.t, l);
  throw ContractError("no postselection " + label);
}

std::vector<std::string> conditional_flags(const Context& c, const std::string& label, cplx v) {
  std::vector<std::string> f;
  const double T = c.t.length();
  if (std::abs(v) > kAnomalyFactor * T) f.push_back("anomalous");
  if (v.real() < 0.0) {
    f.push_back("negative");
    if (label == "R" && c.far_side) f.push_back("expected");
  }
  return f;
}

void sojourn_rows(const Context& c, Builder& out) {
  const double T = c.t.length();
  for (int l = 1; l <= c.s.max_moment; ++l) {
    const double v = moment(c.psi0, c.psi_f, c.t, l);
    const bool inside = v >= -1e-12 && v <= std::pow(T, l) * (1 + 1e-12);
    out.add("sojourn", "none", l, v, 1e-8, 0.0, {inside ? "" : "out_of_range"});
  }
  if (c.transmitted_reflected) {
    out.add("transmission", "none", 0, std::norm(c.posts[0].p), 1e-6, 0.0, {});
    out.add("reflection", "none", 0, std::norm(c.posts[1].p), 1e-6, 0.0, {});
  }
  if (!c.posts.empty()) {
    for (const auto& p : c.posts) {
      if (p.label == "B") continue;
      for (int l = 1; l <= c.s.max_moment; ++l) {
        const cplx v = moment_complex(c.psi0, p.chi, c.t, l);
        out.add("sojourn", p.label, l, v.real(), 1e-8, 0.0, conditional_flags(c, p.label, v));
        out.add("sojourn.imag", p.label, l, v.imag(), 1e-8, 0.0, {});
      }
    }
    for (int l = 1; l <= c.s.max_moment; ++l) {
      cplx sum = 0.0;
      for (const auto& p : c.posts) sum += std::norm(p.p) * moment_complex(c.psi0, p.chi, c.t, l);
      const double d = std::abs(sum - moment(c.psi0, c.psi_f, c.t, l));
      out.add("sum_rule", family(c), l, d, 1e-8, 0.0, {d <= 1e-8 ? "ok" : "violated"});
    }
  }
  if (c.s.postselection.rfind("cell:", 0) == 0) {
    const double x = std::stod(c.s.postselection.substr(5));
    const int j = std::clamp(static_cast<int>(std::lround((x - c.grid.x_min()) / c.grid.dx())), 0, c.s.grid_n - 1);
    const QuantumState cell = cell_state(c.grid, j).at_time(c.setup.window.t_f);
    const cplx v = moment_complex(c.psi0, cell, c.t, 1);
    out.add("sojourn", c.s.postselection, 1, v.real(), 1e-8, 0.0, conditional_flags(c, "cell", v));
    if (c.s.max_moment >= 2) {
      const CellSecondMoment m = second_moment_position_postselected(c.psi0, j, c.t);
      out.add("cell.real_part", c.s.postselection, 2, m.real_part_form, 1e-8, 0.0, {});
      out.add("cell.sandwich", c.s.postselection, 2, m.sandwich_form, 1e-8, 0.0, {});
    }
  }
  if (c.s.max_moment >= 2) {
    const double ref = moment(c.psi0, c.psi_f, c.t, 2);
    out.compare("position_integral", "none", 2, second_moment_position_integral(c.psi0, c.region, c.setup),
                ref, 1e-3, 0.0);
    out.compare("lambda", "none", 2, lambda_moment2(c.t, c.psi0, 1e-3), ref, 1e-3, 0.0);
  }
}

void clock_rows(const Context& c, Builder& out) {
  std::vector<std::pair<std::string, std::optional<QuantumState>>> targets{{"none", std::nullopt}};
  if (c.transmitted_reflected)
    for (const auto& p : c.posts)
      if (p.label != "B") targets.emplace_back(p.label, p.chi);
  const ClockMethod methods[] = {ClockMethod::real_potential, ClockMethod::imaginary_potential,
                                 ClockMethod::larmor};
  struct Job {
    ClockMethod m;
    std::size_t target;
  };
  std::vector<Job> jobs;
  for (auto m : methods)
    for (std::size_t k = 0; k < targets.size(); ++k) jobs.push_back({m, k});
  const auto records = parallel_map(jobs.size(), c.s.threads, [&](std::size_t i) {
    ClockConfig cfg{jobs[i].m, default_strengths(c.t.length()), c.region, c.setup, 1};
    const auto& [label, chi] = targets[jobs[i].target];
    switch (jobs[i].m) {
      case ClockMethod::real_potential:
        return clock_real_potential(cfg, c.psi0, chi, label);
      case ClockMethod::imaginary_potential:
        return clock_imaginary_potential(cfg, c.psi0, chi, label);
      default:
        return clock_larmor(cfg, c.psi0, chi, label);
    }
  });
  for (const auto& r : records) {
    const std::string name = to_string(r.method);
    const double ref = reference(c, r.postselection, 1).real();
    std::vector<double> g;
    std::vector<cplx> f, x;
    for (const auto& p : r.points) {
      g.push_back(p.strength);
      f.push_back(p.readout);
      x.push_back(p.cross);
    }
    const std::string order = r.flagged ? "order_flagged" : "";
    out.compare(name, r.postselection, 1, r.time(), ref, 0.01, r.direct.residual, {order});
    out.compare(name + ".cross", r.postselection, 1, r.cross.value.real(), ref, 0.01, r.cross.residual,
                {order_accepted(r.cross.order) || std::isnan(r.cross.order) ? "" : "order_flagged"});
    out.sweep(name, r.postselection, g, f, r.direct);
    out.sweep(name + ".cross", r.postselection, g, x, r.cross);
  }
  ClockConfig cfg{ClockMethod::imaginary_potential, default_strengths(c.t.length()), c.region, c.setup, 1};
  const Extrapolation e = absorption_dwell_time(cfg, c.psi0);
  out.compare("absorption", "none", 1, e.value.real(), reference(c, "none", 1).real(), 0.01, e.residual, {});
}

// Slope of log y against log x; NaN when every y vanishes.
double loglog_order(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  if (lx.size() < 2) return std::nan("");
  return fit_line(lx, ly).slope;
}

void meter_rows(const Context& c, Builder& out) {
  const double T = c.t.length();
  const double w = c.s.pointer_width;
  std::vector<double> ladder = c.s.couplings;
  if (ladder.empty()) ladder = {0.2 * w, 0.1 * w, 0.05 * w, 0.025 * w};
  const double reach = *std::max_element(ladder.begin(), ladder.end());
  const PointerSpec spec = PointerSpec::make(w, reach);
  const OperatorMatrix a = projector(c.region, c.grid);

  std::vector<std::optional<Postselector>> posts{std::nullopt};
  std::vector<std::string> labels{"none"};
  for (const auto& p : c.posts) {
    posts.push_back(Postselector::projector(p.label, p.mask));
    labels.push_back(p.label);
  }
  struct Reading {
    std::vector<PointerDistribution> d;
    double survival;
  };
  const auto readings = parallel_map(ladder.size(), c.s.threads, [&](std::size_t i) {
    const MeterRun run = run_meter(spec, c.setup, c.psi0, a, ladder[i]);
    Reading r;
    for (const auto& p : posts) r.d.push_back(pointer_distribution(run, p));
    r.survival = survival_probability(run);
    return r;
  });

  for (std::size_t n = 0; n < posts.size(); ++n) {
    if (labels[n] == "B") continue;
    std::vector<double> shift, excess;
    for (const auto& r : readings) {
      shift.push_back(r.d[n].mean);
      excess.push_back(std::abs(r.d[n].variance - w * w));
    }
    const LinearFit fit = fit_line(ladder, shift);
    const double ref = reference(c, labels[n], 1).real();
    out.compare("meter", labels[n], 1, fit.slope * T, ref, 0.01, 0.0,
                {std::abs(fit.intercept) < 1e-6 ? "linear" : "offset"});
    out.add("meter.intercept", labels[n], 1, fit.intercept, 1e-6, fit.max_residual, {});
    const double order = loglog_order(ladder, excess);
    const double largest = *std::max_element(excess.begin(), excess.end());
    out.add("meter.variance_order", labels[n], 1, order, 0.0, largest,
            {std::isnan(order) || order > 1.0 || largest < 1e-9 * w * w ? "o(G)" : "not_o(G)"});
    std::vector<cplx> f;
    for (double s : shift) f.push_back(s);
    out.sweep("meter", labels[n], ladder, f, {fit.slope, 1.0, fit.max_residual});
  }
  if (posts.size() > 1) {
    double worst = 0.0;
    for (const auto& r : readings) {
      double sum = 0.0;
      for (std::size_t n = 1; n < posts.size(); ++n) sum += r.d[n].probability * r.d[n].mean;
      worst = std::max(worst, std::abs(sum - r.d[0].mean));
    }
    out.add("meter.sum_rule", family(c), 1, worst, 1e-8, 0.0, {worst <= 1e-8 ? "ok" : "violated"});
  }
  {
    std::vector<double> loss;
    for (const auto& r : readings) loss.push_back(1.0 - r.survival);
    const double order = loglog_order(ladder, loss);
    out.add("survival.order", "none", 0, order, 1.5, 0.0,
            {std::isnan(order) ? "eigenstate" : (order >= 1.5 ? "ok" : "low")});
  }

  // Moment meters.
  const PointerSpec mspec = PointerSpec::make(w, 0.0);
  for (int l = 1; l <= c.s.max_moment; ++l) {
    const double e = 1e-3 / std::pow(T, l - 1);
    const std::vector<double> g{8 * e, 4 * e, 2 * e, e};
    const auto res = moment_meter_sweep(mspec, c.t, c.psi0, l, g, posts);
    for (std::size_t n = 0; n < posts.size(); ++n) {
      if (labels[n] == "B") continue;
      const cplx ref = reference(c, labels[n], l);
      const auto& v = res[n].value;
      out.compare("moment_meter", labels[n], l, v.value.real(), ref.real(), 0.01, v.residual);
      std::vector<cplx> f;
      for (std::size_t k = 0; k < g.size(); ++k) f.push_back(res[n].shifts[k] / g[k]);
      out.sweep("moment_meter.l" + std::to_string(l), labels[n], g, f, v);
    }
    if (posts.size() > 1) {
      double worst = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        double sum = 0.0;
        for (std::size_t n = 1; n < posts.size(); ++n) sum += res[n].probabilities[k] * res[n].shifts[k];
        worst = std::max(worst, std::abs(sum - res[0].shifts[k]));
      }
      out.add("moment_meter.sum_rule", family(c), l, worst, 1e-8, 0.0, {worst <= 1e-8 ? "ok" : "violated"});
    }
  }

  // Derivative identities on a coarser pointer.
  const std::string label = c.transmitted_reflected ? "T" : "none";
  const QuantumState chi = c.transmitted_reflected ? c.posts[0].chi : c.psi_f.normalized();
  const std::vector<double> g{0.08 * w, 0.04 * w, 0.02 * w};
  const PointerSpec small = PointerSpec::make(w, g[0], 64);
  const IdentityReport p = pointer_identity_check(small, c.setup, c.psi0, a, c.t.integrated, chi, g);
  const double tol = std::max(1e-4, p.route.residual);
  out.add("identity.pointer", label, 1, p.discrepancy, tol, p.route.residual,
          {p.discrepancy <= tol ? "ok" : "violated"});
  for (int l = 1; l <= std::min(2, c.s.max_moment); ++l) {
    const IdentityReport m = moment_identity_check(small, c.t, c.psi0, chi, l, {8e-2, 4e-2, 2e-2, 1e-2});
    const double tl = std::max(1e-4 * std::abs(m.direct), m.route.residual);
    out.add("identity.moment", label, l, m.discrepancy, tl, m.route.residual,
            {m.discrepancy <= tl ? "ok" : "violated"});
  }
}

void toy_rows(const Scenario& s, Builder& out) {
  const Setup setup = s.setup();
  const double g = s.toy_coupling;
  const CouplingProfile kick = CouplingProfile::impulsive(s.window.t_f, s.dt);
  const QuantumState plus = s.initial_state();

  // Narrow pointer: quasi-delta peaks.
  const PointerSpec narrow = PointerSpec::make(0.1 * g, g);
  const MeterRun strong = run_meter(narrow, setup, plus, sigma_z(), g, kick);
  const PointerDistribution d = pointer_distribution(strong);
  double up = 0.0, down = 0.0;
  for (int j = 0; j < narrow.grid.size(); ++j)
    (narrow.grid.x(j) > 0.0 ? up : down) += d.f[j] * narrow.grid.dx();
  out.compare("strong.weight", "up", 0, up, 0.5, 0.02, 0.0);
  out.compare("strong.weight", "down", 0, down, 0.5, 0.02, 0.0);
  out.compare("strong.survival", "none", 0, survival_probability(strong), 0.5, 0.02, 0.0);
  {
    const PointerDistribution u = pointer_distribution(strong, Postselector::projector("up", {1.0, 0.0}));
    const PointerDistribution v = pointer_distribution(strong, Postselector::projector("down", {0.0, 1.0}));
    const double dev = std::abs(u.probability * u.mean + v.probability * v.mean - d.mean);
    out.add("meter.sum_rule", "up+down", 1, dev, 1e-8, 0.0, {dev <= 1e-8 ? "ok" : "violated"});
  }
  const MeterRun eig = run_meter(narrow, setup, spin_state(1.0, 0.0).at_time(s.window.t_i), sigma_z(), g, kick);
  const double p0 = survival_probability(eig);
  out.add("strong.survival", "eigenstate", 0, p0, 1e-8, 0.0, {std::abs(p0 - 1.0) <= 1e-8 ? "agree" : "disagree"});

  std::vector<double> ratios = s.toy_ratios;
  std::sort(ratios.begin(), ratios.end());
  const auto peaks = parallel_map(ratios.size(), s.threads, [&](std::size_t i) {
    const PointerSpec spec = PointerSpec::make(ratios[i] * g, g);
    return count_peaks(pointer_distribution(run_meter(spec, setup, plus, sigma_z(), g, kick)).f);
  });
  bool monotone = peaks.front() == 2 && peaks.back() == 1;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    char lab[48];
    std::snprintf(lab, sizeof lab, "ratio=%g", ratios[i]);
    out.add("crossover.peaks", lab, 0, peaks[i], 0.0, 0.0, {});
    if (i > 0 && peaks[i] > peaks[i - 1]) monotone = false;
  }
  out.add("crossover.monotone", "none", 0, monotone ? 1.0 : 0.0, 0.0, 0.0, {monotone ? "ok" : "violated"});
}

}  // namespace

ResultBundle run_scenario(const Scenario& s) {
  ResultBundle b;
  b.scenario = s.name;
  b.config_hash = s.config_hash;
  b.version = library_version();
  b.warnings = validate(s);
  Builder out{b};
  if (s.system == SystemKind::spin) {
    toy_rows(s, out);
    return b;
  }
  const Context c = prepare(s);
  if (s.wants("sojourn")) sojourn_rows(c, out);
  if (s.wants("clocks")) clock_rows(c, out);
  if (s.wants("meter")) meter_rows(c, out);
  return b;
}

// -------------------------------------------------------------- emission

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

using nlohmann::ordered_json;

ordered_json jnum(double x) { return std::isnan(x) ? ordered_json(nullptr) : ordered_json(x); }
double from_jnum(const ordered_json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }
ordered_json jcplx(cplx z) { return ordered_json::array({jnum(z.real()), jnum(z.imag())}); }
cplx from_jcplx(const ordered_json& j) { return {from_jnum(j.at(0)), from_jnum(j.at(1))}; }

}  // namespace

bool ResultRow::operator==(const ResultRow& o) const {
  return scenario == o.scenario && method == o.method && postselection == o.postselection && l == o.l &&
         same(value, o.value) && same(tolerance, o.tolerance) && same(residual, o.residual) && flags == o.flags;
}

bool SweepData::operator==(const SweepData& o) const {
  auto cs = [](cplx a, cplx b) { return same(a.real(), b.real()) && same(a.imag(), b.imag()); };
  if (readouts.size() != o.readouts.size()) return false;
  for (std::size_t i = 0; i < readouts.size(); ++i)
    if (!cs(readouts[i], o.readouts[i])) return false;
  return method == o.method && postselection == o.postselection && strengths == o.strengths &&
         cs(value, o.value) && same(order, o.order) && same(residual, o.residual);
}

std::string to_csv(const ResultBundle& b) {
  std::string s = "scenario,method,postselection,l,value,tolerance,residual,flags\n";
  for (const auto& r : b.rows)
    s += r.scenario + ',' + r.method + ',' + r.postselection + ',' + std::to_string(r.l) + ',' + num(r.value) +
         ',' + num(r.tolerance) + ',' + num(r.residual) + ',' + r.flags + '\n';
  return s;
}

std::string to_json(const ResultBundle& b) {
  ordered_json j;
  j["scenario"] = b.scenario;
  j["config_hash"] = b.config_hash;
  j["version"] = b.version;
  j["warnings"] = b.warnings;
  j["rows"] = ordered_json::array();
  for (const auto& r : b.rows)
    j["rows"].push_back({{"scenario", r.scenario},
                         {"method", r.method},
                         {"postselection", r.postselection},
                         {"l", r.l},
                         {"value", jnum(r.value)},
                         {"tolerance", jnum(r.tolerance)},
                         {"residual", jnum(r.residual)},
                         {"flags", r.flags}});
  j["sweeps"] = ordered_json::array();
  for (const auto& sw : b.sweeps) {
    ordered_json readouts = ordered_json::array();
    for (cplx z : sw.readouts) readouts.push_back(jcplx(z));
    j["sweeps"].push_back({{"method", sw.method},
                           {"postselection", sw.postselection},
                           {"strengths", sw.strengths},
                           {"readouts", readouts},
                           {"value", jcplx(sw.value)},
                           {"order", jnum(sw.order)},
                           {"residual", jnum(sw.residual)}});
  }
  return j.dump(2) + "\n";
}

ResultBundle bundle_from_json(const std::string& text) {
  ResultBundle b;
  try {
    const ordered_json j = ordered_json::parse(text);
    b.scenario = j.at("scenario").get<std::string>();
    b.config_hash = j.at("config_hash").get<std::string>();
    b.version = j.at("version").get<std::string>();
    b.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows"))
      b.rows.push_back({r.at("scenario").get<std::string>(), r.at("method").get<std::string>(),
                        r.at("postselection").get<std::string>(), r.at("l").get<int>(), from_jnum(r.at("value")),
                        from_jnum(r.at("tolerance")), from_jnum(r.at("residual")),
                        r.at("flags").get<std::string>()});
    for (const auto& sw : j.at("sweeps")) {
      SweepData d;
      d.method = sw.at("method").get<std::string>();
      d.postselection = sw.at("postselection").get<std::string>();
      d.strengths = sw.at("strengths").get<std::vector<double>>();
      for (const auto& z : sw.at("readouts")) d.readouts.push_back(from_jcplx(z));
      d.value = from_jcplx(sw.at("value"));
      d.order = from_jnum(sw.at("order"));
      d.residual = from_jnum(sw.at("residual"));
      b.sweeps.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed result bundle: ") + e.what());
  }
  return b;
}

std::filesystem::path emit(const ResultBundle& b, Format f, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto path = out_dir / (b.scenario + (f == Format::csv ? ".csv" : ".json"));
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("cannot write " + path.string());
  o << (f == Format::csv ? to_csv(b) : to_json(b));
  if (!o) throw IoError("write failed: " + path.string());
  return path;
}

}  // namespace weaktime
