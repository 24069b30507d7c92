// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [out-dir]   (writes the catalog CSVs when out-dir is given)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>

#include "oracle.hpp"
#include "weaktime/scenarios.hpp"

using namespace weaktime;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

const ResultRow& row(const ResultBundle& b, const std::string& m, const std::string& p, int l = 1) {
  const ResultRow* r = b.find(m, p, l);
  if (!r) throw std::runtime_error(b.scenario + ": missing row " + m + "/" + p + "/" + std::to_string(l));
  return *r;
}

// 1 -------------------------------------------------------------------------

Verdict oracle_equivalence() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (auto method : {PropagationMethod::implicit_step, PropagationMethod::dense_exponential}) {
    for (int n : {28, 30, 32}) {
      Grid g(n, -4.0, 4.0);
      std::vector<double> pot(n, 0.0);
      for (int j = 0; j < n; ++j)
        if (0.0 <= g.x(j) && g.x(j) < 0.8) pot[j] = 2.5;
      const Setup s{Propagator{method, 0.01, system_hamiltonian(g, pot)}, Window{0.0, 0.6}, 0};
      const oracle::Problem p{n, -4.0, g.dx(), pot, 0.0, 0.6, 0.01, method == PropagationMethod::dense_exponential};
      const Region omega(0.0, 0.8);
      const QuantumState psi0 = gaussian_packet(g, -1.0, 0.9, 1.4);
      const SojournOperator t = sojourn_matrix(omega, s);
      const oracle::Mat tr = p.integrated(p.indicator(0.0, 0.8));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(t.matrix.entries()(i, j) - tr(i, j)));

      const oracle::Vec pf = p.evolve(oracle::Vec(psi0.amplitudes().data(), psi0.amplitudes().data() + n));
      const QuantumState psi_f = at_final(psi0, s);
      const double dx = g.dx();
      worst = std::max(worst, std::abs(dwell_time(t, psi0) - oracle::moment(tr, pf, pf, 1, dx).real()));
      for (int l = 1; l <= 3; ++l)
        worst = std::max(worst, std::abs(moment(psi0, psi_f, t, l) - oracle::moment(tr, pf, pf, l, dx)));

      // right and left of the barrier as final states
      for (bool right : {true, false}) {
        Vector a = psi_f.amplitudes();
        oracle::Vec c(pf);
        for (int j = 0; j < n; ++j)
          if ((g.x(j) >= 0.8) != right) a(j) = c[j] = 0.0;
        const QuantumState chi = QuantumState(psi_f.space(), a, psi_f.time()).normalized();
        const double nc = std::sqrt(oracle::dot(c, c, dx).real());
        for (auto& z : c) z /= nc;
        worst = std::max(worst, std::abs(conditional_dwell_time(t, psi0, chi).value - oracle::moment(tr, pf, c, 1, dx)));
        for (int l = 1; l <= 3; ++l) {
          const cplx want = oracle::moment(tr, pf, c, l, dx);
          worst = std::max(worst, std::abs(moment_complex(psi0, chi, t, l) - want) / std::max(1.0, std::abs(want)));
        }
      }

      const oracle::Vec tp = oracle::apply(tr, pf);
      double integral = 0.0;
      for (int j = 0; j < n; ++j) integral += std::norm(tp[j]) * dx;
      worst = std::max(worst, std::abs(second_moment_position_integral(psi0, omega, s) - integral));
      const double h = 1e-3;
      const oracle::Vec up = oracle::expi(tr, pf, h), dn = oracle::expi(tr, pf, -h);
      double lam = 0.0;
      for (int j = 0; j < n; ++j) {
        if (std::abs(pf[j]) < 1e-8) continue;
        lam += (-(up[j] - 2.0 * pf[j] + dn[j]) / (h * h) / pf[j]).real() * std::norm(pf[j]) * dx;
      }
      worst = std::max(worst, std::abs(lambda_moment2(t, psi0, h) - lam));
    }
  }
  const double secs = seconds_since(t0);
  v.require(worst < 1e-8, fmt("max deviation %.3g", worst));
  v.require(secs < 30.0, fmt("took %.1f s", secs));
  v.detail = fmt("max deviation %.2e, %.1f s", worst, secs) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 2 -------------------------------------------------------------------------

Verdict method_agreement(const ResultBundle& c) {
  Verdict v;
  double worst = 0.0;
  for (const char* post : {"none", "T", "R"}) {
    const double ref = row(c, "sojourn", post).value;
    for (const char* m : {"real_potential", "imaginary_potential", "larmor"}) {
      const ResultRow& r = row(c, m, post);
      const double d = std::abs(r.value - ref);
      worst = std::max(worst, d / std::abs(ref));
      v.require(d <= std::max(0.01 * std::abs(ref), r.residual), std::string(m) + "/" + post);
    }
  }
  v.detail = fmt("largest relative gap %.2e", worst) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 3 -------------------------------------------------------------------------

Verdict meter_linearity(const ResultBundle& c) {
  Verdict v;
  const double T = 6.0;
  double worst = 0.0, icpt = 0.0;
  for (const char* post : {"none", "T", "R"}) {
    const SweepData* sw = nullptr;
    for (const auto& s : c.sweeps)
      if (s.method == "meter" && s.postselection == post) sw = &s;
    v.require(sw && sw->strengths.size() == 4, std::string("no 4-point ladder for ") + post);
    if (!sw) continue;
    std::vector<double> y;
    for (cplx z : sw->readouts) y.push_back(z.real());
    const LinearFit f = fit_line(sw->strengths, y);
    const double ref = row(c, "sojourn", post).value / T;
    worst = std::max(worst, std::abs(f.slope - ref) / std::abs(ref));
    icpt = std::max(icpt, std::abs(f.intercept));
    v.require(std::abs(f.slope - ref) <= 0.01 * std::abs(ref), std::string("slope ") + post);
    v.require(std::abs(f.intercept) < 1e-6, std::string("intercept ") + post);
  }
  v.detail = fmt("slope gap %.2e, |intercept| <= %.2e", worst, icpt) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 4 -------------------------------------------------------------------------

Verdict strong_statistics(const ResultBundle& e) {
  Verdict v;
  // |+x>: weights 1/2, 1/2; P0 = sum |c|^4 = 1/2
  const double up = row(e, "strong.weight", "up", 0).value;
  const double dn = row(e, "strong.weight", "down", 0).value;
  const double p0 = row(e, "strong.survival", "none", 0).value;
  v.require(std::abs(up - 0.5) <= 0.02 * 0.5, "up weight");
  v.require(std::abs(dn - 0.5) <= 0.02 * 0.5, "down weight");
  v.require(std::abs(p0 - 0.5) <= 0.02 * 0.5, "P0");
  v.require(row(e, "crossover.peaks", "ratio=0.1", 0).value == 2.0, "narrow pointer not two peaks");
  v.detail = fmt("weights %.6f %.6f, P0 %.6f", up, dn, p0) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 5 -------------------------------------------------------------------------

Verdict sum_rules(const std::map<std::string, ResultBundle>& all) {
  Verdict v;
  double worst = 0.0;
  int count = 0;
  for (const auto& [name, b] : all) {
    bool any = false;
    for (const auto& r : b.rows) {
      if (r.method.find("sum_rule") == std::string::npos) continue;
      any = true;
      ++count;
      worst = std::max(worst, std::abs(r.value));
      v.require(std::abs(r.value) <= 1e-8, name + ":" + r.method + "/" + std::to_string(r.l));
    }
    v.require(any, name + ": no sum rule rows");
    if (name != "e")
      for (int l = 1; l <= 2; ++l) {
        bool found = false;
        for (const auto& r : b.rows) found = found || (r.method == "sum_rule" && r.l == l);
        v.require(found, name + ": no l=" + std::to_string(l) + " sum rule");
      }
  }
  v.detail = fmt("%.0f rules, worst %.2e", count, worst) + (v.pass ? "" : " | " + v.detail);
  return v;
}

}  // namespace

namespace {

// 6 -------------------------------------------------------------------------

Verdict moment_routes(const ResultBundle& c) {
  Verdict v;
  const double r[4] = {row(c, "sojourn", "none", 2).value, row(c, "position_integral", "none", 2).value,
                       row(c, "moment_meter", "none", 2).value, row(c, "lambda", "none", 2).value};
  double worst = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) worst = std::max(worst, std::abs(r[i] - r[j]) / std::abs(r[i]));
  v.require(worst <= 1e-3, "routes disagree");
  v.detail = fmt("<t^2> = %.10f, largest pairwise gap %.2e", r[0], worst) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 7 -------------------------------------------------------------------------

Verdict negative_time(const ResultBundle& d) {
  Verdict v;
  const ResultRow& r = row(d, "sojourn", "R");
  const double tau = row(d, "sojourn", "none").value;
  v.require(r.value < 0.0, "reflected time not negative");
  v.require(r.flags.find("negative") != std::string::npos, "not flagged");
  v.require(tau >= 0.0 && tau <= 6.0, "unconditioned time outside the window");
  v.detail = fmt("reflected %.6f [", r.value) + r.flags + fmt("], unconditioned %.6f", tau);
  return v;
}

// 8 -------------------------------------------------------------------------

Verdict survival_scaling(const std::map<std::string, ResultBundle>& all) {
  Verdict v;
  double lowest = 1e300;
  for (const char* n : {"c", "d"}) {  // (a) and (b) are eigenstates of the sojourn operator
    const double o = row(all.at(n), "survival.order", "none", 0).value;
    lowest = std::min(lowest, o);
    v.require(o >= 1.5, std::string(n) + fmt(": order %.3f", o));
  }
  v.detail = fmt("lowest fitted order %.4f", lowest) + (v.pass ? "" : " | " + v.detail);
  return v;
}

// 9 -------------------------------------------------------------------------

Verdict hygiene() {
  Verdict v;
  Grid g(64, -10.0, 10.0);
  std::vector<double> pot(64, 0.0);
  for (int j = 0; j < 64; ++j)
    if (0.0 <= g.x(j) && g.x(j) < 1.0) pot[j] = 1.5;
  const Hamiltonian h = system_hamiltonian(g, pot);
  const QuantumState psi = gaussian_packet(g, -3.0, 1.5, 1.0);
  const QuantumState ref = evolve(psi, {PropagationMethod::dense_exponential, 0.5, h}, 0.0, 0.5);
  auto err = [&](double dt) {
    return (evolve(psi, {PropagationMethod::implicit_step, dt, h}, 0.0, 0.5).amplitudes() - ref.amplitudes())
        .cwiseAbs()
        .maxCoeff();
  };
  const double ratio = err(0.01) / err(0.005);
  v.require(ratio >= 3.5 && ratio <= 4.5, "convergence ratio");

  Evolution ev({PropagationMethod::implicit_step, 1e-3, h});
  QuantumState s = psi;
  for (int k = 0; k < 1000; ++k) s = ev.advance(s, k * 1e-3, (k + 1) * 1e-3);
  const double drift = std::abs(s.norm() - 1.0);
  v.require(drift < 1e-8, "norm drift");

  std::vector<double> gamma(64, 0.0);
  for (int j = 0; j < 64; ++j)
    if (0.0 <= g.x(j) && g.x(j) < 1.0) gamma[j] = -0.5;
  bool monotone = true;
  for (auto m : {PropagationMethod::implicit_step, PropagationMethod::dense_exponential}) {
    Evolution ab({m, 1e-2, system_hamiltonian(g, pot, gamma)});
    QuantumState a = psi;
    double prev = 1.0;
    for (int k = 0; k < 300; ++k) {
      a = ab.advance(a, k * 1e-2, (k + 1) * 1e-2);
      const double n2 = inner_product(a, a).real();
      monotone = monotone && n2 <= prev;
      prev = n2;
    }
    monotone = monotone && prev < 1.0;
  }
  v.require(monotone, "absorbing run not monotone");
  v.detail = fmt("dt ratio %.4f, norm drift %.1e", ratio, drift) + (monotone ? ", decay monotone" : "") +
             (v.pass ? "" : " | " + v.detail);
  return v;
}

void report(int n, const char* what, const std::function<Verdict()>& f, int& failures) {
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("error: ") + e.what();
  }
  if (!v.pass) ++failures;
  std::printf("criterion %2d %s  %s: %s\n", n, v.pass ? "PASS" : "FAIL", what, v.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = Clock::now();
  int failures = 0;
  report(1, "oracle equivalence", oracle_equivalence, failures);

  std::map<std::string, ResultBundle> all;
  std::map<std::string, std::string> first;
  try {
    for (const auto& n : catalog_names()) {
      const Scenario s = catalog(n);
      validate(s);
      all[n] = run_scenario(s);
      first[n] = to_csv(all[n]) + to_json(all[n]);
      if (argc > 1) emit(all[n], Format::csv, argv[1]);
    }
  } catch (const std::exception& e) {
    std::printf("catalog run failed: %s\n", e.what());
    return 1;
  }

  report(2, "clock agreement on (c)", [&] { return method_agreement(all.at("c")); }, failures);
  report(3, "meter linearity on (c)", [&] { return meter_linearity(all.at("c")); }, failures);
  report(4, "strong two-level statistics", [&] { return strong_statistics(all.at("e")); }, failures);
  report(5, "sum rules", [&] { return sum_rules(all); }, failures);
  report(6, "second-moment routes on (c)", [&] { return moment_routes(all.at("c")); }, failures);
  report(7, "negative reflected time on (d)", [&] { return negative_time(all.at("d")); }, failures);
  report(8, "survival scaling", [&] { return survival_scaling(all); }, failures);
  report(9, "numerical hygiene", hygiene, failures);
  report(10, "determinism", [&] {
    Verdict v;
    for (const auto& n : catalog_names()) {
      const ResultBundle again = run_scenario(catalog(n));
      v.require(to_csv(again) + to_json(again) == first.at(n), n + " differs");
    }
    v.detail = v.pass ? "catalog reruns byte-identical" : v.detail;
    return v;
  }, failures);

  std::printf("%d of 10 criteria passed in %.0f s\n", 10 - failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
