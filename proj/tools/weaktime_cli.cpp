// weaktime: validate, run and compare dwell-time scenarios.
//
//   weaktime validate --config c.cfg
//   weaktime run --catalog c --out-dir out --format json
//   weaktime sweep --config c.cfg --out-dir out
//   weaktime compare --catalog d
//   weaktime emit --input out/c.json --format csv --out-dir out
//
// Exit codes: 0 ok, 1 validation, 2 numerical, 3 io.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "weaktime/error.hpp"
#include "weaktime/scenarios.hpp"

using namespace weaktime;

namespace {

struct Options {
  std::string config;
  std::string catalog;
  std::string input;
  std::string out_dir = ".";
  std::string format = "csv";
  int threads = 1;
};

Scenario load(const Options& o) {
  if (o.config.empty() == o.catalog.empty()) throw ValidationError("give exactly one of --config or --catalog");
  Config c = o.config.empty() ? catalog_config(o.catalog) : Config::load(o.config);
  Scenario s = scenario_from_config(c);
  // threads change scheduling only, never results or the hash
  s.threads = std::max(o.threads, s.threads);
  return s;
}

Format format_of(const std::string& f) { return f == "json" ? Format::json : Format::csv; }

int cmd_validate(const Options& o) {
  const Scenario s = load(o);
  for (const auto& w : validate(s)) std::cerr << "warning: " << w << "\n";
  std::cout << s.name << ": ok (" << s.config_hash << ")\n";
  return 0;
}

int cmd_run(const Options& o) {
  const ResultBundle b = run_scenario(load(o));
  for (const auto& w : b.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << emit(b, format_of(o.format), o.out_dir).string() << "\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  Scenario s = load(o);
  s.pipelines = {"clocks"};
  ResultBundle b = run_scenario(s);
  if (format_of(o.format) == Format::json) {
    b.rows.clear();
    std::cout << emit(b, Format::json, o.out_dir).string() << "\n";
    return 0;
  }
  std::filesystem::create_directories(o.out_dir);
  const auto path = std::filesystem::path(o.out_dir) / (s.name + ".sweeps.csv");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "scenario,method,postselection,strength,readout_re,readout_im\n";
  char line[256];
  for (const auto& sw : b.sweeps)
    for (std::size_t i = 0; i < sw.strengths.size(); ++i) {
      std::snprintf(line, sizeof line, "%s,%s,%s,%.17g,%.17g,%.17g\n", s.name.c_str(), sw.method.c_str(),
                    sw.postselection.c_str(), sw.strengths[i], sw.readouts[i].real(), sw.readouts[i].imag());
      out << line;
    }
  if (!out) throw IoError("write failed: " + path.string());
  std::cout << path.string() << "\n";
  return 0;
}

// Table of every row against its tolerance; nonzero when a check fails.
int cmd_compare(const Options& o) {
  const ResultBundle b = run_scenario(load(o));
  int bad = 0;
  std::printf("%-28s %-12s %2s %22s %12s  %s\n", "method", "post", "l", "value", "tolerance", "flags");
  for (const auto& r : b.rows) {
    std::printf("%-28s %-12s %2d %22.15g %12.3g  %s\n", r.method.c_str(), r.postselection.c_str(), r.l, r.value,
                r.tolerance, r.flags.c_str());
    if (r.flags.find("disagree") != std::string::npos || r.flags.find("violated") != std::string::npos) ++bad;
  }
  std::printf("%d failing checks\n", bad);
  return bad ? 2 : 0;
}

int cmd_emit(const Options& o) {
  if (o.input.empty()) throw ValidationError("emit needs --input");
  std::ifstream in(o.input);
  if (!in) throw IoError("cannot read " + o.input);
  std::stringstream ss;
  ss << in.rdbuf();
  const ResultBundle b = bundle_from_json(ss.str());
  std::cout << emit(b, format_of(o.format), o.out_dir).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dwell and traversal times by weak measurement"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool scenario) {
    if (scenario) {
      sub->add_option("--config", o.config, "scenario config file")->check(CLI::ExistingFile);
      sub->add_option("--catalog", o.catalog, "catalog scenario a..e");
    }
    sub->add_option("--out-dir", o.out_dir, "output directory");
    sub->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* validate_cmd = app.add_subcommand("validate", "check a scenario config");
  auto* run_cmd = app.add_subcommand("run", "run every pipeline and write the bundle");
  auto* sweep_cmd = app.add_subcommand("sweep", "clock strength sweeps only");
  auto* compare_cmd = app.add_subcommand("compare", "print every check against its tolerance");
  auto* emit_cmd = app.add_subcommand("emit", "re-emit a JSON bundle");
  for (auto* s : {validate_cmd, run_cmd, sweep_cmd, compare_cmd}) common(s, true);
  common(emit_cmd, false);
  emit_cmd->add_option("--input", o.input, "bundle JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*validate_cmd) return cmd_validate(o);
    if (*run_cmd) return cmd_run(o);
    if (*sweep_cmd) return cmd_sweep(o);
    if (*compare_cmd) return cmd_compare(o);
    return cmd_emit(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.category()) {
      case ErrorCategory::validation: return 1;
      case ErrorCategory::numerical: return 2;
      case ErrorCategory::io: return 3;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
