// flobloch: command-line front end.
//
//   flobloch <bands|evolve-reduced|evolve-physical|instrument> --config c.json [--out dir]
//   flobloch sweep --config sweep.json [--out dir] [--parallelism k]
//
// Exit status: 0 success, 1 run or I/O failure (including any failed sweep
// row), 2 bad command line or config.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "flobloch/flobloch.hpp"

namespace {

using namespace flobloch;

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string("malformed JSON: ") + e.what());
  }
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Parse:
    case ErrorKind::Validation:
    case ErrorKind::Configuration: return 2;
    default: return 1;
  }
}

int effective_parallelism(int flag) {
  if (const char* env = std::getenv("FLOBLOCH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw Error(ErrorKind::Configuration, std::string("FLOBLOCH_THREADS must be a positive integer, got \"") + env + "\"");
    return static_cast<int>(v);
  }
  return flag;
}

int run_single(Mode mode, const std::string& config, const std::string& out) {
  const ScenarioConfig c = parse_config(slurp(config), mode);
  const fs::path dir = out.empty() ? fs::path(c.output_dir) : fs::path(out);
  const RunResult r = run_scenario(c, dir);
  for (const auto& f : r.files) std::cout << (dir / f).string() << '\n';
  return 0;
}

int run_sweep(const std::string& config, const std::string& out, int parallelism) {
  const std::vector<json> docs = expand_sweep(parse_json(slurp(config)));
  const fs::path root = out.empty() ? fs::path("sweep_out") : fs::path(out);
  const std::vector<SweepRow> rows = sweep(docs, effective_parallelism(parallelism), root);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + root.string() + ": " + ec.message());
  write_file_atomic(root / "summary.csv", sweep_summary_csv(rows));
  std::cout << (root / "summary.csv").string() << '\n';
  int failed = 0;
  for (const auto& row : rows)
    if (!row.ok) {
      ++failed;
      std::cerr << "run " << row.index << (row.name.empty() ? "" : " (" + row.name + ")") << ": " << row.message << '\n';
    }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Floquet-Bloch oscillation simulator"};
  app.require_subcommand(1);
  std::string config, out;
  int parallelism = 1;

  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON config file")->required();
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--parallelism", parallelism, "concurrent runs (sweep)")->check(CLI::PositiveNumber);
    return sub;
  };
  auto* bands = add("bands", "Bloch bands of the reduced model");
  auto* red = add("evolve-reduced", "wavepacket on the reduced phase lattice");
  auto* phys = add("evolve-physical", "driven and kicked wavepacket in the well");
  auto* inst = add("instrument", "Bloch period to instrument reading");
  auto* sw = add("sweep", "many configs, summary table in input order");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sw->parsed()) return run_sweep(config, out, parallelism);
    if (bands->parsed()) return run_single(Mode::Bands, config, out);
    if (red->parsed()) return run_single(Mode::EvolveReduced, config, out);
    if (phys->parsed()) return run_single(Mode::EvolvePhysical, config, out);
    if (inst->parsed()) return run_single(Mode::Instrument, config, out);
  } catch (const Error& e) {
    std::cerr << "flobloch: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "flobloch: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
