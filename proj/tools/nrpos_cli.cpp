// Command-line front end: run Monte-Carlo positioning experiments and
// summarize result files.
//
//   nrpos run --config exp.json --out outdir [--seed N] [--trials N]
//             [--technique NAME]
//   nrpos summarize --in results.csv
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrpos/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

int run_command(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::optional<int> trials,
                const std::string& technique) {
  nlohmann::json doc;
  {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot open config: " << config_path << "\n";
      return kExitIo;
    }
    try {
      doc = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
      return kExitConfig;
    }
  }
  nrpos::ExperimentConfig cfg;
  try {
    cfg = nrpos::load_experiment_config(doc,
                                        fs::path(config_path).parent_path());
    if (seed.has_value()) cfg.seed_override = *seed;
    if (trials.has_value()) {
      if (*trials < 1) throw nrpos::ParseError("trials must be >= 1");
      cfg.trials = *trials;
    }
    if (!technique.empty()) cfg.technique = nrpos::parse_technique(technique);
  } catch (const std::runtime_error& e) {
    // covers ParseError/ValidationError and missing scenario files
    const bool io = std::string(e.what()).find("cannot open") != std::string::npos;
    std::cerr << "error: " << e.what() << "\n";
    return io ? kExitIo : kExitConfig;
  }

  const fs::path out = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
  if (out.empty()) {
    std::cerr << "error: no output directory (give --out or config 'out')\n";
    return kExitConfig;
  }

  std::vector<nrpos::ResultRow> rows;
  try {
    rows = nrpos::run_experiment(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fs::create_directories(out);
    nrpos::write_results_csv(rows, (out / "results.csv").string());
    const nrpos::SummaryStats stats = nrpos::summarize(rows);
    std::ofstream sf(out / "summary.json", std::ios::binary);
    if (!sf) throw std::runtime_error("cannot open summary.json for writing");
    sf << nrpos::summary_to_json(stats).dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  const nrpos::SummaryStats stats = nrpos::summarize(rows);
  std::cout << nrpos::to_string(cfg.technique) << ": " << rows.size()
            << " trials, p90 horizontal error "
            << stats.p90_m << " m, convergence "
            << 100.0 * stats.convergence_rate << "%\n";
  return 0;
}

int summarize_command(const std::string& in_path) {
  std::vector<nrpos::ResultRow> rows;
  try {
    rows = nrpos::read_results_csv(in_path);
  } catch (const nrpos::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  try {
    std::cout << nrpos::summary_to_json(nrpos::summarize(rows)).dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NR positioning measurement simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, technique, in_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;

  CLI::App* run = app.add_subcommand("run", "run a Monte-Carlo experiment");
  run->add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--trials", trials, "override the trial count");
  run->add_option("--technique", technique, "override the technique");

  CLI::App* summ = app.add_subcommand("summarize", "summarize a results.csv");
  summ->add_option("--in", in_path, "results.csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (run->parsed()) {
    return run_command(config_path, out_dir, seed, trials, technique);
  }
  return summarize_command(in_path);
}
