#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tram/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"tram-lab: TRAM experiment driver"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "run an experiment from a config file");
  std::string config_path;
  std::string out_dir;
  std::string seeds_csv;
  bool check = false;
  run_cmd->add_option("--config", config_path, "experiment config file")->required();
  run_cmd->add_option("--seeds", seeds_csv, "comma-separated seed list (overrides file)");
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_flag("--check", check, "exit 2 if any acceptance threshold fails");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = tram::experiments::load_config(config_path);
    if (!seeds_csv.empty()) {
      cfg.seeds.clear();
      std::size_t pos = 0;
      while (pos < seeds_csv.size()) {
        std::size_t next = seeds_csv.find(',', pos);
        if (next == std::string::npos) next = seeds_csv.size();
        cfg.seeds.push_back(std::stoull(seeds_csv.substr(pos, next - pos)));
        pos = next + 1;
      }
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.check = check;

    auto bundle = tram::experiments::run(cfg);
    for (const auto& c : bundle.checks)
      std::printf("[%s] %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                  c.detail.c_str());
    std::printf("wrote %s/results.csv (%zu rows, %.0f ms)\n", cfg.out_dir.c_str(),
                bundle.rows.size(), bundle.wall_ms);
    if (check && !bundle.checks_ok()) return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
