#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tram::experiments {

struct ExperimentConfig {
  std::string experiment;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "out";
  bool check = false;
  std::map<std::string, std::string> kv;  // flat dotted keys

  std::string get(const std::string& key, const std::string& dflt) const;
  double get_d(const std::string& key, double dflt) const;
  int get_i(const std::string& key, int dflt) const;
  std::vector<double> get_list(const std::string& key,
                               const std::vector<double>& dflt) const;
};

// Flat "key = value" lines; '#' comments; experiment/seeds/out are recognized keys.
ExperimentConfig load_config(const std::string& path);

struct ResultRow {
  std::string predictor;
  std::uint64_t seed = 0;
  double nll = 0.0;
  double accuracy = 0.0;
  double rmse_to_reference = 0.0;
  double wall_ms = 0.0;
};

struct CheckItem {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ResultBundle {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  // Aggregates keyed "predictor/metric" -> (mean, std).
  std::map<std::string, std::pair<double, double>> aggregates;
  // plotdata file name -> TSV content.
  std::vector<std::pair<std::string, std::string>> plot_files;
  // results.csv content when the experiment uses a non-RunResult schema
  // (linear_risk emits RiskEstimate rows).
  std::string custom_csv;
  std::vector<CheckItem> checks;
  double wall_ms = 0.0;

  bool checks_ok() const;
};

// Executes the experiment across seeds (concurrency capped by TRAMLAB_THREADS)
// and writes results.csv, results.json, plotdata/*.tsv under config.out_dir.
ResultBundle run(const ExperimentConfig& config);

// Pure compute, no file output (run() calls this then writes).
ResultBundle run_in_memory(const ExperimentConfig& config);

void write_outputs(const ResultBundle& bundle);

}  // namespace tram::experiments
