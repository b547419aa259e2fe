#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gkedm {

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double l_task = 0.0;
  double l_a = 0.0;
  double l_vr = 0.0;
  double l_kd = 0.0;
  double l_lsp = 0.0;
  double l_fitnet = 0.0;
  double val_metric = 0.0;
};

// One training run. Serialized byte-identically for identical runs;
// wall_time_s is in-memory only and never written to files.
struct TrainReport {
  std::string model;
  std::string dataset;
  std::string method;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::size_t param_count = 0;
  std::optional<double> baseline_metric;
  double final_metric = 0.0;
  int best_epoch = 0;
  std::vector<EpochRow> rows;
  std::string config_echo;  // effective config, JSON text
  double wall_time_s = 0.0;

  std::optional<double> improvement() const {
    if (!baseline_metric) return std::nullopt;
    return final_metric - *baseline_metric;
  }
};

// shortest round-trip decimal form (std::to_chars)
std::string fmt_double(double v);
double parse_double(const std::string& s);

// full per-run report; .json writes every field, .csv writes commented
// metadata plus one row per epoch
void save_report(const TrainReport& r, const std::string& path);
TrainReport load_report_json(const std::string& path);

enum class ReportFormat { kCsv, kJson };

// summary table across runs: model, dataset, params_M, baseline_metric,
// method, alpha, final_metric, improvement, seed
void report_emit(const std::vector<TrainReport>& reports, const std::string& path,
                 ReportFormat format);
// reads either a summary file (csv or json) or a full report json
std::vector<TrainReport> read_reports(const std::string& path);

void write_text_atomic(const std::string& path, const std::string& contents);

}  // namespace gkedm
