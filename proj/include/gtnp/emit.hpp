#pragma once

#include <string>
#include <vector>

#include "gtnp/harness.hpp"

namespace gtnp {

inline constexpr const char* kMetricsHeader = "iteration,split,loglik,loglik_stderr,rmse,rmse_stderr,fpt_ms,params";

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

void write_task_records_csv(const std::string& path, const std::vector<TaskRecord>& records);
void write_errors_csv(const std::string& path, const std::vector<double>& errors);

struct LabelledMetrics {
  std::string label;
  std::vector<MetricsRow> rows;
};

/// Test log-lik against forward-pass time, one labelled point per series
/// (its last row with a measured FPT).
std::string scatter_svg(const std::vector<LabelledMetrics>& series);
/// Validation log-lik against iteration, one line per series.
std::string learning_curve_svg(const std::vector<LabelledMetrics>& series);

/// Reads each CSV (label = parent directory name, else file stem) and writes
/// scatter.svg and learning_curve.svg into out_dir.
void plot_metrics(const std::vector<std::string>& csv_paths, const std::string& out_dir);

}  // namespace gtnp
