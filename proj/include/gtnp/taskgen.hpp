#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace gtnp {

/// Row-major inputs (n, dx) and outputs (n, dy).
struct PointSet {
  std::size_t dx = 1;
  std::size_t dy = 1;
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const { return dx ? x.size() / dx : 0; }
  void validate() const;
  bool operator==(const PointSet&) const = default;
};

struct TaskMeta {
  std::string generator;
  std::uint64_t seed = 0;
  double lengthscale = 0.0;
  double noise = 0.0;
  bool operator==(const TaskMeta&) const = default;
};

struct Task {
  std::vector<PointSet> sources;  // context, one entry per source
  PointSet target;
  TaskMeta meta;

  std::size_t context_size() const;
  void validate() const;
  bool operator==(const Task&) const = default;
};

struct GPTaskConfig {
  std::size_t dx = 1;
  double lo = -6.0;
  double hi = 6.0;
  double lengthscale = 0.5;
  double noise = 0.1;
  double variance = 1.0;
  std::size_t nc_min = 64;
  std::size_t nc_max = 256;
  std::size_t nt = 64;
  std::size_t exact_cap = 4096;

  void validate() const;
};

/// Independent stream seed derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

/// k(a, b) = variance * exp(-|a - b|^2 / (2 l^2)).
double se_kernel(const double* a, const double* b, std::size_t dx, double lengthscale, double variance);

/// In-place lower Cholesky factor of a row-major n x n matrix, retrying with
/// diagonal jitter 1e-8, 1e-7, ..., 1e-4. Returns the jitter that succeeded.
double cholesky_with_jitter(std::vector<double>& a, std::size_t n);

/// Exact joint draw of f at xs (n, dx). Coincident inputs share one value.
std::vector<double> sample_gp_function(const std::vector<double>& xs, std::size_t dx, double lengthscale,
                                       double variance, std::mt19937_64& rng);

Task sample_gp_task(const GPTaskConfig& cfg, std::uint64_t seed);

struct GPPosterior {
  std::vector<double> mean;
  std::vector<double> var;  // predictive variance of y, including noise
  double loglik = 0.0;      // mean per-point log density of the task targets
};

/// Exact single-output SE-GP predictive at the targets of a one-source task.
GPPosterior gp_posterior_oracle(const Task& task, double lengthscale, double noise, double variance = 1.0);
/// Same using the lengthscale/noise stored in the task metadata.
GPPosterior gp_posterior_oracle(const Task& task);

struct MultiSourceConfig {
  double lo = -6.0;
  double hi = 6.0;
  std::size_t grid_points_a = 24;
  std::size_t nb_min = 4;
  std::size_t nb_max = 32;
  std::size_t nt = 64;
  double lengthscale = 0.5;
  double correlation = 0.8;
  double noise_a = 0.1;
  double noise_b = 0.1;
  double variance = 1.0;

  void validate() const;
};

/// Noise-free (f_A, f_B) at shared 1-D inputs: f_s = sqrt(rho) g + sqrt(1 - rho) h_s
/// with g, h_A, h_B independent SE-GP draws.
std::pair<std::vector<double>, std::vector<double>> sample_correlated_outputs(const std::vector<double>& xs,
                                                                              const MultiSourceConfig& cfg,
                                                                              std::mt19937_64& rng);

/// Source 0 = A on the regular grid of cell centres, source 1 = B scattered;
/// targets are held-out B observations.
Task sample_multisource_task(const MultiSourceConfig& cfg, std::uint64_t seed);

/// Exact two-output predictive at the B targets. `use_a` / `use_b` select
/// which context sources are conditioned on.
GPPosterior multisource_posterior_oracle(const Task& task, const MultiSourceConfig& cfg, bool use_a = true,
                                         bool use_b = true);

/// Mean log-density of y under independent N(mean, var).
double gaussian_loglik(const std::vector<double>& y, const std::vector<double>& mean, const std::vector<double>& var);

// ---------------------------------------------------------------------------
// Task files: "GTNPTASK", u32 header length, JSON header, then records of
// u64 payload length + payload. All integers and reals little-endian.

inline constexpr int kTaskSchemaVersion = 1;

void write_tasks(const std::string& path, const std::vector<Task>& tasks, const nlohmann::json& generator);
std::vector<Task> read_tasks(const std::string& path, nlohmann::json* header = nullptr);

class TaskReader {
 public:
  explicit TaskReader(const std::string& path);
  const nlohmann::json& header() const { return header_; }
  /// Reads the next task; false at a clean end of file.
  bool next(Task& task);

 private:
  std::string path_;
  std::ifstream in_;
  nlohmann::json header_;
};

std::vector<std::uint8_t> encode_task(const Task& task);
Task decode_task(const std::uint8_t* data, std::size_t size);

/// One row per point: task_id, role, source_id, x0.., y0...
void export_tasks_csv(const std::string& path, const std::vector<Task>& tasks);

}  // namespace gtnp
