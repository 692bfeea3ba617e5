#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gtnp/config.hpp"
#include "gtnp/models.hpp"
#include "gtnp/optim.hpp"
#include "gtnp/taskgen.hpp"

namespace gtnp {

struct MetricsRow {
  std::size_t iteration = 0;
  std::string split;
  double loglik = 0.0;
  double loglik_stderr = 0.0;
  double rmse = 0.0;
  double rmse_stderr = 0.0;
  double fpt_ms = 0.0;  // NaN when not measured
  std::size_t params = 0;

  bool operator==(const MetricsRow&) const = default;
};

/// Per-target predictive mean and variance, flattened (Nt, dy).
struct Prediction {
  std::vector<double> mean;
  std::vector<double> var;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Prediction predict(const Task& task) const = 0;
  virtual std::size_t num_params() const { return 0; }
};

/// Runs a model without recording a graph.
template <std::floating_point T>
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const Model<T>& model) : model_(model) {}
  Prediction predict(const Task& task) const override;
  std::size_t num_params() const override { return model_.params().count(); }

 private:
  const Model<T>& model_;
};

/// Exact SE-GP predictive. Non-positive lengthscale means "use the task metadata".
class GPOraclePredictor : public Predictor {
 public:
  GPOraclePredictor() = default;
  GPOraclePredictor(double lengthscale, double noise, double variance = 1.0)
      : lengthscale_(lengthscale), noise_(noise), variance_(variance) {}
  Prediction predict(const Task& task) const override;

 private:
  double lengthscale_ = 0.0, noise_ = 0.0, variance_ = 1.0;
};

class MultiSourceOraclePredictor : public Predictor {
 public:
  MultiSourceOraclePredictor(MultiSourceConfig cfg, bool use_a, bool use_b) : cfg_(cfg), use_a_(use_a), use_b_(use_b) {}
  Prediction predict(const Task& task) const override;

 private:
  MultiSourceConfig cfg_;
  bool use_a_, use_b_;
};

struct TaskRecord {
  std::size_t task = 0;
  double loglik = 0.0;  // mean over targets of sum_d log N
  double rmse = 0.0;
  std::size_t targets = 0;
};

struct EvalOptions {
  std::size_t fpt_batches = 20;  // 0 skips timing
  std::size_t fpt_batch_size = 8;
  bool normalized_errors = false;
};

struct EvalResult {
  MetricsRow row;
  std::vector<TaskRecord> tasks;
  std::vector<double> normalized_errors;  // (y - μ) / σ over every target
};

EvalResult evaluate(const Predictor& predictor, const std::vector<Task>& tasks, const EvalOptions& opts = {},
                    std::size_t iteration = 0, const std::string& split = "test");

/// Median wall time in ms of `batches` forward batches of `batch_size` tasks.
double median_forward_ms(const Predictor& predictor, const std::vector<Task>& tasks, std::size_t batches,
                         std::size_t batch_size);

struct PairedStat {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Mean and standard error of a.loglik - b.loglik over matched tasks.
PairedStat paired_difference(const std::vector<TaskRecord>& a, const std::vector<TaskRecord>& b);

struct TrainOptions {
  std::function<Task(std::size_t)> train_task;  // global task index -> task
  const std::vector<Task>* val_tasks = nullptr;
  std::string out_dir;  // empty: nothing written
  std::string resume;   // path of a resume state file
  std::function<void(const MetricsRow&)> on_metrics;
  nlohmann::json model_json;  // stored in checkpoints
};

struct TrainResult {
  std::vector<MetricsRow> history;
  double best_val_loglik = 0.0;
  std::size_t best_iteration = 0;
  std::size_t skipped_steps = 0;
};

/// Meta-training loop. On return the model holds the best-validation parameters.
template <std::floating_point T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const TrainOptions& opts);

/// Builds the task sources for an experiment.
std::vector<Task> validation_tasks(const ExperimentConfig& cfg);
std::function<Task(std::size_t)> training_task_source(const ExperimentConfig& cfg);

/// Full `train` command: trains, writes config.json, best.ckpt.json,
/// resume.json, metrics.csv and plots under out_dir.
TrainResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& resume = "");

/// Full `eval` command: metrics.csv, per_task.csv, errors.csv and plots.
EvalResult run_evaluation(const std::string& ckpt, const std::string& tasks_path, const std::string& out_dir,
                          const EvalOptions& opts = {});

}  // namespace gtnp
