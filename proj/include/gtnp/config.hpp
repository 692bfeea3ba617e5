#pragma once

#include <cstdint>
#include <string>

#include "gtnp/models.hpp"
#include "gtnp/optim.hpp"
#include "gtnp/taskgen.hpp"
#include "json.hpp"

namespace gtnp {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch_size = 8;
  AdamWConfig optim;  // lr 5e-4, clip 0.5 by default
  LrSchedule schedule = LrSchedule::constant;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1000;
  std::size_t val_tasks = 512;
  // > 0: draw training tasks from a fixed pool of this many tasks
  std::size_t pool_size = 0;
  std::string dtype = "float";

  void validate() const;
  /// Learning rate at a given iteration.
  double lr_at(std::size_t iteration) const;
};

struct DataConfig {
  std::string generator = "gp";  // gp | multisource | file
  GPTaskConfig gp;
  MultiSourceConfig multisource;
  std::string train_file;  // generator = file
  std::string val_file;
  std::size_t count = 512;  // tasks written by gen-tasks
  std::uint64_t seed = 1;   // base seed of the validation/test streams

  void validate() const;
  /// Generates one task; stream 0 = train, 1 = validation, 2 = test.
  Task make(std::uint64_t base, std::uint64_t stream, std::uint64_t index) const;
  nlohmann::json generator_json() const;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::string& path);

/// The {model, grid} pair stored in checkpoints.
nlohmann::json model_to_json(const ModelConfig& cfg);
ModelConfig model_from_json(const nlohmann::json& j);

}  // namespace gtnp
