#include <iostream>

#include "CLI11.hpp"
#include "gtnp/config.hpp"
#include "gtnp/emit.hpp"
#include "gtnp/harness.hpp"

using namespace gtnp;

int main(int argc, char** argv) {
  CLI::App app{"Gridded transformer neural processes"};
  app.require_subcommand(1);

  std::string config, out, resume, ckpt, tasks_path, csv;
  std::uint64_t seed = 0;
  std::vector<std::string> metrics;

  auto* train = app.add_subcommand("train", "meta-train a model");
  train->add_option("--config", config, "experiment JSON")->required();
  train->add_option("--out", out, "output directory")->required();
  auto* seed_opt = train->add_option("--seed", seed, "override train.seed");
  train->add_option("--resume", resume, "resume.json from an earlier run");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a task file");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--tasks", tasks_path, "task file")->required();
  eval->add_option("--out", out, "output directory")->required();

  auto* gen = app.add_subcommand("gen-tasks", "write the test task set of an experiment");
  gen->add_option("--config", config, "experiment JSON")->required();
  gen->add_option("--out", out, "task file")->required();
  gen->add_option("--csv", csv, "also export the tasks as CSV");

  auto* plot = app.add_subcommand("plot", "regenerate plots from metrics CSVs");
  plot->add_option("--metrics", metrics, "metrics.csv (repeatable)")->required();
  plot->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = load_experiment(config);
      if (*seed_opt) cfg.train.seed = seed;
      const auto res = run_experiment(cfg, out, resume);
      std::cout << "best val loglik " << res.best_val_loglik << " at iteration " << res.best_iteration << "\n";
    } else if (*eval) {
      const auto res = run_evaluation(ckpt, tasks_path, out);
      const auto& r = res.row;
      std::cout << "loglik " << r.loglik << " +- " << r.loglik_stderr << "  rmse " << r.rmse << " +- " << r.rmse_stderr
                << "  fpt " << r.fpt_ms << " ms  params " << r.params << "\n";
    } else if (*gen) {
      const auto cfg = load_experiment(config);
      std::vector<Task> tasks;
      for (std::size_t i = 0; i < cfg.data.count; ++i) tasks.push_back(cfg.data.make(cfg.data.seed, 2, i));
      write_tasks(out, tasks, cfg.data.generator_json());
      if (!csv.empty()) export_tasks_csv(csv, tasks);
      std::cout << "wrote " << tasks.size() << " tasks to " << out << "\n";
    } else if (*plot) {
      plot_metrics(metrics, out);
    }
  } catch (const gtnp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
