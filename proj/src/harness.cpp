#include "gtnp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>

#include "gtnp/checkpoint.hpp"
#include "gtnp/emit.hpp"

namespace gtnp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(ss / double(v.size() - 1) / double(v.size()));
  }
  return r;
}

TaskRecord score(const Task& task, const Prediction& p, std::size_t index, std::vector<double>* errors) {
  const auto& y = task.target.y;
  if (p.mean.size() != y.size() || p.var.size() != y.size()) {
    throw ConfigError("prediction has " + std::to_string(p.mean.size()) + " values for " + std::to_string(y.size()) +
                      " target outputs");
  }
  TaskRecord r;
  r.task = index;
  r.targets = task.target.size();
  r.loglik = gaussian_loglik(y, p.mean, p.var) * double(task.target.dy);
  double sq = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - p.mean[i];
    sq += e * e;
    if (errors) errors->push_back(e / std::sqrt(p.var[i]));
  }
  r.rmse = std::sqrt(sq / double(y.size()));
  return r;
}

template <std::floating_point T>
std::vector<std::vector<T>> snapshot(const ParamStore<T>& store) {
  std::vector<std::vector<T>> out;
  for (const auto& p : store.params()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <std::floating_point T>
void restore(ParamStore<T>& store, const std::vector<std::vector<T>>& values) {
  auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

nlohmann::json row_json(const MetricsRow& r) {
  return {{"iteration", r.iteration}, {"split", r.split},           {"loglik", r.loglik},
          {"loglik_stderr", r.loglik_stderr}, {"rmse", r.rmse},     {"rmse_stderr", r.rmse_stderr},
          {"fpt_ms", std::isnan(r.fpt_ms) ? nlohmann::json() : nlohmann::json(r.fpt_ms)}, {"params", r.params}};
}

MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  r.loglik = j.at("loglik").get<double>();
  r.loglik_stderr = j.at("loglik_stderr").get<double>();
  r.rmse = j.at("rmse").get<double>();
  r.rmse_stderr = j.at("rmse_stderr").get<double>();
  r.fpt_ms = j.at("fpt_ms").is_null() ? kNaN : j.at("fpt_ms").get<double>();
  r.params = j.at("params").get<std::size_t>();
  return r;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

template <std::floating_point T>
Prediction ModelPredictor<T>::predict(const Task& task) const {
  NoGradGuard guard;
  const auto pred = model_.forward(task);
  Prediction p;
  p.mean.assign(pred.mean.data().begin(), pred.mean.data().end());
  p.var.assign(pred.var.data().begin(), pred.var.data().end());
  return p;
}

Prediction GPOraclePredictor::predict(const Task& task) const {
  const auto post = lengthscale_ > 0 ? gp_posterior_oracle(task, lengthscale_, noise_, variance_) : gp_posterior_oracle(task);
  return {post.mean, post.var};
}

Prediction MultiSourceOraclePredictor::predict(const Task& task) const {
  const auto post = multisource_posterior_oracle(task, cfg_, use_a_, use_b_);
  return {post.mean, post.var};
}

double median_forward_ms(const Predictor& predictor, const std::vector<Task>& tasks, std::size_t batches,
                         std::size_t batch_size) {
  if (tasks.empty() || batches == 0 || batch_size == 0) return kNaN;
  std::vector<double> times;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t j = 0; j < batch_size; ++j) predictor.predict(tasks[(b * batch_size + j) % tasks.size()]);
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

EvalResult evaluate(const Predictor& predictor, const std::vector<Task>& tasks, const EvalOptions& opts,
                    std::size_t iteration, const std::string& split) {
  EvalResult res;
  std::vector<double> ll, rmse;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto rec = score(tasks[i], predictor.predict(tasks[i]), i, opts.normalized_errors ? &res.normalized_errors : nullptr);
    if (!std::isfinite(rec.loglik)) throw NumericError("non-finite log-likelihood on task " + std::to_string(i));
    ll.push_back(rec.loglik);
    rmse.push_back(rec.rmse);
    res.tasks.push_back(rec);
  }
  const auto l = mean_stderr(ll), r = mean_stderr(rmse);
  res.row = {iteration, split, l.mean, l.stderr_, r.mean, r.stderr_,
             median_forward_ms(predictor, tasks, opts.fpt_batches, opts.fpt_batch_size), predictor.num_params()};
  return res;
}

PairedStat paired_difference(const std::vector<TaskRecord>& a, const std::vector<TaskRecord>& b) {
  if (a.size() != b.size()) throw ContractError("paired_difference: record counts differ");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].task != b[i].task) throw ContractError("paired_difference: records are not matched");
    d.push_back(a[i].loglik - b[i].loglik);
  }
  const auto s = mean_stderr(d);
  return {s.mean, s.stderr_, d.size()};
}

template <std::floating_point T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (!opts.train_task) throw ContractError("train: no training task source");
  if (!opts.val_tasks || opts.val_tasks->empty()) throw ContractError("train: no validation tasks");
  auto& store = model.params();
  AdamW opt(cfg.optim);
  TrainResult res;
  res.best_val_loglik = -std::numeric_limits<double>::infinity();
  auto best = snapshot(store);
  std::size_t start = 0;

  if (!opts.resume.empty()) {
    std::ifstream in(opts.resume);
    if (!in) throw IoError("cannot open resume state '" + opts.resume + "'");
    nlohmann::json j;
    try {
      in >> j;
      params_from_json(j.at("best_params"), store);
      best = snapshot(store);
      params_from_json(j.at("params"), store);
      opt.state_from_json(j.at("optimizer"));
      start = j.at("iteration").get<std::size_t>();
      res.best_val_loglik = j.at("best_val_loglik").get<double>();
      res.best_iteration = j.at("best_iteration").get<std::size_t>();
      for (const auto& r : j.at("history")) res.history.push_back(row_from_json(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("resume state '" + opts.resume + "': " + e.what());
    }
  }

  const std::filesystem::path out(opts.out_dir);
  std::vector<double> train_ll, train_rmse;
  for (std::size_t it = start; it < cfg.iterations; ++it) {
    opt.config().lr = cfg.lr_at(it);
    store.zero_grad();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t index = it * cfg.batch_size + b;
      const Task task = opts.train_task(index);
      const auto pred = model.forward(task);
      const auto& t = task.target;
      auto y = Tensor<T>::from_vector({t.size(), t.dy}, std::vector<T>(t.y.begin(), t.y.end()));
      auto loss = cnp_loss(pred, y);
      if (!std::isfinite(double(loss.item()))) {
        throw NumericError("loss is not finite at iteration " + std::to_string(it) + " (task " + std::to_string(index) + ")");
      }
      scale(loss, T(1) / T(cfg.batch_size)).backward();
      train_ll.push_back(-double(loss.item()));
      double sq = 0;
      for (std::size_t i = 0; i < t.y.size(); ++i) sq += std::pow(t.y[i] - double(pred.mean.at(i)), 2);
      train_rmse.push_back(std::sqrt(sq / double(t.y.size())));
    }
    const auto rep = opt.step(store);
    if (!rep.skipped && !std::isfinite(rep.update_norm)) {
      throw NumericError("non-finite parameter update at iteration " + std::to_string(it));
    }

    if ((it + 1) % cfg.eval_every != 0 && it + 1 != cfg.iterations) continue;
    const auto l = mean_stderr(train_ll), r = mean_stderr(train_rmse);
    train_ll.clear();
    train_rmse.clear();
    MetricsRow train_row{it + 1, "train", l.mean, l.stderr_, r.mean, r.stderr_, kNaN, store.count()};
    auto val = evaluate(ModelPredictor<T>(model), *opts.val_tasks, EvalOptions{0, 8, false}, it + 1, "val").row;
    if (val.loglik > res.best_val_loglik) {
      res.best_val_loglik = val.loglik;
      res.best_iteration = it + 1;
      best = snapshot(store);
    }
    for (const auto& row : {train_row, val}) {
      res.history.push_back(row);
      if (opts.on_metrics) opts.on_metrics(row);
    }
    if (!opts.out_dir.empty()) {
      nlohmann::json state;
      state["iteration"] = it + 1;
      state["params"] = params_to_json(store);
      auto current = snapshot(store);
      restore(store, best);
      state["best_params"] = params_to_json(store);
      restore(store, current);
      state["optimizer"] = opt.state_to_json();
      state["best_val_loglik"] = res.best_val_loglik;
      state["best_iteration"] = res.best_iteration;
      state["history"] = nlohmann::json::array();
      for (const auto& h : res.history) state["history"].push_back(row_json(h));
      write_text((out / "resume.json").string(), state.dump());
      write_metrics_csv((out / "metrics.csv").string(), res.history);
    }
  }
  restore(store, best);
  res.skipped_steps = opt.skipped();
  if (!opts.out_dir.empty()) {
    save_checkpoint((out / "best.ckpt.json").string(), store, opts.model_json);
    write_metrics_csv((out / "metrics.csv").string(), res.history);
  }
  return res;
}

std::vector<Task> validation_tasks(const ExperimentConfig& cfg) {
  if (!cfg.data.val_file.empty()) return read_tasks(cfg.data.val_file);
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < cfg.train.val_tasks; ++i) tasks.push_back(cfg.data.make(cfg.data.seed, 1, i));
  return tasks;
}

std::function<Task(std::size_t)> training_task_source(const ExperimentConfig& cfg) {
  if (cfg.data.generator == "file") {
    auto pool = std::make_shared<std::vector<Task>>(read_tasks(cfg.data.train_file));
    if (pool->empty()) throw ConfigError("training file '" + cfg.data.train_file + "' holds no tasks");
    return [pool](std::size_t i) { return (*pool)[i % pool->size()]; };
  }
  if (cfg.train.pool_size > 0) {
    auto pool = std::make_shared<std::vector<Task>>();
    for (std::size_t i = 0; i < cfg.train.pool_size; ++i) pool->push_back(cfg.data.make(cfg.train.seed, 0, i));
    return [pool](std::size_t i) { return (*pool)[i % pool->size()]; };
  }
  const DataConfig data = cfg.data;
  const auto seed = cfg.train.seed;
  return [data, seed](std::size_t i) { return data.make(seed, 0, i); };
}

namespace {

template <std::floating_point T>
TrainResult run_typed(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& resume) {
  Model<T> model(cfg.model, cfg.train.seed);
  const auto val = validation_tasks(cfg);
  TrainOptions o;
  o.train_task = training_task_source(cfg);
  o.val_tasks = &val;
  o.out_dir = out_dir;
  o.resume = resume;
  o.model_json = model_to_json(cfg.model);
  o.on_metrics = [](const MetricsRow& r) {
    std::cout << "iter " << r.iteration << " " << r.split << " loglik " << r.loglik << " rmse " << r.rmse << std::endl;
  };
  return train(model, cfg.train, o);
}

}  // namespace

TrainResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& resume) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  write_text((std::filesystem::path(out_dir) / "config.json").string(), experiment_to_json(cfg).dump(2));
  auto res = cfg.train.dtype == "double" ? run_typed<double>(cfg, out_dir, resume) : run_typed<float>(cfg, out_dir, resume);
  plot_metrics({(std::filesystem::path(out_dir) / "metrics.csv").string()}, out_dir);
  return res;
}

namespace {

template <std::floating_point T>
EvalResult eval_typed(const nlohmann::json& ckpt, const std::vector<Task>& tasks, const EvalOptions& opts) {
  Model<T> model(model_from_json(ckpt.at("model")), 0);
  params_from_json(ckpt.at("params"), model.params());
  return evaluate(ModelPredictor<T>(model), tasks, opts, 0, "test");
}

}  // namespace

EvalResult run_evaluation(const std::string& ckpt_path, const std::string& tasks_path, const std::string& out_dir,
                          const EvalOptions& opts) {
  const auto ckpt = read_checkpoint(ckpt_path);
  const auto tasks = read_tasks(tasks_path);
  if (tasks.empty()) throw ConfigError("task file '" + tasks_path + "' holds no tasks");
  EvalOptions o = opts;
  o.normalized_errors = true;
  const auto dtype = ckpt.value("dtype", "float32");
  auto res = dtype == "float64" ? eval_typed<double>(ckpt, tasks, o) : eval_typed<float>(ckpt, tasks, o);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);
  write_metrics_csv((out / "metrics.csv").string(), {res.row});
  write_task_records_csv((out / "per_task.csv").string(), res.tasks);
  write_errors_csv((out / "errors.csv").string(), res.normalized_errors);
  plot_metrics({(out / "metrics.csv").string()}, out_dir);
  return res;
}

template class ModelPredictor<float>;
template class ModelPredictor<double>;
template TrainResult train(Model<float>&, const TrainConfig&, const TrainOptions&);
template TrainResult train(Model<double>&, const TrainConfig&, const TrainOptions&);

}  // namespace gtnp
