#include "gtnp/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace gtnp {

namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("'" + path_ + "." + key + "': " + e.what());
    }
  }

  template <typename Parse, typename V>
  void get_enum(const std::string& key, V& out, Parse parse) {
    std::string s;
    if (!j_.contains(key)) return;
    get(key, s);
    out = parse(s);
  }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }
  bool has(const std::string& key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown config key '" + path_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_grid(Section s, GridSpec& g) {
  s.get("counts", g.counts);
  s.get("lo", g.lo);
  s.get("hi", g.hi);
  std::vector<bool> wrap;
  if (s.has("wrap")) {
    s.get("wrap", wrap);
    g.wrap = wrap;
  }
  s.get("spherical", g.spherical);
  s.finish();
  if (g.wrap.empty()) g.wrap.assign(g.counts.size(), false);
}

json grid_json(const GridSpec& g) {
  return {{"counts", g.counts}, {"lo", g.lo}, {"hi", g.hi}, {"wrap", g.wrap}, {"spherical", g.spherical}};
}

void read_model(Section s, ModelConfig& m) {
  s.get_enum("variant", m.variant, parse_model_variant);
  s.get("dx", m.dx);
  s.get("dy", m.dy);
  s.get("num_sources", m.num_sources);
  s.get("use_sources", m.use_sources);
  if (s.has("embed")) {
    Section e = s.sub("embed");
    e.get_enum("kind", m.embed.kind, parse_embed_kind);
    e.get("num_wavelengths", m.embed.fourier.num_wavelengths);
    e.get("lambda_min", m.embed.fourier.lambda_min);
    e.get("lambda_max", m.embed.fourier.lambda_max);
    e.get("include_raw", m.embed.include_raw);
    e.get("num_legendre", m.embed.spherical.num_legendre);
    e.finish();
  }
  s.get("dz", m.attn.dz);
  s.get("heads", m.attn.heads);
  s.get("dv", m.attn.dv);
  s.get("dqk", m.attn.dqk);
  s.get("mlp_hidden", m.attn.mlp_hidden);
  s.get_enum("encoder", m.encoder, parse_encoder_kind);
  s.get_enum("fusion", m.fusion, parse_fusion_mode);
  s.get_enum("processor", m.processor, parse_processor_kind);
  s.get("processor_layers", m.processor_layers);
  if (s.has("window")) {
    Section w = s.sub("window");
    w.get("window", m.window.window);
    w.get("shift", m.window.shift);
    std::vector<bool> roll;
    w.get("roll", roll);
    m.window.roll = roll;
    w.finish();
  }
  s.get("patch", m.patch);
  s.get_enum("decoder", m.decoder, parse_decoder_kind);
  s.get("decoder_k", m.decoder_k);
  s.get("num_pseudo_tokens", m.num_pseudo_tokens);
  s.get("pt_layers", m.pt_layers);
  s.get("min_variance", m.min_variance);
  s.get_enum("floor", m.floor, parse_variance_floor);
  s.finish();
  if (!m.window.window.empty() && m.window.roll.empty()) m.window.roll.assign(m.window.window.size(), false);
}

json model_section(const ModelConfig& m) {
  json j{{"variant", to_string(m.variant)},
         {"dx", m.dx},
         {"dy", m.dy},
         {"num_sources", m.num_sources},
         {"use_sources", m.use_sources},
         {"embed",
          {{"kind", to_string(m.embed.kind)},
           {"num_wavelengths", m.embed.fourier.num_wavelengths},
           {"lambda_min", m.embed.fourier.lambda_min},
           {"lambda_max", m.embed.fourier.lambda_max},
           {"include_raw", m.embed.include_raw},
           {"num_legendre", m.embed.spherical.num_legendre}}},
         {"dz", m.attn.dz},
         {"heads", m.attn.heads},
         {"dv", m.attn.dv},
         {"dqk", m.attn.dqk},
         {"mlp_hidden", m.attn.mlp_hidden},
         {"encoder", to_string(m.encoder)},
         {"fusion", to_string(m.fusion)},
         {"processor", to_string(m.processor)},
         {"processor_layers", m.processor_layers},
         {"patch", m.patch},
         {"decoder", to_string(m.decoder)},
         {"decoder_k", m.decoder_k},
         {"num_pseudo_tokens", m.num_pseudo_tokens},
         {"pt_layers", m.pt_layers},
         {"min_variance", m.min_variance},
         {"floor", to_string(m.floor)}};
  if (!m.window.window.empty()) {
    j["window"] = {{"window", m.window.window}, {"shift", m.window.shift}, {"roll", m.window.roll}};
  }
  return j;
}

void read_train(Section s, TrainConfig& t) {
  s.get("iterations", t.iterations);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.optim.lr);
  s.get("grad_clip", t.optim.clip);
  s.get("beta1", t.optim.beta1);
  s.get("beta2", t.optim.beta2);
  s.get("eps", t.optim.eps);
  s.get("weight_decay", t.optim.weight_decay);
  s.get_enum("schedule", t.schedule, [](const std::string& v) {
    if (v == "constant") return LrSchedule::constant;
    if (v == "cosine") return LrSchedule::cosine;
    throw ConfigError("unknown lr schedule '" + v + "' (expected constant or cosine)");
  });
  s.get("seed", t.seed);
  s.get("eval_every", t.eval_every);
  s.get("val_tasks", t.val_tasks);
  s.get("pool_size", t.pool_size);
  s.get("dtype", t.dtype);
  s.finish();
}

json train_section(const TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"batch_size", t.batch_size},
          {"lr", t.optim.lr},
          {"grad_clip", t.optim.clip},
          {"beta1", t.optim.beta1},
          {"beta2", t.optim.beta2},
          {"eps", t.optim.eps},
          {"weight_decay", t.optim.weight_decay},
          {"schedule", t.schedule == LrSchedule::constant ? "constant" : "cosine"},
          {"seed", t.seed},
          {"eval_every", t.eval_every},
          {"val_tasks", t.val_tasks},
          {"pool_size", t.pool_size},
          {"dtype", t.dtype}};
}

json gp_json(const GPTaskConfig& g) {
  return {{"dx", g.dx},         {"lo", g.lo},         {"hi", g.hi},           {"lengthscale", g.lengthscale},
          {"noise", g.noise},   {"variance", g.variance}, {"nc_min", g.nc_min}, {"nc_max", g.nc_max},
          {"nt", g.nt},         {"exact_cap", g.exact_cap}};
}

json ms_json(const MultiSourceConfig& m) {
  return {{"lo", m.lo},
          {"hi", m.hi},
          {"grid_points_a", m.grid_points_a},
          {"nb_min", m.nb_min},
          {"nb_max", m.nb_max},
          {"nt", m.nt},
          {"lengthscale", m.lengthscale},
          {"correlation", m.correlation},
          {"noise_a", m.noise_a},
          {"noise_b", m.noise_b},
          {"variance", m.variance}};
}

void read_data(Section s, DataConfig& d) {
  s.get("generator", d.generator);
  if (s.has("gp")) {
    Section g = s.sub("gp");
    g.get("dx", d.gp.dx);
    g.get("lo", d.gp.lo);
    g.get("hi", d.gp.hi);
    g.get("lengthscale", d.gp.lengthscale);
    g.get("noise", d.gp.noise);
    g.get("variance", d.gp.variance);
    g.get("nc_min", d.gp.nc_min);
    g.get("nc_max", d.gp.nc_max);
    g.get("nt", d.gp.nt);
    g.get("exact_cap", d.gp.exact_cap);
    g.finish();
  }
  if (s.has("multisource")) {
    Section m = s.sub("multisource");
    auto& c = d.multisource;
    m.get("lo", c.lo);
    m.get("hi", c.hi);
    m.get("grid_points_a", c.grid_points_a);
    m.get("nb_min", c.nb_min);
    m.get("nb_max", c.nb_max);
    m.get("nt", c.nt);
    m.get("lengthscale", c.lengthscale);
    m.get("correlation", c.correlation);
    m.get("noise_a", c.noise_a);
    m.get("noise_b", c.noise_b);
    m.get("variance", c.variance);
    m.finish();
  }
  s.get("train_file", d.train_file);
  s.get("val_file", d.val_file);
  s.get("count", d.count);
  s.get("seed", d.seed);
  s.finish();
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0) throw ConfigError("train.iterations must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (val_tasks == 0) throw ConfigError("train.val_tasks must be positive");
  if (dtype != "float" && dtype != "double") throw ConfigError("train.dtype must be float or double");
  optim.validate();
}

double TrainConfig::lr_at(std::size_t iteration) const {
  if (schedule == LrSchedule::constant) return optim.lr;
  const double frac = std::min(1.0, double(iteration) / double(iterations));
  return 0.5 * optim.lr * (1 + std::cos(std::numbers::pi * frac));
}

void DataConfig::validate() const {
  if (generator == "gp") {
    gp.validate();
  } else if (generator == "multisource") {
    multisource.validate();
  } else if (generator == "file") {
    if (train_file.empty()) throw ConfigError("data.generator = file needs data.train_file");
  } else {
    throw ConfigError("unknown data generator '" + generator + "' (expected gp, multisource or file)");
  }
  if (count == 0) throw ConfigError("data.count must be positive");
}

Task DataConfig::make(std::uint64_t base, std::uint64_t stream, std::uint64_t index) const {
  const auto seed = derive_seed(base, stream, index);
  if (generator == "gp") return sample_gp_task(gp, seed);
  if (generator == "multisource") return sample_multisource_task(multisource, seed);
  throw ConfigError("data generator '" + generator + "' cannot synthesize tasks");
}

nlohmann::json DataConfig::generator_json() const {
  json j{{"generator", generator}, {"seed", seed}};
  if (generator == "gp") j["gp"] = gp_json(gp);
  if (generator == "multisource") j["multisource"] = ms_json(multisource);
  return j;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  const std::size_t task_dx = data.generator == "gp" ? data.gp.dx : 1;
  if (data.generator != "file" && task_dx != model.dx) {
    throw ConfigError("data produces " + std::to_string(task_dx) + "-D inputs but the model expects " +
                      std::to_string(model.dx));
  }
  const std::size_t sources = data.generator == "multisource" ? 2 : 1;
  if (data.generator != "file" && sources != model.num_sources) {
    throw ConfigError("data produces " + std::to_string(sources) + " sources but the model expects " +
                      std::to_string(model.num_sources));
  }
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  Section root(j, "config");
  if (root.has("grid")) read_grid(root.sub("grid"), cfg.model.grid);
  if (root.has("model")) read_model(root.sub("model"), cfg.model);
  if (root.has("train")) read_train(root.sub("train"), cfg.train);
  if (root.has("data")) read_data(root.sub("data"), cfg.data);
  root.finish();
  cfg.validate();
  return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  json j = model_to_json(cfg.model);
  j["train"] = train_section(cfg.train);
  json d{{"generator", cfg.data.generator},
         {"gp", gp_json(cfg.data.gp)},
         {"multisource", ms_json(cfg.data.multisource)},
         {"train_file", cfg.data.train_file},
         {"val_file", cfg.data.val_file},
         {"count", cfg.data.count},
         {"seed", cfg.data.seed}};
  j["data"] = d;
  return j;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  return experiment_from_json(j);
}

nlohmann::json model_to_json(const ModelConfig& cfg) {
  json j{{"model", model_section(cfg)}};
  if (cfg.variant == ModelVariant::gridded_tnp) j["grid"] = grid_json(cfg.grid);
  return j;
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  Section root(j, "checkpoint.model");
  if (root.has("grid")) read_grid(root.sub("grid"), cfg.grid);
  if (root.has("model")) read_model(root.sub("model"), cfg);
  root.finish();
  cfg.validate();
  return cfg;
}

}  // namespace gtnp
