#include "gtnp/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace gtnp {

namespace {

template <std::floating_point T>
Tensor<T> to_tensor(Shape shape, const std::vector<double>& v) {
  return Tensor<T>::from_vector(std::move(shape), std::vector<T>(v.begin(), v.end()));
}

template <std::floating_point T>
Tensor<T> as_rank3(const Tensor<T>& z) {
  return reshape(z, {1, z.dim(0), z.dim(1)});
}

template <std::floating_point T>
Tensor<T> as_rank2(const Tensor<T>& z) {
  return reshape(z, {z.dim(1), z.dim(2)});
}

}  // namespace

ModelVariant parse_model_variant(const std::string& s) {
  if (s == "cnp") return ModelVariant::cnp;
  if (s == "pt_tnp") return ModelVariant::pt_tnp;
  if (s == "gridded_tnp") return ModelVariant::gridded_tnp;
  throw ConfigError("unknown model variant '" + s + "' (expected cnp, pt_tnp or gridded_tnp)");
}

ProcessorKind parse_processor_kind(const std::string& s) {
  if (s == "none") return ProcessorKind::none;
  if (s == "vit") return ProcessorKind::vit;
  if (s == "swin") return ProcessorKind::swin;
  throw ConfigError("unknown processor '" + s + "' (expected none, vit or swin)");
}

EmbedKind parse_embed_kind(const std::string& s) {
  if (s == "identity") return EmbedKind::identity;
  if (s == "fourier") return EmbedKind::fourier;
  if (s == "spherical") return EmbedKind::spherical;
  throw ConfigError("unknown embedding '" + s + "' (expected identity, fourier or spherical)");
}

VarianceFloor parse_variance_floor(const std::string& s) {
  if (s == "sigma") return VarianceFloor::sigma;
  if (s == "variance") return VarianceFloor::variance;
  throw ConfigError("unknown variance floor '" + s + "' (expected sigma or variance)");
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::cnp: return "cnp";
    case ModelVariant::pt_tnp: return "pt_tnp";
    case ModelVariant::gridded_tnp: return "gridded_tnp";
  }
  return "?";
}

std::string to_string(ProcessorKind p) {
  switch (p) {
    case ProcessorKind::none: return "none";
    case ProcessorKind::vit: return "vit";
    case ProcessorKind::swin: return "swin";
  }
  return "?";
}

std::string to_string(EmbedKind e) {
  switch (e) {
    case EmbedKind::identity: return "identity";
    case EmbedKind::fourier: return "fourier";
    case EmbedKind::spherical: return "spherical";
  }
  return "?";
}

std::string to_string(VarianceFloor f) { return f == VarianceFloor::sigma ? "sigma" : "variance"; }

void EmbedConfig::validate(std::size_t dx) const {
  if (kind == EmbedKind::fourier) fourier.validate();
  if (kind == EmbedKind::spherical) {
    spherical.validate();
    if (dx < 2) throw ConfigError("spherical embedding needs at least 2 input dims (lat, lon)");
  }
}

std::size_t EmbedConfig::width(std::size_t dx) const {
  switch (kind) {
    case EmbedKind::identity: return dx;
    case EmbedKind::fourier: return dx * (fourier.width() + (include_raw ? 1 : 0));
    case EmbedKind::spherical: return spherical.width() + (dx - 2);
  }
  return dx;
}

std::vector<double> embed_inputs(const std::vector<double>& x, std::size_t dx, const EmbedConfig& cfg) {
  if (cfg.kind == EmbedKind::identity) return x;
  const std::size_t n = x.size() / dx, w = cfg.width(dx);
  std::vector<double> out(n * w);
  if (cfg.kind == EmbedKind::fourier) {
    const auto lambdas = cfg.fourier.wavelengths();
    const std::size_t fw = cfg.fourier.width(), per = fw + (cfg.include_raw ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dx; ++d) {
        double* o = out.data() + i * w + d * per;
        if (cfg.include_raw) *o++ = x[i * dx + d];
        fourier_embed_into(x[i * dx + d], cfg.fourier, lambdas, o);
      }
    }
    return out;
  }
  const std::size_t sw = cfg.spherical.width();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * w;
    spherical_embed_into(x[i * dx], x[i * dx + 1], cfg.spherical, o);
    for (std::size_t d = 2; d < dx; ++d) o[sw + d - 2] = x[i * dx + d];
  }
  return out;
}

void ModelConfig::validate() const {
  if (dx == 0 || dy == 0) throw ConfigError("model needs positive input and output dims");
  if (num_sources == 0) throw ConfigError("model needs at least one source");
  std::set<std::size_t> seen;
  for (auto s : use_sources) {
    if (s >= num_sources) throw ConfigError("use_sources entry " + std::to_string(s) + " is out of range");
    if (!seen.insert(s).second) throw ConfigError("use_sources lists source " + std::to_string(s) + " twice");
  }
  embed.validate(dx);
  attn.validate();
  if (min_variance < 0) throw ConfigError("min_variance must be non-negative");
  const bool gridded = variant == ModelVariant::gridded_tnp;
  if (!gridded && (!window.window.empty() || !patch.empty())) {
    throw ConfigError("window/patch settings only apply to the gridded TNP");
  }
  if (variant == ModelVariant::pt_tnp && num_pseudo_tokens == 0) throw ConfigError("PT-TNP needs M >= 1");
  if (!gridded) return;
  grid.validate();
  if (grid.dims() != dx) {
    throw ConfigError("grid has " + std::to_string(grid.dims()) + " dims but inputs have " + std::to_string(dx));
  }
  if (processor != ProcessorKind::swin && !window.window.empty()) throw ConfigError("window spec needs the swin processor");
  if (processor != ProcessorKind::vit && !patch.empty()) throw ConfigError("patch encoding needs the vit processor");
  if (processor == ProcessorKind::swin) window.validate(grid);
  if (!patch.empty()) grid.coarsen(patch);
  if (decoder_k == 0) throw ConfigError("decoder k must be >= 1");
}

std::vector<std::size_t> ModelConfig::active_sources() const {
  if (!use_sources.empty()) return use_sources;
  std::vector<std::size_t> all(num_sources);
  for (std::size_t s = 0; s < num_sources; ++s) all[s] = s;
  return all;
}

template <std::floating_point T>
void check_finite(const Tensor<T>& t, const char* stage) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t.at(i))) {
      throw NumericError(std::string("non-finite activation after ") + stage + " at entry " + std::to_string(i));
    }
  }
}

template <std::floating_point T>
GaussianPrediction<T> gaussian_head(const Tensor<T>& raw, double min_variance, VarianceFloor floor) {
  if (raw.rank() != 2 || raw.dim(1) % 2 != 0) {
    throw ContractError("gaussian_head: expected (Nt, 2 dy), got " + shape_str(raw.shape()));
  }
  const std::size_t dy = raw.dim(1) / 2;
  auto parts = split(raw, 1, {dy, dy});
  auto sp = softplus(parts[1]);
  Tensor<T> var;
  if (min_variance <= 0) {
    var = sp;
  } else if (floor == VarianceFloor::sigma) {
    var = square(add_scalar(sqrt(sp), T(std::sqrt(min_variance))));
  } else {
    var = add_scalar(sp, T(min_variance));
  }
  return {parts[0], var};
}

template <std::floating_point T>
Tensor<T> cnp_loss(const GaussianPrediction<T>& pred, const Tensor<T>& y) {
  if (!(pred.mean.shape() == y.shape()) || !(pred.var.shape() == y.shape()) || y.rank() != 2) {
    throw ContractError("cnp_loss: prediction " + shape_str(pred.mean.shape()) + " vs targets " + shape_str(y.shape()));
  }
  for (std::size_t i = 0; i < pred.var.numel(); ++i) {
    if (!(pred.var.at(i) > T(0))) throw ContractError("cnp_loss: non-positive variance");
  }
  const T log2pi = T(std::log(2 * std::numbers::pi));
  auto r = sub(y, pred.mean);
  auto nll = add_scalar(add(log(pred.var), div(square(r), pred.var)), log2pi);
  return scale(sum(nll), T(0.5) / T(y.dim(0)));
}

template <std::floating_point T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const auto& a = cfg_.attn;
  const std::size_t dz = a.dz, ew = cfg_.embed.width(cfg_.dx);
  const auto active = cfg_.active_sources();
  for (auto s : active) {
    source_mlp_.emplace_back(store_, "source" + std::to_string(s), ew + cfg_.dy, std::vector<std::size_t>{dz, dz}, dz);
  }
  switch (cfg_.variant) {
    case ModelVariant::cnp:
      head_ = Mlp<T>(store_, "head", ew + dz, {dz, dz}, 2 * cfg_.dy);
      break;
    case ModelVariant::pt_tnp:
      target_mlp_ = Mlp<T>(store_, "target", ew, {dz, dz}, dz);
      pt_u0_ = store_.create("pt.u0", {cfg_.num_pseudo_tokens, dz}, Init::normal_std, 0.02);
      for (std::size_t l = 0; l < cfg_.pt_layers; ++l) {
        const std::string p = "pt.layer" + std::to_string(l);
        pt_cu_.emplace_back(store_, p + ".cu", a);
        pt_tu_.emplace_back(store_, p + ".tu", a);
        pt_uc_.emplace_back(store_, p + ".uc", a);
      }
      head_ = Mlp<T>(store_, "head", dz, {dz, dz}, 2 * cfg_.dy);
      break;
    case ModelVariant::gridded_tnp: {
      target_mlp_ = Mlp<T>(store_, "target", ew, {dz, dz}, dz);
      if (cfg_.fusion == FusionMode::single) {
        encoders_.emplace_back(store_, "encoder", cfg_.encoder, cfg_.grid, a);
      } else {
        for (auto s : active) encoders_.emplace_back(store_, "encoder" + std::to_string(s), cfg_.encoder, cfg_.grid, a);
        fusion_ = Mlp<T>(store_, "fusion", active.size() * dz, {dz}, dz);
      }
      if (cfg_.processor == ProcessorKind::vit) {
        vit_ = VitProcessor<T>(store_, "processor", a, cfg_.processor_layers, cfg_.patch);
      } else if (cfg_.processor == ProcessorKind::swin) {
        swin_ = SwinProcessor<T>(store_, "processor", a, cfg_.processor_layers, cfg_.window);
      }
      decoder_ = GridDecoder<T>(store_, "decoder", cfg_.decoder, cfg_.decoder_k, a);
      head_ = Mlp<T>(store_, "head", dz, {dz, dz}, 2 * cfg_.dy);
      break;
    }
  }
}

template <std::floating_point T>
void Model<T>::check_task(const Task& task) const {
  if (task.sources.size() != cfg_.num_sources) {
    throw ConfigError("task has " + std::to_string(task.sources.size()) + " sources, model expects " +
                      std::to_string(cfg_.num_sources));
  }
  auto check = [&](const PointSet& p, const std::string& what) {
    if (p.dx != cfg_.dx || p.dy != cfg_.dy) {
      throw ConfigError(what + " has dims (" + std::to_string(p.dx) + ", " + std::to_string(p.dy) +
                        "), model expects (" + std::to_string(cfg_.dx) + ", " + std::to_string(cfg_.dy) + ")");
    }
    p.validate();
    for (double v : p.x)
      if (!std::isfinite(v)) throw NumericError("input: non-finite coordinate in " + what);
    for (double v : p.y)
      if (!std::isfinite(v)) throw NumericError("input: non-finite value in " + what);
  };
  for (std::size_t s = 0; s < task.sources.size(); ++s) check(task.sources[s], "source " + std::to_string(s));
  check(task.target, "target set");
  if (task.target.size() == 0) throw ContractError("task needs at least one target");
}

template <std::floating_point T>
TokenSet<T> Model<T>::source_tokens(const Task& task, std::size_t source) const {
  const auto active = cfg_.active_sources();
  const auto it = std::find(active.begin(), active.end(), source);
  if (it == active.end()) throw ContractError("source " + std::to_string(source) + " is not used by this model");
  const PointSet& p = task.sources[source];
  const std::size_t n = p.size(), ew = cfg_.embed.width(cfg_.dx);
  const auto emb = embed_inputs(p.x, cfg_.dx, cfg_.embed);
  std::vector<double> in(n * (ew + cfg_.dy));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(emb.begin() + i * ew, ew, in.begin() + i * (ew + cfg_.dy));
    std::copy_n(p.y.begin() + i * cfg_.dy, cfg_.dy, in.begin() + i * (ew + cfg_.dy) + ew);
  }
  const auto& mlp = source_mlp_[static_cast<std::size_t>(it - active.begin())];
  return {mlp(to_tensor<T>({n, ew + cfg_.dy}, in)), p.x, cfg_.dx};
}

template <std::floating_point T>
Tensor<T> Model<T>::target_embedding(const PointSet& target) const {
  const std::size_t ew = cfg_.embed.width(cfg_.dx);
  return to_tensor<T>({target.size(), ew}, embed_inputs(target.x, cfg_.dx, cfg_.embed));
}

template <std::floating_point T>
Tensor<T> Model<T>::context_tokens(const Task& task) const {
  std::vector<Tensor<T>> parts;
  for (auto s : cfg_.active_sources()) parts.push_back(source_tokens(task, s).Z);
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

template <std::floating_point T>
Tensor<T> Model<T>::cnp_aggregate(const Task& task) const {
  Tensor<T> agg = Tensor<T>::zeros({cfg_.attn.dz});
  bool first = true;
  for (auto s : cfg_.active_sources()) {
    const auto tokens = source_tokens(task, s);
    if (tokens.size() == 0) continue;
    auto m = scale(sorted_sum_rows(tokens.Z), T(1) / T(tokens.size()));
    agg = first ? m : add(agg, m);
    first = false;
  }
  return agg;
}

template <std::floating_point T>
GaussianPrediction<T> Model<T>::cnp_forward(const Task& task) const {
  const std::size_t nt = task.target.size(), dz = cfg_.attn.dz;
  auto agg = reshape(cnp_aggregate(task), {1, dz});
  check_finite(agg, "context aggregation");
  auto broadcast = matmul(Tensor<T>::full({nt, 1}, T(1)), agg);
  auto raw = head_(concat(std::vector<Tensor<T>>{target_embedding(task.target), broadcast}, 1));
  check_finite(raw, "decoder MLP");
  return gaussian_head(raw, cfg_.min_variance, cfg_.floor);
}

template <std::floating_point T>
GaussianPrediction<T> Model<T>::pt_tnp_forward(const Task& task) const {
  auto zc = as_rank3(context_tokens(task));
  const bool has_context = zc.dim(1) > 0;
  auto U = as_rank3(pt_u0_);
  auto zt = as_rank3(target_mlp_(target_embedding(task.target)));
  for (std::size_t l = 0; l < pt_cu_.size(); ++l) {
    if (has_context) U = pt_cu_[l].cross_attend(U, zc);
    zt = pt_tu_[l].cross_attend(zt, U);
    if (has_context && l + 1 < pt_cu_.size()) zc = pt_uc_[l].cross_attend(zc, U);
  }
  check_finite(zt, "pseudo-token layers");
  auto raw = head_(as_rank2(zt));
  check_finite(raw, "decoder MLP");
  return gaussian_head(raw, cfg_.min_variance, cfg_.floor);
}

template <std::floating_point T>
GaussianPrediction<T> Model<T>::gridded_forward(const Task& task) const {
  const auto active = cfg_.active_sources();
  PseudoTokenGrid<T> grid;
  if (cfg_.fusion == FusionMode::single) {
    TokenSet<T> all{context_tokens(task), {}, cfg_.dx};
    for (auto s : active) all.coords.insert(all.coords.end(), task.sources[s].x.begin(), task.sources[s].x.end());
    grid = encoders_[0](all, assign_to_grid(all.coords, cfg_.grid));
  } else {
    std::vector<PseudoTokenGrid<T>> grids;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto tokens = source_tokens(task, active[i]);
      grids.push_back(encoders_[i](tokens, assign_to_grid(tokens.coords, cfg_.grid)));
    }
    grid = fuse_multi_source(grids, FusionMode::multi, &fusion_);
  }
  check_finite(grid.U, "grid encoder");
  if (cfg_.processor == ProcessorKind::vit) grid = vit_(grid);
  if (cfg_.processor == ProcessorKind::swin) grid = swin_(grid);
  check_finite(grid.U, "grid processor");
  auto zt = target_mlp_(target_embedding(task.target));
  auto decoded = decoder_(zt, task.target.x, grid);
  check_finite(decoded, "grid decoder");
  auto raw = head_(decoded);
  check_finite(raw, "decoder MLP");
  return gaussian_head(raw, cfg_.min_variance, cfg_.floor);
}

template <std::floating_point T>
GaussianPrediction<T> Model<T>::forward(const Task& task) const {
  check_task(task);
  switch (cfg_.variant) {
    case ModelVariant::cnp: return cnp_forward(task);
    case ModelVariant::pt_tnp: return pt_tnp_forward(task);
    case ModelVariant::gridded_tnp: return gridded_forward(task);
  }
  throw ContractError("unknown model variant");
}

template <std::floating_point T>
Tensor<T> Model<T>::loss(const Task& task) const {
  const auto pred = forward(task);
  const auto& t = task.target;
  return cnp_loss(pred, to_tensor<T>({t.size(), t.dy}, t.y));
}

#define GTNP_INSTANTIATE_MODELS(T)                                                                   \
  template void check_finite(const Tensor<T>&, const char*);                                       \
  template GaussianPrediction<T> gaussian_head(const Tensor<T>&, double, VarianceFloor);           \
  template Tensor<T> cnp_loss(const GaussianPrediction<T>&, const Tensor<T>&);                     \
  template class Model<T>;

GTNP_INSTANTIATE_MODELS(float)
GTNP_INSTANTIATE_MODELS(double)

}  // namespace gtnp
