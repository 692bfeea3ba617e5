#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gtnp/attnproc.hpp"
#include "gtnp/geomembed.hpp"
#include "gtnp/griddec.hpp"
#include "gtnp/gridenc.hpp"
#include "gtnp/taskgen.hpp"

namespace gtnp {

enum class ModelVariant { cnp, pt_tnp, gridded_tnp };
enum class ProcessorKind { none, vit, swin };
enum class EmbedKind { identity, fourier, spherical };
/// sigma: σ = σ_min + sqrt(softplus(v)).  variance: σ² = σ²_min + softplus(v).
enum class VarianceFloor { sigma, variance };

ModelVariant parse_model_variant(const std::string& s);
ProcessorKind parse_processor_kind(const std::string& s);
EmbedKind parse_embed_kind(const std::string& s);
VarianceFloor parse_variance_floor(const std::string& s);
std::string to_string(ModelVariant v);
std::string to_string(ProcessorKind p);
std::string to_string(EmbedKind e);
std::string to_string(VarianceFloor f);

struct EmbedConfig {
  EmbedKind kind = EmbedKind::identity;
  FourierEmbedConfig fourier;
  SphericalEmbedConfig spherical;
  bool include_raw = true;  // fourier only: keep the raw coordinate next to the features

  void validate(std::size_t dx) const;
  std::size_t width(std::size_t dx) const;
};

/// Input embedding of n points (n, dx) into (n, width) rows. Spherical mode
/// reads dims 0-1 as lat/lon in degrees and passes later dims through.
std::vector<double> embed_inputs(const std::vector<double>& x, std::size_t dx, const EmbedConfig& cfg);

struct ModelConfig {
  ModelVariant variant = ModelVariant::gridded_tnp;
  std::size_t dx = 1;
  std::size_t dy = 1;
  std::size_t num_sources = 1;
  std::vector<std::size_t> use_sources;  // empty = all sources
  EmbedConfig embed;
  AttentionConfig attn;

  // gridded TNP
  EncoderKind encoder = EncoderKind::pt;
  FusionMode fusion = FusionMode::single;
  GridSpec grid;
  ProcessorKind processor = ProcessorKind::swin;
  std::size_t processor_layers = 2;
  WindowSpec window;
  std::vector<std::size_t> patch;
  DecoderKind decoder = DecoderKind::nn;
  std::size_t decoder_k = 3;

  // PT-TNP
  std::size_t num_pseudo_tokens = 16;
  std::size_t pt_layers = 5;

  double min_variance = 0.0;
  VarianceFloor floor = VarianceFloor::sigma;

  void validate() const;
  std::vector<std::size_t> active_sources() const;
};

/// Mean and variance, each (Nt, dy).
template <std::floating_point T>
struct GaussianPrediction {
  Tensor<T> mean;
  Tensor<T> var;
};

/// raw (Nt, 2 dy): first half mean, second half the pre-softplus variance.
template <std::floating_point T>
GaussianPrediction<T> gaussian_head(const Tensor<T>& raw, double min_variance, VarianceFloor floor = VarianceFloor::sigma);

/// Negative mean over targets of sum_d log N(y_d; μ_d, σ²_d). y is (Nt, dy).
template <std::floating_point T>
Tensor<T> cnp_loss(const GaussianPrediction<T>& pred, const Tensor<T>& y);

/// Throws NumericError naming `stage` if any entry is not finite.
template <std::floating_point T>
void check_finite(const Tensor<T>& t, const char* stage);

template <std::floating_point T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  GaussianPrediction<T> forward(const Task& task) const;
  /// Loss of one task, built on the autodiff graph.
  Tensor<T> loss(const Task& task) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Exposed for tests.
  TokenSet<T> source_tokens(const Task& task, std::size_t source) const;
  Tensor<T> target_embedding(const PointSet& target) const;
  Tensor<T> cnp_aggregate(const Task& task) const;

 private:
  GaussianPrediction<T> gridded_forward(const Task& task) const;
  GaussianPrediction<T> cnp_forward(const Task& task) const;
  GaussianPrediction<T> pt_tnp_forward(const Task& task) const;
  Tensor<T> context_tokens(const Task& task) const;
  void check_task(const Task& task) const;

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::vector<Mlp<T>> source_mlp_;  // indexed by source id
  Mlp<T> target_mlp_;
  Mlp<T> head_;

  std::vector<GridEncoder<T>> encoders_;
  Mlp<T> fusion_;
  VitProcessor<T> vit_;
  SwinProcessor<T> swin_;
  GridDecoder<T> decoder_;

  Tensor<T> pt_u0_;
  std::vector<AttentionBlock<T>> pt_cu_, pt_tu_, pt_uc_;
};

}  // namespace gtnp
