#pragma once

#include <span>
#include <string>
#include <vector>

#include "gtnp/nn.hpp"
#include "gtnp/tokens.hpp"

namespace gtnp {

struct AttentionConfig {
  std::size_t dz = 128;
  std::size_t heads = 8;
  std::size_t dv = 16;   // per head
  std::size_t dqk = 16;  // per head
  std::size_t mlp_hidden = 128;

  void validate() const;
};

/// Pre-norm transformer layer:
///   Z~ = Z + MHA(LN1(Z)),  out = Z~ + MLP(LN2(Z~)).
/// Query, key and value projections carry no bias, so a query with no
/// visible key gets a zero attention sublayer output.
template <std::floating_point T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg);

  /// z: (B, N, dz).
  Tensor<T> self_attend(const Tensor<T>& z, const AttentionMask* mask = nullptr,
                        std::vector<T>* weights = nullptr) const;
  /// zq: (B, Nq, dz), zkv: (B, Nk, dz).
  Tensor<T> cross_attend(const Tensor<T>& zq, const Tensor<T>& zkv, const AttentionMask* mask = nullptr,
                         std::vector<T>* weights = nullptr) const;
  /// Each query row i of zq (Nq, dz) attends to rows index[i*slots .. i*slots+slots)
  /// of source (Ns, dz); -1 entries are masked. Keys and values are projected
  /// once per source row before gathering. Returns (Nq, dz).
  Tensor<T> gathered_cross_attend(const Tensor<T>& zq, const Tensor<T>& source, std::span<const std::int64_t> index,
                                  std::size_t slots, std::vector<T>* weights = nullptr) const;

  /// W_O(MHA(LN1(zq), LN1(zkv))) without residuals or MLP.
  Tensor<T> attention_sublayer(const Tensor<T>& zq, const Tensor<T>& zkv, const AttentionMask* mask = nullptr,
                               std::vector<T>* weights = nullptr) const;
  /// Residual MLP path: z + MLP(LN2(z)).
  Tensor<T> feed_forward(const Tensor<T>& z) const;

  const AttentionConfig& config() const { return cfg_; }
  const Linear<T>& wq() const { return wq_; }
  const Linear<T>& wk() const { return wk_; }
  const Linear<T>& wv() const { return wv_; }
  const Linear<T>& wo() const { return wo_; }

 private:
  Tensor<T> finish(const Tensor<T>& zq, const Tensor<T>& attended) const;

  AttentionConfig cfg_;
  LayerNorm<T> ln1_, ln2_;
  Linear<T> wq_, wk_, wv_, wo_;
  Mlp<T> mlp_;
};

/// Full self-attention over all grid tokens with optional patch encoding.
template <std::floating_point T>
class VitProcessor {
 public:
  VitProcessor() = default;
  /// `patch` empty disables patch encoding.
  VitProcessor(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg, std::size_t layers,
               std::vector<std::size_t> patch = {});

  PseudoTokenGrid<T> operator()(const PseudoTokenGrid<T>& grid) const;
  /// Patch encoding only.
  PseudoTokenGrid<T> patch_encode(const PseudoTokenGrid<T>& grid) const;
  const std::vector<AttentionBlock<T>>& blocks() const { return blocks_; }
  bool has_patch() const { return !patch_.empty(); }

 private:
  std::vector<std::size_t> patch_;
  Linear<T> patch_linear_;
  std::vector<AttentionBlock<T>> blocks_;
};

struct WindowSpec {
  std::vector<std::size_t> window;
  std::vector<std::size_t> shift;
  std::vector<bool> roll;

  void validate(const GridSpec& grid) const;
};

/// Window partition of a grid: tokens are gathered into (windows, window_size)
/// order, with -1 for filler nodes that pad the grid to a window multiple.
struct WindowPlan {
  std::size_t windows = 0;
  std::size_t window_size = 0;
  std::vector<std::int64_t> gather;   // (windows * window_size) -> grid flat index or -1
  std::vector<std::int64_t> inverse;  // grid flat index -> partition slot
  AttentionMask mask;                 // (windows, window_size, window_size)
};

/// Builds the regular or shifted window partition. In the shifted pass slot
/// coordinate p' holds grid coordinate p' + shift, cyclically over the grid on
/// roll dimensions; elsewhere tokens that wrapped past the end may only attend
/// to other wrapped tokens.
WindowPlan make_window_plan(const GridSpec& grid, const WindowSpec& spec, bool shifted);

template <std::floating_point T>
class SwinProcessor {
 public:
  SwinProcessor() = default;
  SwinProcessor(ParamStore<T>& store, const std::string& name, const AttentionConfig& cfg, std::size_t layers,
                WindowSpec spec);

  PseudoTokenGrid<T> operator()(const PseudoTokenGrid<T>& grid) const;
  /// Runs block `b` over the windows of U (M, dz), returning (M, dz).
  Tensor<T> apply_block(const Tensor<T>& U, const GridSpec& grid, std::size_t b, bool shifted,
                        std::vector<T>* weights = nullptr) const;
  const std::vector<AttentionBlock<T>>& blocks() const { return blocks_; }
  const WindowSpec& window_spec() const { return spec_; }

 private:
  WindowSpec spec_;
  std::vector<AttentionBlock<T>> blocks_;
};

}  // namespace gtnp
