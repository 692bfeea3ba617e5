#pragma once

#include <string>
#include <vector>

#include "gtnp/attnproc.hpp"
#include "gtnp/grid.hpp"
#include "gtnp/nn.hpp"
#include "gtnp/tokens.hpp"

namespace gtnp {

/// u_m = MHCA-block(u0_m; real tokens of cell m), all cells in one padded
/// batch. A cell without tokens reduces to u0_m + MLP(LN2(u0_m)).
template <std::floating_point T>
PseudoTokenGrid<T> pt_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                  const Tensor<T>& U0, const AttentionBlock<T>& block);

/// u_m = sum over cell members n of z_n * exp(-sum_d dist_d(x_n, v_m)^2 / l_d^2).
/// Wrap dimensions use periodic distance; on spherical grids dims 0-1 are
/// replaced by one great-circle distance, so `lengthscales` has D - 1 entries.
template <std::floating_point T>
PseudoTokenGrid<T> ki_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                  const Tensor<T>& lengthscales);

/// u_m = mean of the cell's tokens + u0_m; empty cells give u0_m.
template <std::floating_point T>
PseudoTokenGrid<T> avg_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                   const Tensor<T>& U0);

/// Number of kernel lengthscales the KI encoder uses for a grid.
std::size_t ki_lengthscale_count(const GridSpec& grid);

/// Squared per-lengthscale distances between each padded slot's token and its
/// cell node, (cells * slots, ki_lengthscale_count). Dummy slots hold zeros.
std::vector<double> ki_sq_distances(const std::vector<double>& coords, const GridAssignment& assignment,
                                    const GridSpec& grid);

enum class EncoderKind { pt, ki, avg };
enum class FusionMode { single, multi };

EncoderKind parse_encoder_kind(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(EncoderKind k);
std::string to_string(FusionMode m);

/// Encoder with its own parameters (U0 / attention block, or lengthscales and
/// resize MLP).
template <std::floating_point T>
class GridEncoder {
 public:
  GridEncoder() = default;
  GridEncoder(ParamStore<T>& store, const std::string& name, EncoderKind kind, const GridSpec& grid,
              const AttentionConfig& cfg);

  PseudoTokenGrid<T> operator()(const TokenSet<T>& tokens, const GridAssignment& assignment) const;

  EncoderKind kind() const { return kind_; }
  const GridSpec& grid() const { return grid_; }
  const Tensor<T>& initial_tokens() const { return u0_; }
  const AttentionBlock<T>& block() const { return block_; }
  Tensor<T> lengthscales() const { return exp(log_lengthscale_); }

 private:
  EncoderKind kind_ = EncoderKind::pt;
  GridSpec grid_;
  Tensor<T> u0_;
  AttentionBlock<T> block_;
  Tensor<T> log_lengthscale_;
  Mlp<T> resize_;
};

/// single: passes the lone grid through. multi: point-wise MLP over the
/// concatenation of per-source tokens.
template <std::floating_point T>
PseudoTokenGrid<T> fuse_multi_source(const std::vector<PseudoTokenGrid<T>>& grids, FusionMode mode,
                                     const Mlp<T>* fusion);

}  // namespace gtnp
