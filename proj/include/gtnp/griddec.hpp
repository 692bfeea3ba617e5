#pragma once

#include <string>

#include "gtnp/attnproc.hpp"
#include "gtnp/grid.hpp"
#include "gtnp/tokens.hpp"

namespace gtnp {

/// Target tokens (Nt, dz) cross-attend to their hypercube neighbours on the grid.
template <std::floating_point T>
Tensor<T> nn_cross_attend(const Tensor<T>& targets, const PseudoTokenGrid<T>& grid, const NeighbourIndex& idx,
                          const AttentionBlock<T>& block, std::vector<T>* weights = nullptr);

/// Target tokens (Nt, dz) cross-attend to all M grid tokens.
template <std::floating_point T>
Tensor<T> full_cross_attend(const Tensor<T>& targets, const PseudoTokenGrid<T>& grid, const AttentionBlock<T>& block,
                            std::vector<T>* weights = nullptr);

enum class DecoderKind { nn, full };
DecoderKind parse_decoder_kind(const std::string& s);
std::string to_string(DecoderKind k);

/// Key gathers needed to decode: valid neighbours for nn, M * Nt for full.
std::size_t decoder_key_count(DecoderKind kind, const NeighbourIndex* idx, std::size_t grid_cells, std::size_t targets);

template <std::floating_point T>
class GridDecoder {
 public:
  GridDecoder() = default;
  GridDecoder(ParamStore<T>& store, const std::string& name, DecoderKind kind, std::size_t k,
              const AttentionConfig& cfg);

  /// target_coords: (Nt, D_x) for neighbour search on the processed grid.
  Tensor<T> operator()(const Tensor<T>& targets, const std::vector<double>& target_coords,
                       const PseudoTokenGrid<T>& grid) const;

  DecoderKind kind() const { return kind_; }
  std::size_t k() const { return k_; }
  const AttentionBlock<T>& block() const { return block_; }

 private:
  DecoderKind kind_ = DecoderKind::nn;
  std::size_t k_ = 1;
  AttentionBlock<T> block_;
};

}  // namespace gtnp
