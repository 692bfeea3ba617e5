#include "gtnp/griddec.hpp"

namespace gtnp {

DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "nn") return DecoderKind::nn;
  if (s == "full") return DecoderKind::full;
  throw ConfigError("unknown grid decoder '" + s + "' (expected nn or full)");
}

std::string to_string(DecoderKind k) { return k == DecoderKind::nn ? "nn" : "full"; }

std::size_t decoder_key_count(DecoderKind kind, const NeighbourIndex* idx, std::size_t grid_cells, std::size_t targets) {
  if (kind == DecoderKind::full) return grid_cells * targets;
  if (!idx) throw ContractError("decoder_key_count: nn decoding needs a neighbour index");
  return idx->total_valid();
}

template <std::floating_point T>
Tensor<T> nn_cross_attend(const Tensor<T>& targets, const PseudoTokenGrid<T>& grid, const NeighbourIndex& idx,
                          const AttentionBlock<T>& block, std::vector<T>* weights) {
  if (targets.rank() != 2 || targets.dim(0) != idx.num_targets) {
    throw ContractError("nn_cross_attend: " + shape_str(targets.shape()) + " targets but index covers " +
                        std::to_string(idx.num_targets));
  }
  for (auto c : idx.valid_counts) {
    if (c == 0) throw ContractError("nn_cross_attend: target without a valid neighbour");
  }
  for (auto i : idx.index) {
    if (i >= static_cast<std::int64_t>(grid.spec.total())) {
      throw ContractError("nn_cross_attend: neighbour index built for a different grid");
    }
  }
  return block.gathered_cross_attend(targets, grid.U, idx.index, idx.slots, weights);
}

template <std::floating_point T>
Tensor<T> full_cross_attend(const Tensor<T>& targets, const PseudoTokenGrid<T>& grid, const AttentionBlock<T>& block,
                            std::vector<T>* weights) {
  if (targets.rank() != 2) throw ContractError("full_cross_attend: targets must be (Nt, D_z)");
  const std::size_t nt = targets.dim(0), dz = targets.dim(1), M = grid.U.dim(0);
  auto out = block.cross_attend(reshape(targets, {1, nt, dz}), reshape(grid.U, {1, M, dz}), nullptr, weights);
  return reshape(out, {nt, dz});
}

template <std::floating_point T>
GridDecoder<T>::GridDecoder(ParamStore<T>& store, const std::string& name, DecoderKind kind, std::size_t k,
                            const AttentionConfig& cfg)
    : kind_(kind), k_(k), block_(store, name + ".mhca", cfg) {
  if (k < 1) throw ConfigError("decoder k must be >= 1");
}

template <std::floating_point T>
Tensor<T> GridDecoder<T>::operator()(const Tensor<T>& targets, const std::vector<double>& target_coords,
                                     const PseudoTokenGrid<T>& grid) const {
  if (kind_ == DecoderKind::full) return full_cross_attend(targets, grid, block_);
  const auto idx = neighbour_indices(target_coords, grid.spec, k_);
  return nn_cross_attend(targets, grid, idx, block_);
}

#define GTNP_INSTANTIATE_GRIDDEC(T)                                                                               \
  template Tensor<T> nn_cross_attend(const Tensor<T>&, const PseudoTokenGrid<T>&, const NeighbourIndex&,        \
                                     const AttentionBlock<T>&, std::vector<T>*);                                \
  template Tensor<T> full_cross_attend(const Tensor<T>&, const PseudoTokenGrid<T>&, const AttentionBlock<T>&,   \
                                       std::vector<T>*);                                                        \
  template class GridDecoder<T>;

GTNP_INSTANTIATE_GRIDDEC(float)
GTNP_INSTANTIATE_GRIDDEC(double)

}  // namespace gtnp
