#pragma once

#include <vector>

#include "gtnp/grid.hpp"
#include "gtnp/tensor.hpp"

namespace gtnp {

enum class Provenance { pt, ki, avg, fused, processed };

/// Grid-shaped tokens U stored as (M, D_z) in row-major grid order.
template <std::floating_point T>
struct PseudoTokenGrid {
  Tensor<T> U;
  GridSpec spec;
  Provenance provenance = Provenance::pt;

  /// Node locations V, (M, D_x).
  std::vector<double> V() const { return spec.node_coords(); }
};

/// (N, D_z) tokens with their original input coordinates (N, dims).
template <std::floating_point T>
struct TokenSet {
  Tensor<T> Z;
  std::vector<double> coords;
  std::size_t dims = 1;

  std::size_t size() const { return Z.defined() ? Z.dim(0) : 0; }
};

}  // namespace gtnp
