#include "gtnp/gridenc.hpp"

#include <cmath>
#include <numbers>

#include "gtnp/geomembed.hpp"

namespace gtnp {

namespace {

template <std::floating_point T>
void check_tokens(const TokenSet<T>& tokens, const GridAssignment& a, const GridSpec& grid, const char* who) {
  if (a.num_cells != grid.total()) throw ContractError(std::string(who) + ": assignment was built for another grid");
  if (a.num_points != tokens.size()) {
    throw ContractError(std::string(who) + ": assignment covers " + std::to_string(a.num_points) + " points, got " +
                        std::to_string(tokens.size()) + " tokens");
  }
  if (tokens.Z.rank() != 2) throw ContractError(std::string(who) + ": tokens must be (N, D_z)");
}

// Gathers every padded slot's token, (cells * slots, dz), dummy rows zero.
template <std::floating_point T>
Tensor<T> gather_slots(const TokenSet<T>& tokens, const GridAssignment& a) {
  return gather_rows(tokens.Z, std::span<const std::int64_t>(a.padded_index));
}

}  // namespace

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::pt: return "pt";
    case EncoderKind::ki: return "ki";
    case EncoderKind::avg: return "avg";
  }
  return "?";
}

std::string to_string(FusionMode m) { return m == FusionMode::single ? "single" : "multi"; }

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "pt") return EncoderKind::pt;
  if (s == "ki") return EncoderKind::ki;
  if (s == "avg") return EncoderKind::avg;
  throw ConfigError("unknown grid encoder '" + s + "' (expected pt, ki or avg)");
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "single") return FusionMode::single;
  if (s == "multi") return FusionMode::multi;
  throw ConfigError("unknown fusion mode '" + s + "' (expected single or multi)");
}

template <std::floating_point T>
PseudoTokenGrid<T> pt_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                  const Tensor<T>& U0, const AttentionBlock<T>& block) {
  check_tokens(tokens, assignment, grid, "pt_grid_encode");
  const std::size_t dz = block.config().dz;
  if (U0.rank() != 2 || U0.dim(0) != grid.total() || U0.dim(1) != dz || tokens.Z.dim(1) != dz) {
    throw ContractError("pt_grid_encode: token width " + std::to_string(tokens.Z.dim(1)) + " / initial grid " +
                        shape_str(U0.shape()) + " do not match D_z = " + std::to_string(dz));
  }
  auto u = block.gathered_cross_attend(U0, tokens.Z, assignment.padded_index, assignment.max_slots);
  return {u, grid, Provenance::pt};
}

std::size_t ki_lengthscale_count(const GridSpec& grid) { return grid.spherical ? grid.dims() - 1 : grid.dims(); }

std::vector<double> ki_sq_distances(const std::vector<double>& coords, const GridAssignment& a, const GridSpec& grid) {
  const std::size_t D = grid.dims();
  const std::size_t L = ki_lengthscale_count(grid);
  const std::size_t slots = a.num_cells * a.max_slots;
  std::vector<double> out(slots * L, 0.0);
  for (std::size_t s = 0; s < slots; ++s) {
    const auto n = a.padded_index[s];
    if (n < 0) continue;
    const auto node = grid.unflatten(s / a.max_slots);
    const double* x = coords.data() + static_cast<std::size_t>(n) * D;
    std::size_t col = 0;
    std::size_t d0 = 0;
    if (grid.spherical) {
      const double g = haversine({x[0], x[1]}, {grid.node(0, static_cast<long long>(node[0])),
                                                grid.node(1, static_cast<long long>(node[1]))});
      out[s * L + col++] = g * g;
      d0 = 2;
    }
    for (std::size_t d = d0; d < D; ++d) {
      const double e = grid.axis_distance(d, x[d], grid.node(d, static_cast<long long>(node[d])));
      out[s * L + col++] = e * e;
    }
  }
  return out;
}

template <std::floating_point T>
PseudoTokenGrid<T> ki_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                  const Tensor<T>& lengthscales) {
  check_tokens(tokens, assignment, grid, "ki_grid_encode");
  const std::size_t L = ki_lengthscale_count(grid);
  if (lengthscales.numel() != L) {
    throw ContractError("ki_grid_encode: expected " + std::to_string(L) + " lengthscales, got " +
                        std::to_string(lengthscales.numel()));
  }
  for (T l : lengthscales.data()) {
    if (!(l > T(0))) throw DomainError("ki_grid_encode: lengthscale must be positive");
  }
  if (tokens.coords.size() != tokens.size() * grid.dims()) {
    throw ContractError("ki_grid_encode: token coordinates do not match the grid rank");
  }
  const std::size_t M = grid.total(), S = assignment.max_slots, dz = tokens.Z.dim(1);
  const auto d2 = ki_sq_distances(tokens.coords, assignment, grid);
  auto dist = Tensor<T>::from_vector({M * S, L}, std::vector<T>(d2.begin(), d2.end()));
  auto inv = reshape(div(Tensor<T>::scalar(T(1)), square(lengthscales)), {L, 1});
  auto w = exp(neg(linear(dist, inv, Tensor<T>())));
  std::vector<std::uint8_t> dummy(M * S);
  for (std::size_t i = 0; i < dummy.size(); ++i) dummy[i] = assignment.mask[i] ? 0 : 1;
  w = masked_fill(w, std::span<const std::uint8_t>(dummy), T(0));
  auto weighted = mul(gather_slots(tokens, assignment), w);
  auto u = sum_axis(reshape(weighted, {M, S, dz}), 1);
  return {u, grid, Provenance::ki};
}

template <std::floating_point T>
PseudoTokenGrid<T> avg_grid_encode(const TokenSet<T>& tokens, const GridAssignment& assignment, const GridSpec& grid,
                                   const Tensor<T>& U0) {
  check_tokens(tokens, assignment, grid, "avg_grid_encode");
  const std::size_t M = grid.total(), S = assignment.max_slots;
  const std::size_t dz = U0.dim(1);
  if (tokens.Z.dim(1) != dz || U0.dim(0) != M) throw ContractError("avg_grid_encode: width mismatch");
  std::vector<T> inv(M, T(0));
  for (std::size_t m = 0; m < M; ++m)
    if (assignment.cell_counts[m]) inv[m] = T(1) / T(assignment.cell_counts[m]);
  auto total = sum_axis(reshape(gather_slots(tokens, assignment), {M, S, dz}), 1);
  auto mean = mul(total, Tensor<T>::from_vector({M, 1}, std::move(inv)));
  return {add(mean, U0), grid, Provenance::avg};
}

template <std::floating_point T>
GridEncoder<T>::GridEncoder(ParamStore<T>& store, const std::string& name, EncoderKind kind, const GridSpec& grid,
                            const AttentionConfig& cfg)
    : kind_(kind), grid_(grid) {
  grid.validate();
  switch (kind) {
    case EncoderKind::pt:
      u0_ = store.create(name + ".u0", {grid.total(), cfg.dz}, Init::normal_std, 0.02);
      block_ = AttentionBlock<T>(store, name + ".mhca", cfg);
      break;
    case EncoderKind::avg:
      u0_ = store.create(name + ".u0", {grid.total(), cfg.dz}, Init::normal_std, 0.02);
      break;
    case EncoderKind::ki: {
      const std::size_t L = ki_lengthscale_count(grid);
      log_lengthscale_ = store.create(name + ".log_lengthscale", {L}, Init::zeros);
      // initialised to one cell width per dimension
      auto v = log_lengthscale_.mutable_data();
      std::size_t col = 0, d0 = 0;
      if (grid.spherical) {
        v[col++] = T(std::log(grid.step(0) * std::numbers::pi / 180.0));
        d0 = 2;
      }
      for (std::size_t d = d0; d < grid.dims(); ++d) v[col++] = T(std::log(grid.step(d)));
      resize_ = Mlp<T>(store, name + ".resize", cfg.dz, {cfg.dz, cfg.dz}, cfg.dz);
      break;
    }
  }
}

template <std::floating_point T>
PseudoTokenGrid<T> GridEncoder<T>::operator()(const TokenSet<T>& tokens, const GridAssignment& assignment) const {
  switch (kind_) {
    case EncoderKind::pt: return pt_grid_encode(tokens, assignment, grid_, u0_, block_);
    case EncoderKind::avg: return avg_grid_encode(tokens, assignment, grid_, u0_);
    case EncoderKind::ki: {
      auto g = ki_grid_encode(tokens, assignment, grid_, exp(log_lengthscale_));
      g.U = resize_(g.U);
      return g;
    }
  }
  throw ContractError("unknown encoder kind");
}

template <std::floating_point T>
PseudoTokenGrid<T> fuse_multi_source(const std::vector<PseudoTokenGrid<T>>& grids, FusionMode mode,
                                     const Mlp<T>* fusion) {
  if (grids.empty()) throw ContractError("fuse_multi_source: no grids");
  for (const auto& g : grids) {
    if (!(g.spec == grids[0].spec) || !(g.U.shape() == grids[0].U.shape())) {
      throw ContractError("fuse_multi_source: grids " + shape_str(grids[0].U.shape()) + " and " + shape_str(g.U.shape()) +
                          " do not share a grid");
    }
  }
  if (mode == FusionMode::single) {
    if (grids.size() != 1) throw ContractError("fuse_multi_source: single mode takes exactly one grid");
    return grids[0];
  }
  if (!fusion) throw ContractError("fuse_multi_source: multi mode needs a fusion MLP");
  std::vector<Tensor<T>> parts;
  for (const auto& g : grids) parts.push_back(g.U);
  auto cat = parts.size() == 1 ? parts[0] : concat(parts, 1);
  if (cat.dim(1) != fusion->in_features()) {
    throw ContractError("fuse_multi_source: fusion MLP expects width " + std::to_string(fusion->in_features()) +
                        ", got " + std::to_string(cat.dim(1)));
  }
  return {(*fusion)(cat), grids[0].spec, Provenance::fused};
}

#define GTNP_INSTANTIATE_GRIDENC(T)                                                                             \
  template PseudoTokenGrid<T> pt_grid_encode(const TokenSet<T>&, const GridAssignment&, const GridSpec&,      \
                                             const Tensor<T>&, const AttentionBlock<T>&);                     \
  template PseudoTokenGrid<T> ki_grid_encode(const TokenSet<T>&, const GridAssignment&, const GridSpec&,      \
                                             const Tensor<T>&);                                               \
  template PseudoTokenGrid<T> avg_grid_encode(const TokenSet<T>&, const GridAssignment&, const GridSpec&,     \
                                              const Tensor<T>&);                                              \
  template PseudoTokenGrid<T> fuse_multi_source(const std::vector<PseudoTokenGrid<T>>&, FusionMode,          \
                                                const Mlp<T>*);                                               \
  template class GridEncoder<T>;

GTNP_INSTANTIATE_GRIDENC(float)
GTNP_INSTANTIATE_GRIDENC(double)

}  // namespace gtnp
