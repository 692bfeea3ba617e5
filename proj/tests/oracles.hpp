#pragma once

// Slow reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "gtnp/attnproc.hpp"
#include "gtnp/grid.hpp"
#include "gtnp/gridenc.hpp"

namespace gtnp::testing {

/// Nearest node by scanning every cell; ties keep the lowest flat index.
inline std::size_t brute_nearest(const GridSpec& g, const double* x) {
  const auto nodes = g.node_coords();
  const std::size_t D = g.dims();
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t m = 0; m < g.total(); ++m) {
    double d2 = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const double e = g.axis_distance(d, x[d], nodes[m * D + d]);
      d2 += e * e;
    }
    if (d2 < bd) {
      bd = d2;
      best = m;
    }
  }
  return best;
}

/// Sort every lattice coordinate in a wide unwrapped window by (distance,
/// coordinate), keep the first c, then map into range.
inline std::vector<std::size_t> axis_oracle(const GridSpec& g, std::size_t d, double x, std::size_t c) {
  const long long m = static_cast<long long>(g.counts[d]);
  std::vector<std::pair<double, long long>> all;
  for (long long i = -2 * m; i < 3 * m; ++i) all.emplace_back(std::abs(x - g.node(d, i)), i);
  std::sort(all.begin(), all.end());
  std::set<std::size_t> out;
  for (std::size_t j = 0; j < c; ++j) {
    const long long i = all[j].second;
    if (g.wrap[d]) {
      out.insert(static_cast<std::size_t>(((i % m) + m) % m));
    } else if (i >= 0 && i < m) {
      out.insert(static_cast<std::size_t>(i));
    }
  }
  return {out.begin(), out.end()};
}

/// Cartesian product of the per-axis oracles, as flat indices.
inline std::set<std::int64_t> neighbour_oracle(const GridSpec& g, const double* x, std::size_t k) {
  const std::size_t D = g.dims();
  const std::size_t c = neighbours_per_dim(k, D);
  std::vector<std::vector<std::size_t>> axes;
  for (std::size_t d = 0; d < D; ++d) {
    double xd = g.wrap[d] ? x[d] : std::clamp(x[d], g.lo[d], g.hi[d]);
    axes.push_back(axis_oracle(g, d, xd, c));
  }
  std::set<std::int64_t> out;
  std::vector<std::size_t> idx(D);
  std::function<void(std::size_t)> rec = [&](std::size_t d) {
    if (d == D) {
      out.insert(static_cast<std::int64_t>(g.flatten(idx)));
      return;
    }
    for (auto i : axes[d]) {
      idx[d] = i;
      rec(d + 1);
    }
  };
  rec(0);
  return out;
}

inline std::set<std::int64_t> neighbour_set(const NeighbourIndex& idx, std::size_t t) {
  std::set<std::int64_t> s;
  for (std::size_t j = 0; j < idx.slots; ++j)
    if (idx.index[t * idx.slots + j] >= 0) s.insert(idx.index[t * idx.slots + j]);
  return s;
}

/// Window id of every grid node along each dimension. Shifted windows start
/// at shift + j * window; on roll dimensions coordinates are taken modulo the
/// count first, elsewhere the nodes before the first boundary form their own
/// group.
inline std::vector<long long> window_membership(const GridSpec& g, const WindowSpec& spec, bool shifted) {
  const std::size_t D = g.dims(), M = g.total();
  std::vector<long long> id(M * D);
  for (std::size_t m = 0; m < M; ++m) {
    const auto q = g.unflatten(m);
    for (std::size_t d = 0; d < D; ++d) {
      const long long n = static_cast<long long>(g.counts[d]);
      const long long w = static_cast<long long>(spec.window[d]);
      const long long s = shifted ? static_cast<long long>(spec.shift[d]) : 0;
      long long p = static_cast<long long>(q[d]) - s;
      if (spec.roll[d]) p = ((p % n) + n) % n;
      id[m * D + d] = p >= 0 ? p / w : -1;
    }
  }
  return id;
}

/// (1, M, M) mask allowing exactly the pairs that share a window.
inline AttentionMask membership_mask(const GridSpec& g, const WindowSpec& spec, bool shifted) {
  const std::size_t D = g.dims(), M = g.total();
  const auto id = window_membership(g, spec, shifted);
  AttentionMask mask(1, M, M, 0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      bool same = true;
      for (std::size_t d = 0; d < D; ++d) same = same && id[i * D + d] == id[j * D + d];
      mask.set(0, i, j, same);
    }
  return mask;
}

/// PT grid encoding one cell at a time without padding.
template <std::floating_point T>
Tensor<T> pt_encode_loop(const TokenSet<T>& tokens, const GridAssignment& a, const Tensor<T>& U0,
                         const AttentionBlock<T>& block) {
  const std::size_t dz = U0.dim(1);
  std::vector<Tensor<T>> rows;
  for (std::size_t m = 0; m < a.num_cells; ++m) {
    std::vector<std::int64_t> members;
    for (std::size_t s = 0; s < a.max_slots; ++s)
      if (a.mask[m * a.max_slots + s]) members.push_back(a.padded_index[m * a.max_slots + s]);
    const std::vector<std::int64_t> self{static_cast<std::int64_t>(m)};
    auto u = reshape(gather_rows(U0, std::span<const std::int64_t>(self)), {1, 1, dz});
    if (members.empty()) {
      rows.push_back(reshape(block.feed_forward(u), {1, dz}));
      continue;
    }
    auto kv = reshape(gather_rows(tokens.Z, std::span<const std::int64_t>(members)), {1, members.size(), dz});
    rows.push_back(reshape(block.cross_attend(u, kv), {1, dz}));
  }
  return concat(rows, 0);
}

}  // namespace gtnp::testing
