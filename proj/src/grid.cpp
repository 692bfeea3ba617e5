#include "gtnp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gtnp/errors.hpp"

namespace gtnp {

namespace {

// Nearest node on the unbounded lattice; ties go to the lower coordinate.
long long nearest_lattice(const GridSpec& g, std::size_t d, double x) {
  const double t = (x - g.lo[d]) / g.step(d) - 0.5;
  const auto i0 = static_cast<long long>(std::floor(t));
  const double d0 = std::abs(x - g.node(d, i0));
  const double d1 = std::abs(x - g.node(d, i0 + 1));
  return d1 < d0 ? i0 + 1 : i0;
}

std::size_t wrap_index(long long i, std::size_t m) {
  const auto mm = static_cast<long long>(m);
  return static_cast<std::size_t>(((i % mm) + mm) % mm);
}

// The c nearest lattice coordinates along one axis, mapped into range.
std::vector<std::size_t> axis_neighbours(const GridSpec& g, std::size_t d, double x, std::size_t c) {
  const long long start = nearest_lattice(g, d, x);
  std::vector<long long> band{start};
  long long left = start, right = start;
  while (band.size() < c) {
    const double dl = std::abs(x - g.node(d, left - 1));
    const double dr = std::abs(x - g.node(d, right + 1));
    if (dl <= dr) {
      band.push_back(--left);
    } else {
      band.push_back(++right);
    }
  }
  std::vector<std::size_t> out;
  const std::size_t m = g.counts[d];
  for (auto i : band) {
    if (g.wrap[d]) {
      const std::size_t w = wrap_index(i, m);
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    } else if (i >= 0 && i < static_cast<long long>(m)) {
      out.push_back(static_cast<std::size_t>(i));
    }
  }
  return out;
}

// Nearest in-range cell coordinate along one axis.
std::size_t nearest_cell(const GridSpec& g, std::size_t d, double x, bool& clamped) {
  const std::size_t m = g.counts[d];
  if (!g.wrap[d]) {
    if (x < g.lo[d] || x > g.hi[d]) clamped = true;
    const long long i = nearest_lattice(g, d, x);
    return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(m) - 1));
  }
  double r = std::fmod(x - g.lo[d], g.period(d));
  if (r < 0) r += g.period(d);
  const double t = r / g.step(d) - 0.5;
  const auto i0 = static_cast<long long>(std::floor(t));
  const std::size_t a = wrap_index(i0, m);
  const std::size_t b = wrap_index(i0 + 1, m);
  const double da = g.axis_distance(d, x, g.node(d, static_cast<long long>(a)));
  const double db = g.axis_distance(d, x, g.node(d, static_cast<long long>(b)));
  if (db < da) return b;
  if (da < db) return a;
  return std::min(a, b);
}

template <typename F>
void for_each_product(const std::vector<std::vector<std::size_t>>& axes, F&& f) {
  const std::size_t D = axes.size();
  for (const auto& a : axes)
    if (a.empty()) return;
  std::vector<std::size_t> pos(D, 0), idx(D);
  while (true) {
    for (std::size_t d = 0; d < D; ++d) idx[d] = axes[d][pos[d]];
    f(idx);
    std::size_t d = D;
    while (d > 0) {
      --d;
      if (++pos[d] < axes[d].size()) break;
      pos[d] = 0;
      if (d == 0) return;
    }
    if (D == 0) return;
  }
}

}  // namespace

void GridSpec::validate() const {
  const std::size_t D = counts.size();
  if (D == 0) throw ConfigError("grid needs at least one dimension");
  if (lo.size() != D || hi.size() != D || wrap.size() != D) {
    throw ConfigError("grid fields disagree on the number of dimensions");
  }
  for (std::size_t d = 0; d < D; ++d) {
    if (counts[d] < 1) throw ConfigError("grid count must be >= 1 in dimension " + std::to_string(d));
    if (!(lo[d] < hi[d])) throw ConfigError("grid extent must satisfy min < max in dimension " + std::to_string(d));
  }
  if (spherical && D < 2) throw ConfigError("spherical grid needs latitude and longitude dimensions");
}

std::size_t GridSpec::total() const {
  std::size_t n = 1;
  for (auto c : counts) n *= c;
  return n;
}

std::size_t GridSpec::flatten(const std::vector<std::size_t>& idx) const {
  std::size_t f = 0;
  for (std::size_t d = 0; d < counts.size(); ++d) f = f * counts[d] + idx[d];
  return f;
}

std::vector<std::size_t> GridSpec::unflatten(std::size_t flat) const {
  std::vector<std::size_t> idx(counts.size());
  for (std::size_t d = counts.size(); d-- > 0;) {
    idx[d] = flat % counts[d];
    flat /= counts[d];
  }
  return idx;
}

std::vector<double> GridSpec::node_coords() const {
  const std::size_t M = total(), D = dims();
  std::vector<double> out(M * D);
  for (std::size_t m = 0; m < M; ++m) {
    const auto idx = unflatten(m);
    for (std::size_t d = 0; d < D; ++d) out[m * D + d] = node(d, static_cast<long long>(idx[d]));
  }
  return out;
}

GridSpec GridSpec::coarsen(const std::vector<std::size_t>& patch) const {
  if (patch.size() != dims()) throw ContractError("patch rank does not match grid rank");
  GridSpec g = *this;
  for (std::size_t d = 0; d < dims(); ++d) {
    if (patch[d] == 0 || counts[d] % patch[d] != 0) {
      throw ContractError("patch size " + std::to_string(patch[d]) + " does not divide grid count " +
                          std::to_string(counts[d]) + " in dimension " + std::to_string(d));
    }
    g.counts[d] = counts[d] / patch[d];
  }
  return g;
}

double GridSpec::axis_distance(std::size_t d, double a, double b) const {
  const double diff = std::abs(a - b);
  if (!wrap[d]) return diff;
  const double r = std::fmod(diff, period(d));
  return std::min(r, period(d) - r);
}

GridAssignment GridAssignment::with_extra_slots(std::size_t extra) const {
  GridAssignment out = *this;
  out.max_slots = max_slots + extra;
  out.padded_index.assign(num_cells * out.max_slots, -1);
  out.mask.assign(num_cells * out.max_slots, 0);
  for (std::size_t c = 0; c < num_cells; ++c) {
    for (std::size_t s = 0; s < max_slots; ++s) {
      out.padded_index[c * out.max_slots + s] = padded_index[c * max_slots + s];
      out.mask[c * out.max_slots + s] = mask[c * max_slots + s];
    }
  }
  return out;
}

GridAssignment assign_to_grid(const std::vector<double>& xs, const GridSpec& grid, std::size_t k,
                              std::size_t slot_cap) {
  grid.validate();
  if (k < 1) throw ContractError("assign_to_grid: k must be >= 1");
  const std::size_t D = grid.dims();
  if (xs.size() % D != 0) throw DimensionError("assign_to_grid: coordinate array is not a multiple of the grid rank");
  const std::size_t N = xs.size() / D;
  const std::size_t M = grid.total();

  GridAssignment a;
  a.num_cells = M;
  a.num_points = N;
  a.k = k;
  a.cell_of.resize(N);
  a.cell_counts.assign(M, 0);
  std::vector<std::vector<std::size_t>> members(M);

  std::vector<std::size_t> idx(D);
  for (std::size_t n = 0; n < N; ++n) {
    const double* x = xs.data() + n * D;
    bool clamped = false;
    for (std::size_t d = 0; d < D; ++d) {
      if (!std::isfinite(x[d])) throw NumericError("assign_to_grid: non-finite coordinate at point " + std::to_string(n));
      idx[d] = nearest_cell(grid, d, x[d], clamped);
    }
    if (clamped) ++a.clamped;
    a.cell_of[n] = grid.flatten(idx);
    if (k == 1) {
      members[a.cell_of[n]].push_back(n);
      continue;
    }
    // the k nearest cells use only the k nearest in-range coordinates per axis
    std::vector<std::vector<std::size_t>> axes(D);
    for (std::size_t d = 0; d < D; ++d) {
      if (grid.wrap[d]) {
        axes[d] = axis_neighbours(grid, d, x[d], std::min(k, grid.counts[d]));
        continue;
      }
      const std::size_t first = idx[d] >= k - 1 ? idx[d] - (k - 1) : 0;
      const std::size_t last = std::min(grid.counts[d] - 1, idx[d] + (k - 1));
      for (std::size_t i = first; i <= last; ++i) axes[d].push_back(i);
    }
    std::vector<std::pair<double, std::size_t>> cand;
    for_each_product(axes, [&](const std::vector<std::size_t>& c) {
      double dist = 0;
      for (std::size_t d = 0; d < D; ++d) {
        const double e = grid.axis_distance(d, x[d], grid.node(d, static_cast<long long>(c[d])));
        dist += e * e;
      }
      cand.emplace_back(dist, grid.flatten(c));
    });
    std::sort(cand.begin(), cand.end());
    for (std::size_t i = 0; i < std::min(k, cand.size()); ++i) members[cand[i].second].push_back(n);
  }

  if (slot_cap > 0) {
    for (std::size_t m = 0; m < M; ++m) {
      auto& mem = members[m];
      if (mem.size() <= slot_cap) continue;
      const auto node_idx = grid.unflatten(m);
      std::vector<std::pair<double, std::size_t>> byd;
      for (auto n : mem) {
        double dist = 0;
        for (std::size_t d = 0; d < D; ++d) {
          const double e = grid.axis_distance(d, xs[n * D + d], grid.node(d, static_cast<long long>(node_idx[d])));
          dist += e * e;
        }
        byd.emplace_back(dist, n);
      }
      std::sort(byd.begin(), byd.end());
      a.dropped += mem.size() - slot_cap;
      mem.clear();
      for (std::size_t i = 0; i < slot_cap; ++i) mem.push_back(byd[i].second);
      std::sort(mem.begin(), mem.end());
    }
  }

  std::size_t max_slots = 1;
  for (std::size_t m = 0; m < M; ++m) {
    a.cell_counts[m] = members[m].size();
    max_slots = std::max(max_slots, members[m].size());
  }
  a.max_slots = max_slots;
  a.padded_index.assign(M * max_slots, -1);
  a.mask.assign(M * max_slots, 0);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t s = 0; s < members[m].size(); ++s) {
      a.padded_index[m * max_slots + s] = static_cast<std::int64_t>(members[m][s]);
      a.mask[m * max_slots + s] = 1;
    }
  }
  return a;
}

std::size_t NeighbourIndex::total_valid() const {
  return std::accumulate(valid_counts.begin(), valid_counts.end(), std::size_t{0});
}

std::size_t neighbours_per_dim(std::size_t k, std::size_t dims) {
  if (k < 1) throw ContractError("neighbour count k must be >= 1");
  std::size_t c = 1;
  while (true) {
    std::size_t p = 1;
    for (std::size_t d = 0; d < dims && p < k; ++d) p *= c;
    if (p >= k) return c;
    ++c;
  }
}

NeighbourIndex neighbour_indices(const std::vector<double>& targets, const GridSpec& grid, std::size_t k) {
  grid.validate();
  const std::size_t D = grid.dims();
  if (targets.size() % D != 0) throw DimensionError("neighbour_indices: coordinate array is not a multiple of the grid rank");
  const std::size_t N = targets.size() / D;
  NeighbourIndex out;
  out.num_targets = N;
  out.per_dim = neighbours_per_dim(k, D);
  out.slots = 1;
  for (std::size_t d = 0; d < D; ++d) out.slots *= std::min(out.per_dim, grid.counts[d]);
  out.index.assign(N * out.slots, -1);
  out.valid_counts.assign(N, 0);
  std::vector<std::vector<std::size_t>> axes(D);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t d = 0; d < D; ++d) {
      double x = targets[n * D + d];
      if (!std::isfinite(x)) throw DomainError("neighbour_indices: non-finite coordinate at target " + std::to_string(n));
      if (!grid.wrap[d]) x = std::clamp(x, grid.lo[d], grid.hi[d]);
      axes[d] = axis_neighbours(grid, d, x, out.per_dim);
    }
    std::size_t s = 0;
    for_each_product(axes, [&](const std::vector<std::size_t>& c) {
      out.index[n * out.slots + s++] = static_cast<std::int64_t>(grid.flatten(c));
    });
    if (s == 0) throw ContractError("neighbour_indices: target " + std::to_string(n) + " has no valid neighbour");
    out.valid_counts[n] = s;
  }
  return out;
}

}  // namespace gtnp
