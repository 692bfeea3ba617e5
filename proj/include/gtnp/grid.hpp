#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gtnp {

/// Axis-aligned regular grid. Nodes are cell centres:
/// node(d, i) = lo[d] + (i + 0.5) * (hi[d] - lo[d]) / counts[d].
/// Flat indices are row-major (last dimension fastest).
struct GridSpec {
  std::vector<std::size_t> counts;
  std::vector<double> lo, hi;
  std::vector<bool> wrap;
  // dims 0 and 1 hold latitude/longitude in degrees (affects kernel distances only)
  bool spherical = false;

  void validate() const;
  std::size_t dims() const { return counts.size(); }
  std::size_t total() const;
  double step(std::size_t d) const { return (hi[d] - lo[d]) / double(counts[d]); }
  double period(std::size_t d) const { return hi[d] - lo[d]; }
  /// Node coordinate for any integer lattice index (may lie outside the grid).
  double node(std::size_t d, long long i) const { return lo[d] + (double(i) + 0.5) * step(d); }
  std::size_t flatten(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  /// (M, D) row-major node coordinates.
  std::vector<double> node_coords() const;
  /// Grid whose cells are `patch` cells of this grid merged together.
  GridSpec coarsen(const std::vector<std::size_t>& patch) const;
  /// Distance along one dimension, periodic on wrap dimensions.
  double axis_distance(std::size_t d, double a, double b) const;

  bool operator==(const GridSpec&) const = default;
};

/// Context points bucketed onto grid cells, padded to a rectangular
/// (cells, max_slots) layout.
struct GridAssignment {
  std::size_t num_cells = 0;
  std::size_t num_points = 0;
  std::size_t max_slots = 1;
  std::size_t k = 1;
  std::vector<std::size_t> cell_of;         // nearest cell per point
  std::vector<std::size_t> cell_counts;     // real slots per cell
  std::vector<std::int64_t> padded_index;   // (cells, max_slots), -1 marks a dummy slot
  std::vector<std::uint8_t> mask;           // 1 for real slots
  std::size_t clamped = 0;                  // points outside a non-wrap extent
  std::size_t dropped = 0;                  // slots removed by the slot cap

  /// Same assignment with `extra` dummy slots appended to every cell.
  GridAssignment with_extra_slots(std::size_t extra) const;
};

/// Nearest-cell assignment by per-dimension rounding. Ties go to the lower
/// flat index; non-wrap coordinates outside the extent are clamped to the
/// edge cell. With k > 1 each point is also placed in its k nearest cells.
/// `slot_cap` > 0 keeps only the nearest `slot_cap` points of a cell.
GridAssignment assign_to_grid(const std::vector<double>& xs, const GridSpec& grid, std::size_t k = 1,
                              std::size_t slot_cap = 0);

struct NeighbourIndex {
  std::size_t num_targets = 0;
  std::size_t slots = 0;                  // padded neighbours per target
  std::size_t per_dim = 1;                // smallest c with c^D >= k
  std::vector<std::int64_t> index;        // (targets, slots), -1 marks invalid
  std::vector<std::size_t> valid_counts;  // valid neighbours per target

  std::size_t total_valid() const;
};

/// Smallest integer c with c^dims >= k.
std::size_t neighbours_per_dim(std::size_t k, std::size_t dims);

/// Hypercube nearest neighbours: the per_dim nearest lattice coordinates in
/// each dimension (ties toward the lower coordinate), wrapped modulo the count
/// on wrap dimensions and dropped when out of range elsewhere.
NeighbourIndex neighbour_indices(const std::vector<double>& targets, const GridSpec& grid, std::size_t k);

}  // namespace gtnp
