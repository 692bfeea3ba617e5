#pragma once

#include <cstddef>
#include <vector>

namespace gtnp {

struct FourierEmbedConfig {
  std::size_t num_wavelengths = 10;
  double lambda_min = 1.0;
  double lambda_max = 8760.0;

  void validate() const;
  std::size_t pairs() const { return num_wavelengths / 2; }
  std::size_t width() const { return 2 * pairs(); }
  /// Log-spaced wavelengths from lambda_min to lambda_max inclusive.
  std::vector<double> wavelengths() const;
};

/// Features laid out as [cos(2πt/λ_0), sin(2πt/λ_0), cos(2πt/λ_1), ...].
std::vector<double> fourier_embed(double t, const FourierEmbedConfig& cfg);
void fourier_embed_into(double t, const FourierEmbedConfig& cfg, const std::vector<double>& wavelengths, double* out);

struct SphericalEmbedConfig {
  std::size_t num_legendre = 10;

  void validate() const;
  std::size_t width() const { return num_legendre * num_legendre; }
};

/// Wraps longitude into [-180, 180).
double canonical_lon(double lon);

/// Real orthonormal spherical harmonics (no Condon-Shortley phase) evaluated
/// at colatitude 90 - lat. Ordered by degree l, then order m = -l..l, where
/// negative m uses sin(|m| lon) and positive m uses cos(m lon).
std::vector<double> spherical_embed(double lat, double lon, const SphericalEmbedConfig& cfg);
void spherical_embed_into(double lat, double lon, const SphericalEmbedConfig& cfg, double* out);

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Great-circle distance on the unit sphere, in radians.
double haversine(LatLon a, LatLon b);

}  // namespace gtnp
