#include "gtnp/geomembed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gtnp/errors.hpp"

namespace gtnp {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void check_lat(double lat) {
  if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0) {
    throw DomainError("latitude " + std::to_string(lat) + " outside [-90, 90]");
  }
}

void check_lon(double lon) {
  if (!std::isfinite(lon)) throw DomainError("non-finite longitude");
}

}  // namespace

void FourierEmbedConfig::validate() const {
  if (num_wavelengths < 2) throw ConfigError("fourier embedding needs at least 2 wavelengths");
  if (!(lambda_min > 0) || !(lambda_max > lambda_min)) {
    throw ConfigError("fourier embedding needs 0 < lambda_min < lambda_max");
  }
}

std::vector<double> FourierEmbedConfig::wavelengths() const {
  validate();
  const std::size_t n = pairs();
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lambda_min;
    return out;
  }
  const double lo = std::log(lambda_min);
  const double hi = std::log(lambda_max);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(lo + (hi - lo) * double(i) / double(n - 1));
  out.back() = lambda_max;
  return out;
}

void fourier_embed_into(double t, const FourierEmbedConfig& cfg, const std::vector<double>& wavelengths, double* out) {
  if (!std::isfinite(t)) throw NumericError("fourier_embed: non-finite input");
  for (std::size_t i = 0; i < cfg.pairs(); ++i) {
    const double a = 2.0 * std::numbers::pi * t / wavelengths[i];
    out[2 * i] = std::cos(a);
    out[2 * i + 1] = std::sin(a);
  }
}

std::vector<double> fourier_embed(double t, const FourierEmbedConfig& cfg) {
  std::vector<double> out(cfg.width());
  fourier_embed_into(t, cfg, cfg.wavelengths(), out.data());
  return out;
}

void SphericalEmbedConfig::validate() const {
  if (num_legendre < 1) throw ConfigError("spherical embedding needs at least one degree");
}

double canonical_lon(double lon) {
  check_lon(lon);
  double w = std::fmod(lon + 180.0, 360.0);
  if (w < 0) w += 360.0;
  return w - 180.0;
}

void spherical_embed_into(double lat, double lon, const SphericalEmbedConfig& cfg, double* out) {
  cfg.validate();
  check_lat(lat);
  const double phi = canonical_lon(lon) * kDeg;
  // colatitude theta = 90 - lat: cos(theta) = sin(lat), sin(theta) = cos(lat)
  double x, s;
  if (lat == 90.0 || lat == -90.0) {
    x = lat > 0 ? 1.0 : -1.0;
    s = 0.0;
  } else {
    x = std::sin(lat * kDeg);
    s = std::cos(lat * kDeg);
  }
  const int L = static_cast<int>(cfg.num_legendre);
  // Fully normalized associated Legendre values P[l][m], including the
  // sqrt((2l+1)/4π (l-m)!/(l+m)!) factor.
  std::vector<double> P(static_cast<std::size_t>(L * L), 0.0);
  auto at = [&](int l, int m) -> double& { return P[static_cast<std::size_t>(l * L + m)]; };
  at(0, 0) = std::sqrt(1.0 / (4.0 * std::numbers::pi));
  for (int m = 1; m < L; ++m) at(m, m) = std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * at(m - 1, m - 1);
  for (int m = 0; m + 1 < L; ++m) at(m + 1, m) = std::sqrt(2.0 * m + 3.0) * x * at(m, m);
  for (int m = 0; m < L; ++m) {
    for (int l = m + 2; l < L; ++l) {
      const double a = std::sqrt((4.0 * l * l - 1.0) / (double(l) * l - double(m) * m));
      const double b = std::sqrt(((l - 1.0) * (l - 1.0) - double(m) * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
      at(l, m) = a * (x * at(l - 1, m) - b * at(l - 2, m));
    }
  }
  std::size_t k = 0;
  for (int l = 0; l < L; ++l) {
    for (int m = -l; m <= l; ++m) {
      if (m == 0) {
        out[k++] = at(l, 0);
      } else if (m > 0) {
        out[k++] = std::numbers::sqrt2 * at(l, m) * std::cos(m * phi);
      } else {
        out[k++] = std::numbers::sqrt2 * at(l, -m) * std::sin(-m * phi);
      }
    }
  }
}

std::vector<double> spherical_embed(double lat, double lon, const SphericalEmbedConfig& cfg) {
  std::vector<double> out(cfg.width());
  spherical_embed_into(lat, lon, cfg, out.data());
  return out;
}

double haversine(LatLon a, LatLon b) {
  check_lat(a.lat);
  check_lat(b.lat);
  check_lon(a.lon);
  check_lon(b.lon);
  const double dlat = (b.lat - a.lat) * kDeg;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double sl = std::sin(dlat / 2);
  const double so = std::sin(dlon / 2);
  const double h = sl * sl + std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * so * so;
  return 2.0 * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

}  // namespace gtnp
