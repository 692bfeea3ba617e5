#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gtnp/errors.hpp"
#include "gtnp/geomembed.hpp"

using namespace gtnp;
constexpr double kPi = std::numbers::pi;

TEST(Fourier, ZeroTimeGivesUnitCosines) {
  FourierEmbedConfig cfg;
  const auto f = fourier_embed(0.0, cfg);
  ASSERT_EQ(f.size(), cfg.width());
  for (std::size_t i = 0; i < cfg.pairs(); ++i) {
    EXPECT_EQ(f[2 * i], 1.0);
    EXPECT_EQ(f[2 * i + 1], 0.0);
  }
}

TEST(Fourier, HalfPeriodFlipsPair) {
  FourierEmbedConfig cfg;
  const auto lambdas = cfg.wavelengths();
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const auto f = fourier_embed(lambdas[i] / 2, cfg);
    EXPECT_NEAR(f[2 * i], -1.0, 1e-12);
    EXPECT_NEAR(f[2 * i + 1], 0.0, 1e-12);
  }
}

TEST(Fourier, DefaultConfigMatchesLogSpaceAndDirectTrig) {
  FourierEmbedConfig cfg{10, 1.0, 8760.0};
  const auto lambdas = cfg.wavelengths();
  ASSERT_EQ(lambdas.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const double oracle = std::exp(std::log(1.0) + (std::log(8760.0) - std::log(1.0)) * double(i) / 4.0);
    EXPECT_NEAR(lambdas[i] / oracle, 1.0, 1e-12);
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = u(rng);
    const auto f = fourier_embed(t, cfg);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(f[2 * i], std::cos(2 * kPi * t / lambdas[i]), 1e-12);
      EXPECT_NEAR(f[2 * i + 1], std::sin(2 * kPi * t / lambdas[i]), 1e-12);
    }
  }
}

TEST(Fourier, PairsLieOnUnitCircle) {
  FourierEmbedConfig cfg{64, 0.1, 100.0};
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const auto f = fourier_embed(n(rng), cfg);
    for (std::size_t i = 0; i < cfg.pairs(); ++i) EXPECT_NEAR(f[2 * i] * f[2 * i] + f[2 * i + 1] * f[2 * i + 1], 1.0, 1e-12);
  }
}

TEST(Fourier, Errors) {
  EXPECT_THROW(fourier_embed(std::nan(""), FourierEmbedConfig{}), NumericError);
  EXPECT_THROW(fourier_embed(INFINITY, FourierEmbedConfig{}), NumericError);
  EXPECT_THROW(FourierEmbedConfig({1, 1.0, 2.0}).validate(), ConfigError);
  EXPECT_THROW(FourierEmbedConfig({4, 2.0, 1.0}).validate(), ConfigError);
}

namespace {

double fact(int n) { return n <= 1 ? 1.0 : n * fact(n - 1); }

// Associated Legendre functions without the Condon-Shortley phase, l <= 4.
double legendre(int l, int m, double x, double s) {
  const int key = l * 10 + m;
  switch (key) {
    case 0: return 1;
    case 10: return x;
    case 11: return s;
    case 20: return 0.5 * (3 * x * x - 1);
    case 21: return 3 * x * s;
    case 22: return 3 * s * s;
    case 30: return 0.5 * (5 * x * x * x - 3 * x);
    case 31: return 1.5 * (5 * x * x - 1) * s;
    case 32: return 15 * x * s * s;
    case 33: return 15 * s * s * s;
    case 40: return (35 * std::pow(x, 4) - 30 * x * x + 3) / 8;
    case 41: return 2.5 * (7 * x * x * x - 3 * x) * s;
    case 42: return 7.5 * (7 * x * x - 1) * s * s;
    case 43: return 105 * x * s * s * s;
    case 44: return 105 * std::pow(s, 4);
  }
  return NAN;
}

double real_harmonic(int l, int m, double lat, double lon) {
  const double theta = (90.0 - lat) * kPi / 180.0, phi = lon * kPi / 180.0;
  const int am = std::abs(m);
  const double n = std::sqrt((2 * l + 1) / (4 * kPi) * fact(l - am) / fact(l + am));
  const double p = n * legendre(l, am, std::cos(theta), std::sin(theta));
  if (m == 0) return p;
  return m > 0 ? std::sqrt(2.0) * p * std::cos(m * phi) : std::sqrt(2.0) * p * std::sin(am * phi);
}

}  // namespace

TEST(Spherical, DegreeZeroIsConstant) {
  SphericalEmbedConfig cfg{3};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(spherical_embed(lat(rng), lon(rng), cfg)[0], 1 / std::sqrt(4 * kPi), 1e-15);
}

TEST(Spherical, LongitudePeriodic) {
  SphericalEmbedConfig cfg{10};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 100; ++i) {
    const double a = lat(rng), b = lon(rng);
    const auto e0 = spherical_embed(a, b, cfg), e1 = spherical_embed(a, b + 360, cfg);
    for (std::size_t j = 0; j < e0.size(); ++j) EXPECT_NEAR(e0[j], e1[j], 1e-12);
  }
  EXPECT_DOUBLE_EQ(canonical_lon(180.0), -180.0);
  EXPECT_DOUBLE_EQ(canonical_lon(-180.0), -180.0);
  EXPECT_DOUBLE_EQ(canonical_lon(540.0), -180.0);
  EXPECT_DOUBLE_EQ(canonical_lon(-190.0), 170.0);
}

TEST(Spherical, MatchesClosedFormUpToDegreeFour) {
  SphericalEmbedConfig cfg{5};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = lat(rng), b = lon(rng);
    const auto e = spherical_embed(a, b, cfg);
    ASSERT_EQ(e.size(), 25u);
    for (int l = 0; l <= 4; ++l)
      for (int m = -l; m <= l; ++m) EXPECT_NEAR(e[l * l + m + l], real_harmonic(l, m, a, b), 1e-9) << l << " " << m;
  }
}

TEST(Spherical, OrthonormalOverTheSphere) {
  SphericalEmbedConfig cfg{4};
  const int nlat = 180, nlon = 360;
  std::vector<double> gram(16 * 16, 0.0);
  for (int i = 0; i < nlat; ++i) {
    const double lat = -90 + (i + 0.5) * 180.0 / nlat;
    const double w = std::cos(lat * kPi / 180) * (kPi / nlat) * (2 * kPi / nlon);
    for (int j = 0; j < nlon; ++j) {
      const auto e = spherical_embed(lat, -180 + (j + 0.5) * 360.0 / nlon, cfg);
      for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) gram[a * 16 + b] += w * e[a] * e[b];
    }
  }
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) EXPECT_NEAR(gram[a * 16 + b], a == b ? 1.0 : 0.0, 1e-3) << a << "," << b;
}

TEST(Spherical, PolesIgnoreLongitude) {
  SphericalEmbedConfig cfg{10};
  for (double pole : {-90.0, 90.0}) {
    const auto ref = spherical_embed(pole, 0.0, cfg);
    for (double lon : {-180.0, -73.0, 45.5, 179.9}) {
      const auto e = spherical_embed(pole, lon, cfg);
      for (std::size_t j = 0; j < e.size(); ++j) EXPECT_NEAR(e[j], ref[j], 1e-12);
    }
  }
}

TEST(Spherical, Errors) {
  SphericalEmbedConfig cfg{3};
  EXPECT_THROW(spherical_embed(90.5, 0, cfg), DomainError);
  EXPECT_THROW(spherical_embed(-91, 0, cfg), DomainError);
  EXPECT_THROW(spherical_embed(std::nan(""), 0, cfg), DomainError);
  EXPECT_THROW(spherical_embed(0, INFINITY, cfg), DomainError);
  EXPECT_THROW(SphericalEmbedConfig{0}.validate(), ConfigError);
}

TEST(Haversine, Examples) {
  EXPECT_EQ(haversine({12.5, -40}, {12.5, -40}), 0.0);
  EXPECT_NEAR(haversine({0, 0}, {0, 180}), kPi, 1e-12);
  EXPECT_NEAR(haversine({0, 0}, {0, 90}), kPi / 2, 1e-12);
  EXPECT_NEAR(haversine({90, 0}, {-90, 0}), kPi, 1e-12);
  EXPECT_NEAR(haversine({0, 179}, {0, -179}), 2 * kPi / 180, 1e-12);
}

TEST(Haversine, SymmetricAndTriangle) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 1000; ++i) {
    LatLon a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)}, c{lat(rng), lon(rng)};
    EXPECT_EQ(haversine(a, b), haversine(b, a));
    EXPECT_LE(haversine(a, c), haversine(a, b) + haversine(b, c) + 1e-9);
    EXPECT_GT(haversine(a, b), 0.0);
  }
}
