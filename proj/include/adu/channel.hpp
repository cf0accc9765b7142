#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adu/rng.hpp"
#include "adu/tensor.hpp"

namespace adu::sim {

using ad::CMat;

// Multi-cell network layout and radio parameters. Distances in km,
// powers in dBm.
struct LayoutConfig {
  int cells = 9;              // M
  int users_per_cell = 4;     // K, so N = M*K
  int bs_antennas = 64;       // Nt
  int user_antennas = 2;      // Nr
  double r_min_km = 0.01;
  double r_max_km = 1.0;
  double cell_spacing_km = 1.0;  // half cell-to-cell distance
  double shadow_sigma_db = 8.0;
  double noise_dbm = -114.0;
  double power_dbm = 35.0;

  int num_users() const { return cells * users_per_cell; }
  double noise_linear() const;  // watts
  double power_linear() const;  // watts
  void validate() const;        // throws ConfigError
  bool same_layout(const LayoutConfig& o) const;
};

double dbm_to_watt(double dbm);

struct Geometry {
  std::vector<double> bs_x, bs_y;      // per cell
  std::vector<double> user_x, user_y;  // per user, cell-major
  std::vector<int> cell_of;            // user -> serving cell
  double distance_km(int user, int bs) const;
};

// One network realization. Z holds the direct links, A all N*N ordered
// (receiver, interferer) pairs with A[u][v] = H_{u, cell(v)}.
struct ChannelSample {
  std::vector<CMat> Z;  // N matrices, Nr x Nt
  std::vector<CMat> A;  // N*N matrices, pair-major u*N+v
  std::vector<int> cell_of;
  uint64_t seed = 0;

  const CMat& direct(int user) const { return Z[user]; }
  const CMat& cross(int user, int interferer) const {
    return A[static_cast<size_t>(user) * cell_of.size() + interferer];
  }
  bool operator==(const ChannelSample& o) const;
};

struct Dataset {
  LayoutConfig layout;
  std::vector<ChannelSample> samples;
  bool operator==(const Dataset& o) const;
};

// Uniform user placement in the per-cell annulus; BSs on a square grid with
// spacing twice the half cell-to-cell distance.
Geometry generate_layout(const LayoutConfig& cfg, uint64_t seed);

// beta = 120.9 + 37.6 log10(d) + 10 log10(z), d in km.
double path_loss_db(double d_km, double shadow_z);

// Draws the log-normal shadowing variable z with 10 log10(z) ~ N(0, sigma^2).
double draw_shadowing(Rng& rng, double sigma_db);

ChannelSample sample_channels(const Geometry& geom, const LayoutConfig& cfg,
                              uint64_t seed);

// Convenience: layout + channels from one per-sample stream.
ChannelSample make_sample(const LayoutConfig& cfg, uint64_t dataset_seed,
                          uint64_t index);

Dataset generate_dataset(const LayoutConfig& cfg, uint64_t seed, int count);

}  // namespace adu::sim
