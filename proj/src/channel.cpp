#include "adu/channel.hpp"

#include <cmath>

#include "adu/errors.hpp"

namespace adu::sim {

double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double LayoutConfig::noise_linear() const { return dbm_to_watt(noise_dbm); }
double LayoutConfig::power_linear() const { return dbm_to_watt(power_dbm); }

void LayoutConfig::validate() const {
  if (cells < 1) throw ConfigError("layout: cells must be >= 1");
  if (users_per_cell < 1)
    throw ConfigError("layout: users_per_cell must be >= 1");
  if (user_antennas < 1)
    throw ConfigError("layout: user_antennas must be >= 1");
  if (bs_antennas < user_antennas)
    throw ConfigError("layout: bs_antennas must be >= user_antennas");
  if (!(r_min_km > 0.0) || !(r_max_km > r_min_km))
    throw ConfigError("layout: need 0 < r_min_km < r_max_km");
  if (cell_spacing_km <= 0.0)
    throw ConfigError("layout: cell_spacing_km must be positive");
  if (shadow_sigma_db < 0.0)
    throw ConfigError("layout: shadow_sigma_db must be >= 0");
}

bool LayoutConfig::same_layout(const LayoutConfig& o) const {
  return cells == o.cells && users_per_cell == o.users_per_cell &&
         bs_antennas == o.bs_antennas && user_antennas == o.user_antennas &&
         r_min_km == o.r_min_km && r_max_km == o.r_max_km &&
         cell_spacing_km == o.cell_spacing_km &&
         shadow_sigma_db == o.shadow_sigma_db && noise_dbm == o.noise_dbm &&
         power_dbm == o.power_dbm;
}

double Geometry::distance_km(int user, int bs) const {
  double dx = user_x[user] - bs_x[bs];
  double dy = user_y[user] - bs_y[bs];
  return std::sqrt(dx * dx + dy * dy);
}

bool ChannelSample::operator==(const ChannelSample& o) const {
  if (seed != o.seed || cell_of != o.cell_of || Z.size() != o.Z.size() ||
      A.size() != o.A.size())
    return false;
  for (size_t i = 0; i < Z.size(); ++i)
    if (Z[i] != o.Z[i]) return false;
  for (size_t i = 0; i < A.size(); ++i)
    if (A[i] != o.A[i]) return false;
  return true;
}

bool Dataset::operator==(const Dataset& o) const {
  return layout.same_layout(o.layout) && samples == o.samples;
}

Geometry generate_layout(const LayoutConfig& cfg, uint64_t seed) {
  cfg.validate();
  Geometry geom;
  const int M = cfg.cells;
  const int K = cfg.users_per_cell;
  const double spacing = 2.0 * cfg.cell_spacing_km;

  // Square-ish grid of BS positions, row-major.
  int grid_cols = static_cast<int>(std::ceil(std::sqrt(double(M))));
  geom.bs_x.resize(M);
  geom.bs_y.resize(M);
  for (int i = 0; i < M; ++i) {
    geom.bs_x[i] = spacing * (i % grid_cols);
    geom.bs_y[i] = spacing * (i / grid_cols);
  }

  Rng rng = substream(seed, 0, /*tag=*/1);
  geom.user_x.resize(M * K);
  geom.user_y.resize(M * K);
  geom.cell_of.resize(M * K);
  const double r2min = cfg.r_min_km * cfg.r_min_km;
  const double r2max = cfg.r_max_km * cfg.r_max_km;
  for (int i = 0; i < M; ++i) {
    for (int k = 0; k < K; ++k) {
      int u = i * K + k;
      // Uniform over the annulus area.
      double r = std::sqrt(r2min + (r2max - r2min) * rng.uniform());
      double th = 2.0 * M_PI * rng.uniform();
      geom.user_x[u] = geom.bs_x[i] + r * std::cos(th);
      geom.user_y[u] = geom.bs_y[i] + r * std::sin(th);
      geom.cell_of[u] = i;
    }
  }
  return geom;
}

double path_loss_db(double d_km, double shadow_z) {
  if (!(d_km > 0.0)) throw DomainError("path_loss_db: distance must be > 0");
  if (!(shadow_z > 0.0))
    throw DomainError("path_loss_db: shadowing draw must be > 0");
  return 120.9 + 37.6 * std::log10(d_km) + 10.0 * std::log10(shadow_z);
}

double draw_shadowing(Rng& rng, double sigma_db) {
  double x_db = sigma_db * rng.normal();
  return std::pow(10.0, x_db / 10.0);
}

ChannelSample sample_channels(const Geometry& geom, const LayoutConfig& cfg,
                              uint64_t seed) {
  cfg.validate();
  const int M = cfg.cells;
  const int K = cfg.users_per_cell;
  const int N = M * K;
  const int Nr = cfg.user_antennas;
  const int Nt = cfg.bs_antennas;
  if (static_cast<int>(geom.cell_of.size()) != N)
    throw ConfigError("sample_channels: geometry does not match layout");

  Rng rng = substream(seed, 0, /*tag=*/2);
  ChannelSample s;
  s.seed = seed;
  s.cell_of = geom.cell_of;

  // H[u][j]: channel from BS j to user u.
  std::vector<CMat> links(static_cast<size_t>(N) * M);
  for (int u = 0; u < N; ++u) {
    for (int j = 0; j < M; ++j) {
      double z = draw_shadowing(rng, cfg.shadow_sigma_db);
      double beta = path_loss_db(geom.distance_km(u, j), z);
      double amp = std::sqrt(std::pow(10.0, -beta / 10.0));
      CMat h(Nr, Nt);
      for (int r = 0; r < Nr; ++r)
        for (int t = 0; t < Nt; ++t) h(r, t) = amp * rng.cnormal();
      links[static_cast<size_t>(u) * M + j] = std::move(h);
    }
  }

  s.Z.resize(N);
  s.A.resize(static_cast<size_t>(N) * N);
  for (int u = 0; u < N; ++u) {
    s.Z[u] = links[static_cast<size_t>(u) * M + geom.cell_of[u]];
    for (int v = 0; v < N; ++v)
      s.A[static_cast<size_t>(u) * N + v] =
          links[static_cast<size_t>(u) * M + geom.cell_of[v]];
  }
  return s;
}

ChannelSample make_sample(const LayoutConfig& cfg, uint64_t dataset_seed,
                          uint64_t index) {
  uint64_t s = dataset_seed;
  uint64_t per_sample = splitmix64(s) ^ (index * 0x9e3779b97f4a7c15ULL);
  Geometry geom = generate_layout(cfg, per_sample);
  return sample_channels(geom, cfg, per_sample);
}

Dataset generate_dataset(const LayoutConfig& cfg, uint64_t seed, int count) {
  cfg.validate();
  if (count < 1) throw ConfigError("generate_dataset: count must be >= 1");
  Dataset ds;
  ds.layout = cfg;
  ds.samples.resize(count);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < count; ++i)
    ds.samples[i] = make_sample(cfg, seed, static_cast<uint64_t>(i));
  return ds;
}

}  // namespace adu::sim
