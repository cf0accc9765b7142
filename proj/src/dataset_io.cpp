#include "adu/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "adu/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset format is little-endian");

namespace adu::sim {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'U', 'D'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("dataset: truncated file");
  return v;
}

void put_matrix(std::ofstream& os, const CMat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      put(os, m(i, j).real());
      put(os, m(i, j).imag());
    }
}

void get_matrix(std::ifstream& is, CMat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double re = get<double>(is);
      double im = get<double>(is);
      m(i, j) = {re, im};
    }
}

}  // namespace

size_t dataset_header_size() {
  return 4 + 4 + 4 * sizeof(uint32_t) + 6 * sizeof(double) + sizeof(uint64_t);
}

size_t dataset_record_size(const LayoutConfig& layout) {
  size_t n = layout.num_users();
  size_t per_mat =
      static_cast<size_t>(layout.user_antennas) * layout.bs_antennas;
  return sizeof(uint64_t) + (n + n * n) * per_mat * 2 * sizeof(double);
}

void write_dataset(const Dataset& ds, const std::string& path) {
  ds.layout.validate();
  if (ds.samples.empty()) throw ConfigError("write_dataset: empty dataset");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_dataset: cannot open " + path);

  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, static_cast<uint32_t>(ds.layout.cells));
  put(os, static_cast<uint32_t>(ds.layout.users_per_cell));
  put(os, static_cast<uint32_t>(ds.layout.bs_antennas));
  put(os, static_cast<uint32_t>(ds.layout.user_antennas));
  put(os, ds.layout.r_min_km);
  put(os, ds.layout.r_max_km);
  put(os, ds.layout.cell_spacing_km);
  put(os, ds.layout.shadow_sigma_db);
  put(os, ds.layout.noise_dbm);
  put(os, ds.layout.power_dbm);
  put(os, static_cast<uint64_t>(ds.samples.size()));

  const int N = ds.layout.num_users();
  for (const ChannelSample& s : ds.samples) {
    if (static_cast<int>(s.Z.size()) != N ||
        s.A.size() != static_cast<size_t>(N) * N)
      throw FormatError("write_dataset: sample does not match header layout");
    put(os, s.seed);
    for (const CMat& m : s.Z) put_matrix(os, m);
    for (const CMat& m : s.A) put_matrix(os, m);
  }
  if (!os) throw IoError("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_dataset: cannot open " + path);

  is.seekg(0, std::ios::end);
  const uint64_t file_size = static_cast<uint64_t>(is.tellg());
  is.seekg(0, std::ios::beg);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("read_dataset: bad magic");
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw FormatError("read_dataset: unsupported format version " +
                      std::to_string(version));

  Dataset ds;
  ds.layout.cells = static_cast<int>(get<uint32_t>(is));
  ds.layout.users_per_cell = static_cast<int>(get<uint32_t>(is));
  ds.layout.bs_antennas = static_cast<int>(get<uint32_t>(is));
  ds.layout.user_antennas = static_cast<int>(get<uint32_t>(is));
  ds.layout.r_min_km = get<double>(is);
  ds.layout.r_max_km = get<double>(is);
  ds.layout.cell_spacing_km = get<double>(is);
  ds.layout.shadow_sigma_db = get<double>(is);
  ds.layout.noise_dbm = get<double>(is);
  ds.layout.power_dbm = get<double>(is);
  ds.layout.validate();
  uint64_t count = get<uint64_t>(is);
  if (count == 0) throw FormatError("read_dataset: empty dataset");

  const uint64_t expect =
      dataset_header_size() + count * dataset_record_size(ds.layout);
  if (file_size != expect)
    throw FormatError("read_dataset: file size mismatch (corrupt or truncated)");

  const int N = ds.layout.num_users();
  const int Nr = ds.layout.user_antennas;
  const int Nt = ds.layout.bs_antennas;
  const int K = ds.layout.users_per_cell;
  ds.samples.resize(count);
  for (uint64_t si = 0; si < count; ++si) {
    ChannelSample& s = ds.samples[si];
    s.seed = get<uint64_t>(is);
    s.cell_of.resize(N);
    for (int u = 0; u < N; ++u) s.cell_of[u] = u / K;
    s.Z.assign(N, CMat(Nr, Nt));
    s.A.assign(static_cast<size_t>(N) * N, CMat(Nr, Nt));
    for (CMat& m : s.Z) get_matrix(is, m);
    for (CMat& m : s.A) get_matrix(is, m);
  }
  return ds;
}

}  // namespace adu::sim
