#include "adu/baselines.hpp"

#include <cmath>

#include "adu/errors.hpp"
#include "adu/stats.hpp"

namespace adu::baselines {

namespace {

Eigen::VectorXcd vec_rm(const CMat& h) {
  Eigen::VectorXcd v(h.size());
  Index k = 0;
  for (Index r = 0; r < h.rows(); ++r)
    for (Index c = 0; c < h.cols(); ++c) v(k++) = h(r, c);
  return v;
}

CMat unvec_rm(const Eigen::VectorXcd& v, Index rows, Index cols) {
  CMat h(rows, cols);
  Index k = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) h(r, c) = v(k++);
  return h;
}

}  // namespace

RvqCodebook rvq_build(uint64_t seed, int bits, Index dim) {
  if (bits < 1) throw ConfigError("rvq_build: bits must be >= 1");
  if (bits > 24) throw ConfigError("rvq_build: bits above the practical cap (24)");
  if (dim < 1) throw ConfigError("rvq_build: dim must be >= 1");
  RvqCodebook cb;
  cb.seed = seed;
  cb.bits = bits;
  cb.dim = dim;
  const Index n = Index(1) << bits;
  cb.entries.resize(n, dim);
  Rng rng = substream(seed, 0, /*tag=*/11);
  for (Index i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (Index d = 0; d < dim; ++d) {
      std::complex<double> z = rng.cnormal();
      cb.entries(i, d) = z;
      norm2 += std::norm(z);
    }
    cb.entries.row(i) /= std::sqrt(norm2);
  }
  return cb;
}

RvqIndex rvq_quantize(const RvqCodebook& cb, const CMat& h) {
  Eigen::VectorXcd v = vec_rm(h);
  if (v.size() != cb.dim) throw DimensionError("rvq_quantize: dimension mismatch");
  double gain = v.norm();
  if (!(gain > 0)) throw DomainError("rvq_quantize: zero channel");
  Eigen::VectorXcd dir = v / gain;
  // |<c_i, dir>| with <a,b> = a^H b, vectorized over the codebook rows.
  Eigen::VectorXd scores = (cb.entries.conjugate() * dir).cwiseAbs();
  RvqIndex out;
  scores.maxCoeff(&out.index);
  out.gain = gain;
  return out;
}

CMat rvq_reconstruct(const RvqCodebook& cb, const RvqIndex& q, const CMat& h) {
  if (q.index < 0 || q.index >= cb.size())
    throw DimensionError("rvq_reconstruct: index out of range");
  Eigen::VectorXcd c = cb.entries.row(q.index).transpose();
  Eigen::VectorXcd v = vec_rm(h);
  std::complex<double> ip = c.dot(v);  // c^H v
  std::complex<double> phase =
      std::abs(ip) > 0 ? ip / std::abs(ip) : std::complex<double>(1, 0);
  return unvec_rm(q.gain * phase * c, h.rows(), h.cols());
}

double chordal_distance(const CMat& a, const CMat& b) {
  Eigen::VectorXcd va = vec_rm(a), vb = vec_rm(b);
  double na = va.norm(), nb = vb.norm();
  if (!(na > 0) || !(nb > 0))
    throw DomainError("chordal_distance: zero direction");
  double ip = std::abs(va.dot(vb)) / (na * nb);
  return std::sqrt(std::max(0.0, 1.0 - ip * ip));
}

EvalStats eval_with_reconstructor(const sim::Dataset& ds,
                                  const Reconstructor& rec, double sigma2,
                                  double power, int iters) {
  if (ds.samples.empty()) throw ContractError("eval: empty dataset");
  EvalStats st;
  st.sum_rates_bits.resize(ds.samples.size());
  const int n_users = ds.layout.num_users();
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const sim::ChannelSample& truth = ds.samples[i];
    sim::ChannelSample seen = rec(truth);
    wmmse::SolveResult r = wmmse::run_wmmse(seen, sigma2, power, iters);
    wmmse::RateReport rep = wmmse::sum_rate(truth, r.V, sigma2);
    st.sum_rates_bits[i] = rep.sum_bits;
  }
  st.mean_rate_bits = stats::mean(st.sum_rates_bits);
  st.std_rate_bits = stats::stddev(st.sum_rates_bits);
  st.per_user_mean_bits = st.mean_rate_bits / n_users;
  return st;
}

EvalStats eval_rvq_baseline(const sim::Dataset& ds, int bits, double sigma2,
                            double power, int iters, uint64_t seed) {
  const int M = ds.layout.cells;
  const int K = ds.layout.users_per_cell;
  const int N = ds.layout.num_users();
  const Index dim =
      static_cast<Index>(ds.layout.user_antennas) * ds.layout.bs_antennas;

  // Even split of the B bits across the M reported links, remainder to the
  // direct link; 0-bit links carry no information and reconstruct as zero.
  const int base = bits / M;
  const int direct_bits = base + bits % M;
  RvqCodebook direct_cb, cross_cb;
  if (direct_bits >= 1) direct_cb = rvq_build(seed, direct_bits, dim);
  if (base >= 1 && M > 1) cross_cb = rvq_build(seed + 1, base, dim);

  Reconstructor rec = [&, M, K, N](const sim::ChannelSample& s) {
    sim::ChannelSample out = s;
    // Quantize per (user, BS) link once, then fan out to the pair tensor.
    std::vector<CMat> links(static_cast<size_t>(N) * M);
    for (int u = 0; u < N; ++u) {
      for (int j = 0; j < M; ++j) {
        const CMat& h = s.cross(u, j * K);
        bool is_direct = (j == s.cell_of[u]);
        const RvqCodebook* cb =
            is_direct ? (direct_bits >= 1 ? &direct_cb : nullptr)
                      : (base >= 1 ? &cross_cb : nullptr);
        CMat& dst = links[static_cast<size_t>(u) * M + j];
        if (cb == nullptr) {
          dst = CMat::Zero(h.rows(), h.cols());
        } else {
          dst = rvq_reconstruct(*cb, rvq_quantize(*cb, h), h);
        }
      }
    }
    for (int u = 0; u < N; ++u) {
      out.Z[u] = links[static_cast<size_t>(u) * M + s.cell_of[u]];
      for (int v = 0; v < N; ++v)
        out.A[static_cast<size_t>(u) * N + v] =
            links[static_cast<size_t>(u) * M + s.cell_of[v]];
    }
    return out;
  };
  return eval_with_reconstructor(ds, rec, sigma2, power, iters);
}

EvalStats eval_perfect_csi(const sim::Dataset& ds, double sigma2, double power,
                           int iters) {
  return eval_with_reconstructor(
      ds, [](const sim::ChannelSample& s) { return s; }, sigma2, power, iters);
}

}  // namespace adu::baselines
