#pragma once

#include <functional>
#include <vector>

#include "adu/channel.hpp"
#include "adu/wmmse.hpp"

namespace adu::baselines {

using ad::CMat;
using ad::Index;

// Random vector quantization codebook over vectorized channel directions.
struct RvqCodebook {
  uint64_t seed = 0;
  int bits = 0;
  Index dim = 0;
  Eigen::MatrixXcd entries;  // 2^bits rows, each a unit-norm direction
  Index size() const { return entries.rows(); }
};

RvqCodebook rvq_build(uint64_t seed, int bits, Index dim);

struct RvqIndex {
  Index index = 0;
  double gain = 0.0;  // ||vec(H)||, assumed known at the BS
};

// Nearest codeword by |<c, vec(H)>| / ||vec(H)||; vec() is row-major.
RvqIndex rvq_quantize(const RvqCodebook& cb, const CMat& h);

// gain * unvec(codeword), rotated so <codeword, vec(H)> is real nonnegative.
CMat rvq_reconstruct(const RvqCodebook& cb, const RvqIndex& q, const CMat& h);

// Chordal distance between the directions of two equally shaped matrices.
double chordal_distance(const CMat& a, const CMat& b);

// Per-sample sum rates plus aggregates; all schemes score against the true
// channels with the shared sum_rate path.
struct EvalStats {
  std::vector<double> sum_rates_bits;
  double mean_rate_bits = 0.0;
  double std_rate_bits = 0.0;
  double per_user_mean_bits = 0.0;
};

// Replaces the channels seen by the beamformer; the identity reproduces the
// perfect-CSI evaluation exactly.
using Reconstructor =
    std::function<sim::ChannelSample(const sim::ChannelSample&)>;

EvalStats eval_with_reconstructor(const sim::Dataset& ds,
                                  const Reconstructor& rec, double sigma2,
                                  double power, int iters);

// Quantizes every link each user reports: the B bit budget is split evenly
// across the M links, remainder to the direct link; links allotted zero bits
// reconstruct as zero.
EvalStats eval_rvq_baseline(const sim::Dataset& ds, int bits, double sigma2,
                            double power, int iters, uint64_t seed = 1);

EvalStats eval_perfect_csi(const sim::Dataset& ds, double sigma2, double power,
                           int iters);

}  // namespace adu::baselines
