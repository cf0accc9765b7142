#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adu/channel.hpp"
#include "adu/nn.hpp"
#include "adu/wmmse.hpp"

namespace adu::model {

using ad::CMat;
using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

enum class CrossLinkPolicy { Full, DirectOnly };

std::string to_string(CrossLinkPolicy p);
CrossLinkPolicy crosslink_policy_from_string(const std::string& s);

struct ModelConfig {
  std::vector<Index> encoder_hidden = {1024, 512, 256};
  std::vector<Index> pre_hidden = {512, 2048, 2048};
  int feedback_bits = 8;          // B
  int wmmse_iters = 4;            // T
  CrossLinkPolicy policy = CrossLinkPolicy::Full;
  double gamma = 0.0;             // VIB weight
  bool vib = false;
  nn::AnnealSchedule anneal;
  void validate() const;
};

// Global standardization of the encoder input components, estimated on the
// training set and stored with the checkpoint.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

struct FeedbackBits {
  std::vector<double> bits;   // +-1, length B
  std::vector<double> soft;   // pre-binarization latent u
  std::vector<double> probs;  // sigm(alpha*u), retained in training mode
};

// Shared-weight encoder + BS-side pre-processor around the unfolded solver.
struct AduModel {
  sim::LayoutConfig layout;
  ModelConfig cfg;
  NormStats norm;
  nn::ParamStore store;
  nn::Mlp encoder;
  nn::Mlp pre;

  int encoder_in() const;
  int pre_in() const;
  int pre_out() const;

  static AduModel init(const sim::LayoutConfig& layout, const ModelConfig& cfg,
                       const NormStats& norm, uint64_t seed);

  void save(const std::string& ckpt_path) const;
  static AduModel load(const std::string& ckpt_path);
};

// Constant per-batch inputs assembled from channel samples.
struct BatchInputs {
  wmmse::SystemShape shape;
  Tensor enc_in;   // [1, S*N, 2*M*Nt*Nr], standardized
  Tensor z_true;   // [S*N, Nr, Nt]
  Tensor a_true;   // [S*N*N, Nr, Nt]
};

NormStats compute_norm_stats(const sim::Dataset& ds);
BatchInputs make_batch(const sim::Dataset& ds, const std::vector<int>& idx,
                       const NormStats& norm);

struct PipelineVars {
  Var soft;       // [1, S*N, B]
  Var bits;       // [1, S*N, B]
  Var probs;      // train mode only
  Var htilde;     // [S*N*M, Nr, Nt] (full) or [S*N, Nr, Nt] (direct-only)
  Var beams;      // [S*N, Nt, Nr]
  Var rates;      // [S*N, 1, 1], bits/channel use, scored on true channels
  Var mean_rate;  // [1,1,1], batch-mean sum rate
  Var vib;        // [1,1,1], per-user mean KL (train mode)
};

PipelineVars build_pipeline(Graph& g, nn::Binding& bind, AduModel& m,
                            const BatchInputs& in, double alpha, bool train);

// loss = -mean_rate + gamma * vib (gamma = 0 when VIB is off).
Var build_total_loss(const PipelineVars& p, double gamma);

// ---- Value-level ops over single samples (eval mode). ----

FeedbackBits encode(AduModel& m, const sim::ChannelSample& s, int user,
                    double alpha, bool train_mode = false);

// q_cell is the cell's concatenated bit vector (K*B entries of +-1); the
// user index selects whose bits lead the shared net's rotated input.
std::vector<CMat> preprocess(AduModel& m, const std::vector<double>& q_cell,
                             int user);

struct EndToEndResult {
  wmmse::BeamformerSet beams;
  wmmse::RateReport report;
  std::vector<FeedbackBits> feedback;
};
EndToEndResult forward_end_to_end(AduModel& m, const sim::ChannelSample& s,
                                  double alpha);

// Batch-mean of per-user KL(Bern(p) || Bern(1/2)) summed over bits, nats.
double vib_penalty(const std::vector<FeedbackBits>& batch);
double total_loss(double mean_sum_rate, double penalty, double gamma);

}  // namespace adu::model
