#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adu/baselines.hpp"
#include "adu/config.hpp"
#include "adu/model.hpp"

namespace adu::harness {

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double mean_rate_bits = 0.0;
  double vib_penalty = 0.0;
  double alpha = 0.0;
};

struct TrainResult {
  model::AduModel model;
  std::vector<EpochLog> log;
};

// Trains an ADU model on the dataset (which must match cfg.layout). When
// resume_ckpt is set, parameters and optimizer state continue from there.
TrainResult train_model(const ExperimentConfig& cfg, const sim::Dataset& train_ds,
                        const std::optional<std::string>& resume_ckpt = {});

// Eval-mode batched evaluation; rates scored on true channels.
baselines::EvalStats evaluate_model(model::AduModel& m, const sim::Dataset& ds,
                                    int chunk = 256);

// Mean per-bit KL of the feedback distribution on a dataset (training-mode
// probabilities at the given alpha).
double mean_bit_kl(model::AduModel& m, const sim::Dataset& ds, double alpha,
                   int chunk = 256);

struct ResultRow {
  std::string axis;
  int axis_value = 0;
  std::string scheme;
  uint64_t seed = 0;
  double mean_rate_bits = 0.0;
  double std_rate_bits = 0.0;
  double per_user_rate_bits = 0.0;
  double wall_time_s = 0.0;
};

extern const char* const kResultSchemaVersion;  // heads every result CSV
extern const char* const kTrainLogSchemaVersion;

std::string result_csv_header();
std::string result_csv_line(const ResultRow& row);
void write_result_csv(const std::string& path,
                      const std::vector<ResultRow>& rows);
void write_train_log_csv(const std::string& path,
                         const std::vector<EpochLog>& log);

ResultRow row_from_stats(const baselines::EvalStats& st, const std::string& axis,
                         int axis_value, const std::string& scheme,
                         uint64_t seed, double wall_time_s);

// Runs the configured sweep; trains per grid point where the scheme needs a
// model, evaluates baselines otherwise. work_dir holds datasets/checkpoints.
std::vector<ResultRow> run_sweep(const ExperimentConfig& cfg,
                                 const std::string& work_dir);

void abort_if_not_finite(double loss, int epoch, int batch_index);

}  // namespace adu::harness
