#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adu/channel.hpp"
#include "adu/model.hpp"

namespace adu::harness {

enum class SweepAxis { Bits, Users, Antennas };
std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct TrainingConfig {
  int epochs = 200;
  int batch_size = 1024;
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  int train_samples = 204800;
  int test_samples = 1000;
  void validate() const;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::Bits;
  std::vector<int> grid = {4, 8, 12};
  std::vector<std::string> schemes = {"adu", "rvq", "perfect"};
  void validate() const;
};

struct ExperimentConfig {
  sim::LayoutConfig layout;
  model::ModelConfig model;
  TrainingConfig training;
  SweepConfig sweep;
  void validate() const;
};

// Flat sectioned key=value text; '#' starts a comment; unknown sections or
// keys are configuration errors. Environment variables ADU_<SECTION>_<KEY>
// override file values.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path, bool apply_env = true);
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace adu::harness
