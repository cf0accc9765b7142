#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "adu/config.hpp"
#include "adu/dataset_io.hpp"
#include "adu/errors.hpp"
#include "adu/gradcheck.hpp"
#include "adu/train.hpp"
#include "doctest.h"

using namespace adu;
using namespace adu::harness;

namespace {

const char* kSmokeConfig = R"(
# Smoke profile for tests.
[layout]
cells = 2
users_per_cell = 2
bs_antennas = 4
user_antennas = 2

[model]
encoder_hidden = 16,12
pre_hidden = 16,16
feedback_bits = 4
wmmse_iters = 2
gamma = 0.01
vib = on

[training]
epochs = 2
batch_size = 64
train_samples = 256
test_samples = 32
seed = 11

[sweep]
axis = bits
grid = 2,3
schemes = rvq,perfect
)";

ExperimentConfig smoke_config() { return parse_config_text(kSmokeConfig); }

}  // namespace

TEST_CASE("config parsing: values, defaults, errors") {
  ExperimentConfig cfg = smoke_config();
  CHECK(cfg.layout.cells == 2);
  CHECK(cfg.layout.r_max_km == 1.0);  // default retained
  CHECK(cfg.model.encoder_hidden == std::vector<ad::Index>{16, 12});
  CHECK(cfg.model.vib);
  CHECK(cfg.training.batch_size == 64);
  CHECK(cfg.sweep.grid == std::vector<int>{2, 3});
  cfg.validate();

  CHECK_THROWS_AS(parse_config_text("[layout]\nbogus_key = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[nosuch]\ncells = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("cells = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[layout]\ncells = abc\n"), ConfigError);

  ExperimentConfig bad = smoke_config();
  bad.training.batch_size = 10000;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ExperimentConfig bad2 = smoke_config();
  bad2.sweep.grid.clear();
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("environment overrides mirror config keys") {
  setenv("ADU_LAYOUT_CELLS", "5", 1);
  setenv("ADU_MODEL_FEEDBACK_BITS", "6", 1);
  ExperimentConfig cfg = smoke_config();
  apply_env_overrides(cfg);
  CHECK(cfg.layout.cells == 5);
  CHECK(cfg.model.feedback_bits == 6);
  unsetenv("ADU_LAYOUT_CELLS");
  unsetenv("ADU_MODEL_FEEDBACK_BITS");

  setenv("ADU_LAYOUT_NO_SUCH_KEY", "1", 1);
  ExperimentConfig cfg2 = smoke_config();
  CHECK_THROWS_AS(apply_env_overrides(cfg2), ConfigError);
  unsetenv("ADU_LAYOUT_NO_SUCH_KEY");
}

TEST_CASE("gradcheck: all families pass and the report covers them") {
  std::vector<GradCheckItem> items = run_gradcheck(7);
  CHECK(gradcheck_all_pass(items));
  std::vector<std::string> need = {"matmul",   "inverse",           "logdet",
                                   "dense_relu", "batchnorm",
                                   "sign_st_surrogate", "f_wmmse_composed"};
  for (const std::string& fam : need) {
    bool found = false;
    for (const auto& it : items) found = found || it.family == fam;
    CHECK_MESSAGE(found, "family missing: ", fam);
  }
}

TEST_CASE("gradcheck harness flags an injected wrong gradient rule") {
  // Fixture: the builder computes a different function for the reverse-mode
  // pass than for the value probes, which is what a broken backward rule
  // looks like to the checker.
  ExtraFamily broken = [](uint64_t) {
    int calls = 0;
    auto build = [calls](ad::Graph& g, std::vector<ad::Var>& lv) mutable {
      ++calls;
      double slope = calls == 1 ? 1.0 : 2.0;
      return ad::sum_entries(ad::affine(ad::square_e(lv[0]), slope, 0.0));
    };
    ad::Tensor x = ad::Tensor::scalar(0.7);
    double err = fd_max_rel_err(build, {x});
    return GradCheckItem{"injected_wrong_rule", err, 1e-5, err <= 1e-5};
  };
  std::vector<GradCheckItem> items = run_gradcheck(7, {broken});
  bool saw_failure = false;
  for (const auto& it : items)
    if (it.family == "injected_wrong_rule") saw_failure = !it.pass;
  CHECK(saw_failure);
  CHECK(!gradcheck_all_pass(items));
}

TEST_CASE("training smoke run: log rows, finite loss, improvement signal") {
  ExperimentConfig cfg = smoke_config();
  sim::Dataset ds = sim::generate_dataset(cfg.layout, cfg.training.seed,
                                          cfg.training.train_samples);
  TrainResult tr = train_model(cfg, ds);
  REQUIRE(tr.log.size() == 2);
  for (const EpochLog& row : tr.log) {
    CHECK(std::isfinite(row.loss));
    CHECK(row.vib_penalty >= 0.0);
  }
  CHECK(tr.log[0].alpha == doctest::Approx(1.0));
  CHECK(tr.log[1].alpha == doctest::Approx(1.1));

  // Checkpoint round trip and evaluation determinism.
  tr.model.save("smoke_ckpt.bin");
  model::AduModel back = model::AduModel::load("smoke_ckpt.bin");
  sim::Dataset test = sim::generate_dataset(cfg.layout, 999, 32);
  auto st1 = evaluate_model(back, test);
  auto st2 = evaluate_model(back, test);
  for (size_t i = 0; i < st1.sum_rates_bits.size(); ++i)
    CHECK(st1.sum_rates_bits[i] == st2.sum_rates_bits[i]);
  std::remove("smoke_ckpt.bin");
  std::remove("smoke_ckpt.bin.meta.json");
}

TEST_CASE("training trajectory reproduces bit-for-bit for fixed seed") {
  ExperimentConfig cfg = smoke_config();
  sim::Dataset ds = sim::generate_dataset(cfg.layout, cfg.training.seed,
                                          cfg.training.train_samples);
  TrainResult a = train_model(cfg, ds);
  TrainResult b = train_model(cfg, ds);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(std::abs(a.log[i].loss - b.log[i].loss) <=
          1e-9 * std::abs(b.log[i].loss));
    CHECK(a.log[i].mean_rate_bits == b.log[i].mean_rate_bits);
  }
  CHECK(a.model.store.equal_bits(b.model.store));
}

TEST_CASE("resume continues the optimizer step counter") {
  ExperimentConfig cfg = smoke_config();
  sim::Dataset ds = sim::generate_dataset(cfg.layout, cfg.training.seed,
                                          cfg.training.train_samples);
  TrainResult first = train_model(cfg, ds);
  int64_t steps1 = first.model.store.step_count("enc.l0.W");
  CHECK(steps1 == 2 * (256 / 64));
  first.model.save("resume_ckpt.bin");

  TrainResult second = train_model(cfg, ds, std::string("resume_ckpt.bin"));
  CHECK(second.model.store.step_count("enc.l0.W") == 2 * steps1);
  std::remove("resume_ckpt.bin");
  std::remove("resume_ckpt.bin.meta.json");
}

TEST_CASE("divergence guard rejects non-finite losses with batch context") {
  CHECK_THROWS_AS(abort_if_not_finite(std::nan(""), 3, 17), NumericalError);
  CHECK_THROWS_AS(abort_if_not_finite(INFINITY, 0, 0), NumericalError);
  abort_if_not_finite(1.0, 0, 0);  // finite passes
}

TEST_CASE("result CSV schema is stable and machine-parseable") {
  CHECK(result_csv_header() ==
        "schema_version,axis,axis_value,scheme,seed,mean_rate_bits,"
        "std_rate_bits,per_user_rate_bits,wall_time_s");
  ResultRow row;
  row.axis = "bits";
  row.axis_value = 8;
  row.scheme = "rvq";
  row.seed = 3;
  row.mean_rate_bits = 15.25;
  row.std_rate_bits = 4.5;
  row.per_user_rate_bits = 2.54;
  row.wall_time_s = 1.5;
  std::string line = result_csv_line(row);
  CHECK(line.rfind("adu-results-v1,bits,8,rvq,3,", 0) == 0);

  std::vector<ResultRow> rows = {row};
  write_result_csv("rows_test.csv", rows);
  std::ifstream is("rows_test.csv");
  std::string header, body;
  std::getline(is, header);
  std::getline(is, body);
  CHECK(header == result_csv_header());
  CHECK(body == line);
  is.close();
  std::remove("rows_test.csv");
}

TEST_CASE("sweep over baseline schemes emits one row per (point, scheme)") {
  ExperimentConfig cfg = smoke_config();
  cfg.training.test_samples = 16;
  std::vector<ResultRow> rows = run_sweep(cfg, ".");
  REQUIRE(rows.size() == 4);  // grid {2,3} x schemes {rvq, perfect}
  CHECK(rows[0].axis == "bits");
  CHECK(rows[0].axis_value == 2);
  CHECK(rows[0].scheme == "rvq");
  CHECK(rows[1].scheme == "perfect");
  CHECK(rows[2].axis_value == 3);
  for (const ResultRow& r : rows) CHECK(r.mean_rate_bits >= 0.0);
  // Perfect CSI does not depend on the bit budget.
  CHECK(rows[1].mean_rate_bits == doctest::Approx(rows[3].mean_rate_bits));
}
