// Command-line front end: data generation, training, evaluation, baselines,
// sweeps and gradient checking for the limited-feedback beamforming stack.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "adu/baselines.hpp"
#include "adu/config.hpp"
#include "adu/dataset_io.hpp"
#include "adu/errors.hpp"
#include "adu/gradcheck.hpp"
#include "adu/train.hpp"

using namespace adu;

namespace {

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 std::optional<int> count, std::optional<uint64_t> seed,
                 bool test_set) {
  harness::ExperimentConfig cfg = harness::load_config(config_path);
  int n = count.value_or(test_set ? cfg.training.test_samples
                                  : cfg.training.train_samples);
  uint64_t s = seed.value_or(test_set ? cfg.training.seed + 1
                                      : cfg.training.seed);
  sim::Dataset ds = sim::generate_dataset(cfg.layout, s, n);
  sim::write_dataset(ds, out);
  std::cout << "wrote " << n << " samples to " << out << " (seed " << s << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& ckpt, std::optional<std::string> log_path,
              std::optional<std::string> resume,
              std::optional<uint64_t> seed) {
  harness::ExperimentConfig cfg = harness::load_config(config_path);
  if (seed) cfg.training.seed = *seed;
  sim::Dataset ds = sim::read_dataset(data);
  harness::TrainResult tr = harness::train_model(cfg, ds, resume);
  tr.model.save(ckpt);
  std::string lp = log_path.value_or(ckpt + ".train.csv");
  harness::write_train_log_csv(lp, tr.log);
  std::cout << "trained " << tr.log.size() << " epochs; final mean rate "
            << (tr.log.empty() ? 0.0 : tr.log.back().mean_rate_bits)
            << " bits; checkpoint " << ckpt << "; log " << lp << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& out) {
  model::AduModel m = model::AduModel::load(ckpt);
  sim::Dataset ds = sim::read_dataset(data);
  double t0 = static_cast<double>(clock()) / CLOCKS_PER_SEC;
  baselines::EvalStats st = harness::evaluate_model(m, ds);
  double dt = static_cast<double>(clock()) / CLOCKS_PER_SEC - t0;
  std::vector<harness::ResultRow> rows = {harness::row_from_stats(
      st, "none", 0, m.cfg.vib ? "adu" : "adu-novib", 0, dt)};
  harness::write_result_csv(out, rows);
  std::cout << harness::result_csv_header() << "\n"
            << harness::result_csv_line(rows[0]) << "\n";
  return 0;
}

int cmd_baseline(const std::string& scheme, const std::string& config_path,
                 const std::string& data, const std::string& out,
                 std::optional<uint64_t> seed) {
  harness::ExperimentConfig cfg = harness::load_config(config_path);
  sim::Dataset ds = sim::read_dataset(data);
  const double sigma2 = ds.layout.noise_linear();
  const double power = ds.layout.power_linear();
  uint64_t s = seed.value_or(cfg.training.seed);
  double t0 = static_cast<double>(clock()) / CLOCKS_PER_SEC;
  baselines::EvalStats st;
  if (scheme == "rvq") {
    st = baselines::eval_rvq_baseline(ds, cfg.model.feedback_bits, sigma2,
                                      power, cfg.model.wmmse_iters, s);
  } else if (scheme == "perfect") {
    st = baselines::eval_perfect_csi(ds, sigma2, power, cfg.model.wmmse_iters);
  } else {
    throw ConfigError("baseline: scheme must be rvq or perfect (use eval "
                      "with a checkpoint for adu/adu-novib)");
  }
  double dt = static_cast<double>(clock()) / CLOCKS_PER_SEC - t0;
  std::vector<harness::ResultRow> rows = {harness::row_from_stats(
      st, "none", 0, scheme, s, dt)};
  harness::write_result_csv(out, rows);
  std::cout << harness::result_csv_header() << "\n"
            << harness::result_csv_line(rows[0]) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out,
              std::optional<std::string> workdir) {
  harness::ExperimentConfig cfg = harness::load_config(config_path);
  std::string wd = workdir.value_or(
      std::filesystem::path(out).parent_path().string());
  if (wd.empty()) wd = ".";
  std::filesystem::create_directories(wd);
  std::vector<harness::ResultRow> rows = harness::run_sweep(cfg, wd);
  harness::write_result_csv(out, rows);
  std::cout << "sweep finished: " << rows.size() << " rows -> " << out << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  std::vector<GradCheckItem> items = run_gradcheck(seed);
  for (const GradCheckItem& it : items) {
    std::printf("%-20s max_rel_err %.3e  tol %.0e  %s\n", it.family.c_str(),
                it.max_rel_err, it.tol, it.pass ? "ok" : "FAIL");
  }
  return gradcheck_all_pass(items) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Limited-feedback multi-cell MU-MIMO beamforming toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, ckpt_path, out_path, scheme;
  std::optional<std::string> resume, log_path, workdir;
  std::optional<uint64_t> seed;
  std::optional<int> count;
  bool test_set = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a channel dataset");
  gen->add_option("--config", config_path, "Experiment config")->required();
  gen->add_option("--out", out_path, "Output dataset path")->required();
  gen->add_option("--count", count, "Sample count override");
  gen->add_option("--seed", seed, "Seed override");
  gen->add_flag("--test-set", test_set,
                "Use the test-set sample count and derived seed");

  auto* tr = app.add_subcommand("train", "Train the learned feedback model");
  tr->add_option("--config", config_path, "Experiment config")->required();
  tr->add_option("--data", data_path, "Training dataset")->required();
  tr->add_option("--ckpt", ckpt_path, "Output checkpoint")->required();
  tr->add_option("--log", log_path, "Training log CSV");
  tr->add_option("--resume", resume, "Resume from checkpoint");
  tr->add_option("--seed", seed, "Seed override");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
  ev->add_option("--data", data_path, "Evaluation dataset")->required();
  ev->add_option("--out", out_path, "Result CSV")->required();

  auto* bl = app.add_subcommand("baseline", "Evaluate a reference scheme");
  bl->add_option("--scheme", scheme, "rvq | perfect")->required();
  bl->add_option("--config", config_path, "Experiment config")->required();
  bl->add_option("--data", data_path, "Evaluation dataset")->required();
  bl->add_option("--out", out_path, "Result CSV")->required();
  bl->add_option("--seed", seed, "Seed override");

  auto* sw = app.add_subcommand("sweep", "Run the configured axis sweep");
  sw->add_option("--config", config_path, "Experiment config")->required();
  sw->add_option("--out", out_path, "Combined result CSV")->required();
  sw->add_option("--workdir", workdir, "Directory for checkpoints/logs");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference audit of all "
                                             "differentiable op families");
  uint64_t gc_seed = 7;
  gc->add_option("--seed", gc_seed, "Seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(config_path, out_path, count, seed, test_set);
    if (tr->parsed())
      return cmd_train(config_path, data_path, ckpt_path, log_path, resume,
                       seed);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, out_path);
    if (bl->parsed())
      return cmd_baseline(scheme, config_path, data_path, out_path, seed);
    if (sw->parsed()) return cmd_sweep(config_path, out_path, workdir);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
