#include "adu/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "adu/dataset_io.hpp"
#include "adu/errors.hpp"
#include "adu/stats.hpp"

namespace adu::harness {

const char* const kResultSchemaVersion = "adu-results-v1";
const char* const kTrainLogSchemaVersion = "adu-trainlog-v1";

void abort_if_not_finite(double loss, int epoch, int batch_index) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "training diverged: non-finite loss at epoch " << epoch << ", batch "
       << batch_index;
    throw NumericalError(os.str());
  }
}

namespace {

std::vector<int> epoch_permutation(int n, uint64_t seed, int epoch) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = substream(seed, static_cast<uint64_t>(epoch), /*tag=*/21);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

}  // namespace

TrainResult train_model(const ExperimentConfig& cfg, const sim::Dataset& train_ds,
                        const std::optional<std::string>& resume_ckpt) {
  cfg.validate();
  if (!train_ds.layout.same_layout(cfg.layout))
    throw ConfigError("train: dataset layout does not match the configuration");
  const int n = static_cast<int>(train_ds.samples.size());
  if (cfg.training.batch_size > n)
    throw ConfigError("train: batch_size exceeds the dataset size");

  TrainResult out{
      resume_ckpt ? model::AduModel::load(*resume_ckpt)
                  : model::AduModel::init(cfg.layout, cfg.model,
                                          model::compute_norm_stats(train_ds),
                                          cfg.training.seed),
      {}};
  model::AduModel& m = out.model;
  if (resume_ckpt && !m.layout.same_layout(cfg.layout))
    throw ConfigError("train: resume checkpoint layout mismatch");

  nn::AdamConfig adam;
  adam.lr = cfg.training.learning_rate;
  adam.beta1 = cfg.training.adam_beta1;
  adam.beta2 = cfg.training.adam_beta2;
  adam.eps = cfg.training.adam_eps;
  const double gamma_eff = cfg.model.vib ? cfg.model.gamma : 0.0;

  for (int epoch = 0; epoch < cfg.training.epochs; ++epoch) {
    const double alpha = cfg.model.anneal.alpha(epoch);
    std::vector<int> perm = epoch_permutation(n, cfg.training.seed, epoch);
    double loss_acc = 0.0, rate_acc = 0.0, vib_acc = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.training.batch_size) {
      int stop = std::min(n, start + cfg.training.batch_size);
      if (stop - start < 2) break;  // batch norm needs at least two rows
      std::vector<int> idx(perm.begin() + start, perm.begin() + stop);
      model::BatchInputs in = model::make_batch(train_ds, idx, m.norm);

      ad::Graph g;
      nn::Binding bind(g, m.store, /*with_grad=*/true);
      model::PipelineVars p = model::build_pipeline(g, bind, m, in, alpha, true);
      ad::Var loss = model::build_total_loss(p, gamma_eff);
      double loss_v = loss.value().rat(0, 0, 0);
      abort_if_not_finite(loss_v, epoch, batches);

      g.backward(loss);
      nn::GradientMap grads = bind.collect();
      m.store.adam_step(grads, adam);

      loss_acc += loss_v;
      rate_acc += p.mean_rate.value().rat(0, 0, 0);
      vib_acc += p.vib.valid() ? p.vib.value().rat(0, 0, 0) : 0.0;
      ++batches;
    }
    EpochLog row;
    row.epoch = epoch;
    row.loss = loss_acc / batches;
    row.mean_rate_bits = rate_acc / batches;
    row.vib_penalty = vib_acc / batches;
    row.alpha = alpha;
    out.log.push_back(row);
  }

  // Settle the batch-norm running statistics under the final weights:
  // train-mode forwards with frozen parameters. Without this the momentum
  // average still reflects mid-training activation distributions.
  {
    const double alpha = cfg.model.anneal.alpha(cfg.training.epochs - 1);
    std::vector<int> perm = epoch_permutation(n, cfg.training.seed, -1);
    int refreshed = 0;
    for (int start = 0; start + cfg.training.batch_size <= n &&
                        refreshed < 50;
         start += cfg.training.batch_size, ++refreshed) {
      std::vector<int> idx(perm.begin() + start,
                           perm.begin() + start + cfg.training.batch_size);
      model::BatchInputs in = model::make_batch(train_ds, idx, m.norm);
      ad::Graph g;
      nn::Binding bind(g, m.store, false);
      model::build_pipeline(g, bind, m, in, alpha, true);
    }
  }
  return out;
}

baselines::EvalStats evaluate_model(model::AduModel& m, const sim::Dataset& ds,
                                    int chunk) {
  if (!ds.layout.same_layout(m.layout))
    throw ConfigError("eval: dataset layout does not match the checkpoint");
  baselines::EvalStats st;
  const int n = static_cast<int>(ds.samples.size());
  const int users = m.layout.num_users();
  st.sum_rates_bits.resize(n);
  for (int start = 0; start < n; start += chunk) {
    int stop = std::min(n, start + chunk);
    std::vector<int> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    model::BatchInputs in = model::make_batch(ds, idx, m.norm);
    ad::Graph g;
    nn::Binding bind(g, m.store, false);
    model::PipelineVars p = model::build_pipeline(g, bind, m, in, 1.0, false);
    const ad::Tensor& rates = p.rates.value();
    for (int s = 0; s < stop - start; ++s) {
      double acc = 0.0;
      for (int u = 0; u < users; ++u)
        acc += rates.rat(static_cast<ad::Index>(s) * users + u, 0, 0);
      st.sum_rates_bits[start + s] = acc;
    }
    // Contract: every emitted beamformer set stays power-feasible.
    wmmse::BeamformerSet bs;
    bs.cell_of.resize(users);
    for (int u = 0; u < users; ++u)
      bs.cell_of[u] = u / m.layout.users_per_cell;
    for (int s = 0; s < stop - start; ++s) {
      bs.V.assign(users, ad::CMat());
      for (int u = 0; u < users; ++u)
        bs.V[u] = p.beams.value().c(static_cast<ad::Index>(s) * users + u);
      bs.validate_power(m.layout.power_linear(), m.layout.cells);
    }
  }
  st.mean_rate_bits = stats::mean(st.sum_rates_bits);
  st.std_rate_bits = stats::stddev(st.sum_rates_bits);
  st.per_user_mean_bits = st.mean_rate_bits / users;
  return st;
}

double mean_bit_kl(model::AduModel& m, const sim::Dataset& ds, double alpha,
                   int chunk) {
  const int n = static_cast<int>(ds.samples.size());
  const int users = m.layout.num_users();
  const int bits = m.cfg.feedback_bits;
  double acc = 0.0;
  long long cnt = 0;
  for (int start = 0; start < n; start += chunk) {
    int stop = std::min(n, start + chunk);
    if (stop - start < 2) break;
    std::vector<int> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    model::BatchInputs in = model::make_batch(ds, idx, m.norm);
    ad::Graph g;
    nn::Binding bind(g, m.store, false);
    model::PipelineVars p = model::build_pipeline(g, bind, m, in, alpha, true);
    ad::Var kl = ad::kl_bern_half(p.probs);
    const ad::Tensor& t = kl.value();
    for (ad::Index i = 0; i < t.size(); ++i) acc += t.rdata()[i];
    cnt += static_cast<long long>(stop - start) * users * bits;
  }
  if (cnt == 0) throw ContractError("mean_bit_kl: dataset too small");
  return acc / static_cast<double>(cnt);
}

std::string result_csv_header() {
  return "schema_version,axis,axis_value,scheme,seed,mean_rate_bits,"
         "std_rate_bits,per_user_rate_bits,wall_time_s";
}

std::string result_csv_line(const ResultRow& row) {
  std::ostringstream os;
  os.precision(10);
  os << kResultSchemaVersion << ',' << row.axis << ',' << row.axis_value << ','
     << row.scheme << ',' << row.seed << ',' << row.mean_rate_bits << ','
     << row.std_rate_bits << ',' << row.per_user_rate_bits << ','
     << row.wall_time_s;
  return os.str();
}

void write_result_csv(const std::string& path,
                      const std::vector<ResultRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << result_csv_header() << "\n";
  for (const ResultRow& r : rows) os << result_csv_line(r) << "\n";
}

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochLog>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "schema_version,epoch,loss,mean_rate_bits,vib_penalty,alpha\n";
  os.precision(12);
  for (const EpochLog& r : log) {
    os << kTrainLogSchemaVersion << ',' << r.epoch << ',' << r.loss << ','
       << r.mean_rate_bits << ',' << r.vib_penalty << ',' << r.alpha << "\n";
  }
}

ResultRow row_from_stats(const baselines::EvalStats& st, const std::string& axis,
                         int axis_value, const std::string& scheme,
                         uint64_t seed, double wall_time_s) {
  ResultRow row;
  row.axis = axis;
  row.axis_value = axis_value;
  row.scheme = scheme;
  row.seed = seed;
  row.mean_rate_bits = st.mean_rate_bits;
  row.std_rate_bits = st.std_rate_bits;
  row.per_user_rate_bits = st.per_user_mean_bits;
  row.wall_time_s = wall_time_s;
  return row;
}

namespace {

ExperimentConfig config_at_point(const ExperimentConfig& base, SweepAxis axis,
                                 int value) {
  ExperimentConfig cfg = base;
  switch (axis) {
    case SweepAxis::Bits:
      cfg.model.feedback_bits = value;
      break;
    case SweepAxis::Users:
      cfg.layout.users_per_cell = value;
      break;
    case SweepAxis::Antennas:
      cfg.layout.bs_antennas = value;
      break;
  }
  cfg.validate();
  return cfg;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::vector<ResultRow> run_sweep(const ExperimentConfig& base,
                                 const std::string& work_dir) {
  base.validate();
  std::vector<ResultRow> rows;
  const std::string axis_name = to_string(base.sweep.axis);
  for (size_t gi = 0; gi < base.sweep.grid.size(); ++gi) {
    const int value = base.sweep.grid[gi];
    ExperimentConfig cfg = config_at_point(base, base.sweep.axis, value);
    // The bits axis leaves the channel statistics untouched, so every grid
    // point is scored on the same data; layout axes get their own stream.
    const uint64_t data_seed =
        base.sweep.axis == SweepAxis::Bits
            ? cfg.training.seed
            : cfg.training.seed + 1000003ULL * (gi + 1);

    sim::Dataset train_ds = sim::generate_dataset(cfg.layout, data_seed,
                                                  cfg.training.train_samples);
    sim::Dataset test_ds = sim::generate_dataset(cfg.layout, data_seed + 1,
                                                 cfg.training.test_samples);
    const double sigma2 = cfg.layout.noise_linear();
    const double power = cfg.layout.power_linear();

    for (const std::string& scheme : base.sweep.schemes) {
      double t0 = now_s();
      baselines::EvalStats st;
      if (scheme == "adu" || scheme == "adu-novib") {
        ExperimentConfig runcfg = cfg;
        if (scheme == "adu-novib") {
          runcfg.model.vib = false;
          runcfg.model.gamma = 0.0;
        }
        TrainResult tr = train_model(runcfg, train_ds);
        std::ostringstream ck;
        ck << work_dir << "/sweep_" << axis_name << "_" << value << "_" << scheme
           << ".ckpt";
        tr.model.save(ck.str());
        std::ostringstream lg;
        lg << work_dir << "/sweep_" << axis_name << "_" << value << "_" << scheme
           << "_train.csv";
        write_train_log_csv(lg.str(), tr.log);
        st = evaluate_model(tr.model, test_ds);
      } else if (scheme == "rvq") {
        st = baselines::eval_rvq_baseline(test_ds, cfg.model.feedback_bits,
                                          sigma2, power, cfg.model.wmmse_iters,
                                          data_seed + 2);
      } else {  // perfect
        st = baselines::eval_perfect_csi(test_ds, sigma2, power,
                                         cfg.model.wmmse_iters);
      }
      rows.push_back(row_from_stats(st, axis_name, value, scheme,
                                    cfg.training.seed, now_s() - t0));
    }
  }
  return rows;
}

}  // namespace adu::harness
