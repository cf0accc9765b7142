// Acceptance suite: one binary, one printed pass/fail line per criterion.
// Heavy artifacts (datasets, trained checkpoints) are cached in --workdir so
// the trend criteria can share trainings.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adu/baselines.hpp"
#include "adu/config.hpp"
#include "adu/dataset_io.hpp"
#include "adu/errors.hpp"
#include "adu/gradcheck.hpp"
#include "adu/stats.hpp"
#include "adu/train.hpp"

using namespace adu;
using Clock = std::chrono::steady_clock;

namespace {

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Ctx {
  std::string workdir = "acceptance_work";
  std::string desk_config = "configs/desk.cfg";
  uint64_t seed = 7;

  harness::ExperimentConfig desk() const {
    harness::ExperimentConfig cfg = harness::load_config(desk_config, false);
    return cfg;
  }

  sim::Dataset desk_train(const harness::ExperimentConfig& cfg) const {
    return sim::generate_dataset(cfg.layout, cfg.training.seed,
                                 cfg.training.train_samples);
  }
  sim::Dataset desk_test(const harness::ExperimentConfig& cfg) const {
    return sim::generate_dataset(cfg.layout, cfg.training.seed + 1,
                                 cfg.training.test_samples);
  }

  // Trains (or loads a cached) desk-profile model variant.
  model::AduModel trained(const harness::ExperimentConfig& cfg,
                          const sim::Dataset& train_ds,
                          const std::string& tag) const {
    std::string path = workdir + "/" + tag + ".ckpt";
    if (std::filesystem::exists(path)) {
      std::printf("       [%s] reusing cached checkpoint %s\n", tag.c_str(),
                  path.c_str());
      return model::AduModel::load(path);
    }
    std::printf("       [%s] training %d epochs on %zu samples...\n",
                tag.c_str(), cfg.training.epochs, train_ds.samples.size());
    std::fflush(stdout);
    harness::TrainResult tr = harness::train_model(cfg, train_ds);
    tr.model.save(path);
    harness::write_train_log_csv(workdir + "/" + tag + "_train.csv", tr.log);
    return tr.model;
  }
};

sim::ChannelSample synthetic_sample(int M, int K, int Nr, int Nt, Rng& rng) {
  const int N = M * K;
  std::vector<ad::CMat> links(static_cast<size_t>(N) * M);
  for (auto& h : links) {
    h.resize(Nr, Nt);
    for (int r = 0; r < Nr; ++r)
      for (int t = 0; t < Nt; ++t) h(r, t) = rng.cnormal();
  }
  sim::ChannelSample s;
  s.cell_of.resize(N);
  s.Z.resize(N);
  s.A.resize(static_cast<size_t>(N) * N);
  for (int u = 0; u < N; ++u) {
    s.cell_of[u] = u / K;
    s.Z[u] = links[static_cast<size_t>(u) * M + u / K];
    for (int v = 0; v < N; ++v)
      s.A[static_cast<size_t>(u) * N + v] =
          links[static_cast<size_t>(u) * M + v / K];
  }
  return s;
}

// ---- Criterion 1: gradient integrity ----
bool c1(const Ctx& ctx, std::string& note) {
  auto t0 = Clock::now();
  std::vector<GradCheckItem> items = run_gradcheck(ctx.seed);
  double dt = secs_since(t0);
  const std::set<std::string> need = {
      "matmul",   "inverse", "logdet", "dense_relu", "batchnorm",
      "sign_st_surrogate", "f_wmmse_composed"};
  std::set<std::string> seen;
  double worst = 0.0;
  bool ok = true;
  for (const auto& it : items) {
    seen.insert(it.family);
    worst = std::max(worst, it.max_rel_err);
    ok = ok && it.pass;
  }
  for (const std::string& fam : need)
    if (!seen.count(fam)) ok = false;
  ok = ok && dt < 120.0;
  std::ostringstream os;
  os << items.size() << " families, worst rel err " << worst << ", " << dt
     << " s";
  note = os.str();
  return ok;
}

// ---- Criterion 2: single-user WMMSE closed form ----
bool c2(const Ctx& ctx, std::string& note) {
  sim::LayoutConfig layout;
  layout.cells = 1;
  layout.users_per_cell = 1;
  layout.bs_antennas = 2;
  layout.user_antennas = 1;
  const double sigma2 = layout.noise_linear();
  const double power = layout.power_linear();
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    sim::ChannelSample s = sim::make_sample(layout, ctx.seed + 11, i);
    wmmse::SolveResult r = wmmse::run_wmmse(s, sigma2, power, 50);
    double want = std::log2(1.0 + power * s.Z[0].squaredNorm() / sigma2);
    worst = std::max(worst, std::abs(r.report.sum_bits - want));
  }
  std::ostringstream os;
  os << "max |rate - closed form| = " << worst << " bits over 100 seeds";
  note = os.str();
  return worst <= 1e-6;
}

// ---- Criterion 3: surrogate monotonicity ----
// Unit-scale instances at the stated sizes, in the regime where the
// sigma^2/P_T noise scaling actually enforces the power budget. At the
// simulator's physical SNR (P/sigma^2 ~ 1e15) the printed fixed-multiplier
// V update overshoots the budget, the exact rescale fires every cycle, and
// block-coordinate descent on the surrogate no longer applies.
bool c3(const Ctx& ctx, std::string& note) {
  const double sigma2 = 0.5, power = 10.0;
  double worst_violation = -1e300;
  Rng rng(ctx.seed + 23);
  for (int i = 0; i < 100; ++i) {
    sim::ChannelSample s = synthetic_sample(3, 2, 2, 8, rng);
    wmmse::SolveResult r = wmmse::run_wmmse(s, sigma2, power, 8);
    for (size_t k = 1; k < r.surrogate_trace.size(); ++k) {
      double prev = r.surrogate_trace[k - 1];
      double cur = r.surrogate_trace[k];
      worst_violation =
          std::max(worst_violation, (cur - prev) / std::max(1.0, std::abs(prev)));
    }
  }
  std::ostringstream os;
  os << "worst relative increase " << worst_violation
     << " over 100 instances x 8 cycles";
  note = os.str();
  return worst_violation <= 1e-9;
}

// ---- Criterion 4: power feasibility for every scheme ----
bool c4(const Ctx& ctx, std::string& note) {
  harness::ExperimentConfig cfg = ctx.desk();
  sim::Dataset test = ctx.desk_test(cfg);
  const double sigma2 = cfg.layout.noise_linear();
  const double power = cfg.layout.power_linear();
  int checked = 0;
  try {
    for (const sim::ChannelSample& s : test.samples) {
      wmmse::SolveResult perfect = wmmse::run_wmmse(s, sigma2, power, 4);
      perfect.V.validate_power(power, cfg.layout.cells);
      ++checked;
    }
    // RVQ: beams computed from reconstructed channels must stay feasible.
    baselines::RvqCodebook direct = baselines::rvq_build(ctx.seed, 4, 16);
    baselines::RvqCodebook cross = baselines::rvq_build(ctx.seed + 1, 2, 16);
    for (const sim::ChannelSample& s : test.samples) {
      sim::ChannelSample seen = s;
      const int N = cfg.layout.num_users();
      for (int u = 0; u < N; ++u)
        for (int v = 0; v < N; ++v) {
          const baselines::RvqCodebook& cb =
              s.cell_of[v] == s.cell_of[u] ? direct : cross;
          const ad::CMat& h = s.cross(u, v);
          seen.A[static_cast<size_t>(u) * N + v] =
              baselines::rvq_reconstruct(cb, baselines::rvq_quantize(cb, h), h);
        }
      for (int u = 0; u < N; ++u)
        seen.Z[u] = seen.A[static_cast<size_t>(u) * N + u];
      wmmse::SolveResult r = wmmse::run_wmmse(seen, sigma2, power, 4);
      r.V.validate_power(power, cfg.layout.cells);
      ++checked;
    }
    // ADU (random init; evaluate_model validates each emitted beam set).
    model::NormStats norm{0.0, 3e-5};
    model::AduModel m =
        model::AduModel::init(cfg.layout, cfg.model, norm, ctx.seed);
    harness::evaluate_model(m, test);
    checked += static_cast<int>(test.samples.size());
    // Trained ADU too, when the trend criteria already produced one.
    std::string cached = ctx.workdir + "/adu_b8.ckpt";
    if (std::filesystem::exists(cached)) {
      model::AduModel mt = model::AduModel::load(cached);
      harness::evaluate_model(mt, test);
      checked += static_cast<int>(test.samples.size());
    }
  } catch (const Error& e) {
    note = std::string("violation: ") + e.what();
    return false;
  }
  std::ostringstream os;
  os << checked << " beamformer sets within the per-cell budget";
  note = os.str();
  return true;
}

// ---- Criterion 5: permutation equivariance ----
bool check_equivariance(model::AduModel& m, const sim::Dataset& ds,
                        uint64_t seed, double tol, double& worst) {
  const int N = m.layout.num_users();
  const int K = m.layout.users_per_cell;
  const int M = m.layout.cells;
  Rng rng(seed);
  for (size_t si = 0; si < ds.samples.size(); ++si) {
    const sim::ChannelSample& s = ds.samples[si];
    // Random within-cell permutation.
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    for (int c = 0; c < M; ++c) {
      for (int k = K - 1; k > 0; --k) {
        int j = static_cast<int>(rng.next_u64() % (k + 1));
        std::swap(perm[c * K + k], perm[c * K + j]);
      }
    }
    sim::ChannelSample sp;
    sp.cell_of = s.cell_of;
    sp.Z.resize(N);
    sp.A.resize(static_cast<size_t>(N) * N);
    for (int u = 0; u < N; ++u) {
      sp.Z[perm[u]] = s.Z[u];
      for (int v = 0; v < N; ++v)
        sp.A[static_cast<size_t>(perm[u]) * N + perm[v]] =
            s.A[static_cast<size_t>(u) * N + v];
    }

    sim::Dataset one{m.layout, {s}};
    sim::Dataset onep{m.layout, {sp}};
    model::BatchInputs in = model::make_batch(one, {0}, m.norm);
    model::BatchInputs inp = model::make_batch(onep, {0}, m.norm);
    ad::Graph g1, g2;
    nn::Binding b1(g1, m.store, false), b2(g2, m.store, false);
    model::PipelineVars p1 = model::build_pipeline(g1, b1, m, in, 1.0, false);
    model::PipelineVars p2 = model::build_pipeline(g2, b2, m, inp, 1.0, false);

    const int B = m.cfg.feedback_bits;
    const int links = m.cfg.policy == model::CrossLinkPolicy::Full ? M : 1;
    for (int u = 0; u < N; ++u) {
      for (int b = 0; b < B; ++b)
        worst = std::max(worst,
                         std::abs(p2.bits.value().rat(0, perm[u], b) -
                                  p1.bits.value().rat(0, u, b)));
      for (int l = 0; l < links; ++l)
        worst = std::max(worst, (p2.htilde.value().c(perm[u] * links + l) -
                                 p1.htilde.value().c(u * links + l))
                                    .cwiseAbs()
                                    .maxCoeff());
      worst = std::max(
          worst, (p2.beams.value().c(perm[u]) - p1.beams.value().c(u))
                     .cwiseAbs()
                     .maxCoeff());
      worst = std::max(worst, std::abs(p2.rates.value().rat(perm[u], 0, 0) -
                                       p1.rates.value().rat(u, 0, 0)));
    }
    if (worst > tol) return false;
  }
  return true;
}

bool c5(const Ctx& ctx, std::string& note) {
  harness::ExperimentConfig cfg = ctx.desk();
  sim::Dataset test = sim::generate_dataset(cfg.layout, ctx.seed + 31, 20);
  sim::Dataset smalltrain = sim::generate_dataset(cfg.layout, ctx.seed + 32, 512);

  model::NormStats norm = model::compute_norm_stats(smalltrain);
  model::AduModel random_init =
      model::AduModel::init(cfg.layout, cfg.model, norm, ctx.seed + 33);

  harness::ExperimentConfig quick = cfg;
  quick.training.epochs = 3;
  quick.training.train_samples = 512;
  quick.training.batch_size = 128;
  model::AduModel trained = ctx.trained(quick, smalltrain, "equivariance_quick");

  double worst = 0.0;
  bool ok = check_equivariance(random_init, test, ctx.seed + 34, 1e-6, worst) &&
            check_equivariance(trained, test, ctx.seed + 35, 1e-6, worst);
  std::ostringstream os;
  os << "worst deviation " << worst << " over 20 samples x {random, trained}";
  note = os.str();
  return ok;
}

// ---- Criteria 6-8 share the desk trainings ----
struct TrendArtifacts {
  std::map<int, double> adu_mean;                  // B -> mean rate
  std::map<int, std::vector<double>> adu_rates;    // B -> per-sample
  baselines::EvalStats rvq8, perfect;
  double kl_gamma = 0.0, kl_nogamma = 0.0;
  double rate_gamma = 0.0, rate_nogamma = 0.0;
  double sweep_seconds = 0.0;
};

TrendArtifacts& trend_artifacts(const Ctx& ctx, bool need_vib) {
  static TrendArtifacts art;
  static bool have_trend = false, have_vib = false;
  harness::ExperimentConfig base = ctx.desk();
  sim::Dataset train_ds = ctx.desk_train(base);
  sim::Dataset test_ds = ctx.desk_test(base);
  const double sigma2 = base.layout.noise_linear();
  const double power = base.layout.power_linear();

  if (!have_trend) {
    auto t0 = Clock::now();
    for (int bits : {4, 8, 12}) {
      harness::ExperimentConfig cfg = base;
      cfg.model.feedback_bits = bits;
      model::AduModel m = ctx.trained(cfg, train_ds,
                                      "adu_b" + std::to_string(bits));
      baselines::EvalStats st = harness::evaluate_model(m, test_ds);
      art.adu_mean[bits] = st.mean_rate_bits;
      art.adu_rates[bits] = st.sum_rates_bits;
      std::printf("       [trend] ADU B=%d: %.3f bits\n", bits,
                  st.mean_rate_bits);
      std::fflush(stdout);
    }
    art.rvq8 = baselines::eval_rvq_baseline(test_ds, 8, sigma2, power,
                                            base.model.wmmse_iters,
                                            base.training.seed);
    art.perfect = baselines::eval_perfect_csi(test_ds, sigma2, power,
                                              base.model.wmmse_iters);
    art.sweep_seconds = secs_since(t0);
    have_trend = true;
  }
  if (need_vib && !have_vib) {
    harness::ExperimentConfig cfg0 = base;
    cfg0.model.feedback_bits = 8;
    cfg0.model.gamma = 0.0;
    cfg0.model.vib = false;
    model::AduModel m0 = ctx.trained(cfg0, train_ds, "adu_b8_nogamma");
    model::AduModel m1 = model::AduModel::load(ctx.workdir + "/adu_b8.ckpt");
    // Rates first: the KL measurement runs train-mode forwards, which nudge
    // the batch-norm running statistics.
    art.rate_gamma = art.adu_mean[8];
    art.rate_nogamma = harness::evaluate_model(m0, test_ds).mean_rate_bits;
    const double alpha =
        base.model.anneal.alpha(base.training.epochs - 1);
    art.kl_gamma = harness::mean_bit_kl(m1, test_ds, alpha);
    art.kl_nogamma = harness::mean_bit_kl(m0, test_ds, alpha);
    have_vib = true;
  }
  return art;
}

bool c6(const Ctx& ctx, std::string& note) {
  TrendArtifacts& art = trend_artifacts(ctx, false);
  bool monotone = art.adu_mean[4] <= art.adu_mean[8] &&
                  art.adu_mean[8] <= art.adu_mean[12];
  double q05 = stats::bootstrap_mean_diff_quantile(
      art.adu_rates[8], art.rvq8.sum_rates_bits, 0.05, 2000, ctx.seed);

  // Training moved the B=8 model's mean rate above its first epoch.
  double first_rate = 0.0, last_rate = 0.0;
  {
    std::ifstream lg(ctx.workdir + "/adu_b8_train.csv");
    std::string line;
    std::getline(lg, line);  // header
    bool first = true;
    while (std::getline(lg, line)) {
      std::stringstream ss(line);
      std::string tok;
      for (int f = 0; f < 4 && std::getline(ss, tok, ','); ++f) {
        if (f == 3) {
          last_rate = std::stod(tok);
          if (first) first_rate = last_rate;
          first = false;
        }
      }
    }
  }
  bool improved = last_rate > first_rate;

  std::ostringstream os;
  os << "ADU mean rate B{4,8,12} = {" << art.adu_mean[4] << ", "
     << art.adu_mean[8] << ", " << art.adu_mean[12] << "} bits; RVQ8 "
     << art.rvq8.mean_rate_bits << "; bootstrap q05(adu8-rvq8) = " << q05
     << "; B=8 train rate " << first_rate << " -> " << last_rate
     << "; sweep " << art.sweep_seconds / 60.0 << " min";
  note = os.str();
  return monotone && q05 > 0.0 && improved;
}

bool c7(const Ctx& ctx, std::string& note) {
  TrendArtifacts& art = trend_artifacts(ctx, false);
  double q_pa = stats::bootstrap_mean_diff_quantile(
      art.perfect.sum_rates_bits, art.adu_rates[8], 0.05, 2000, ctx.seed + 1);
  double q_ar = stats::bootstrap_mean_diff_quantile(
      art.adu_rates[8], art.rvq8.sum_rates_bits, 0.05, 2000, ctx.seed + 2);
  std::ostringstream os;
  os << "perfect " << art.perfect.mean_rate_bits << " >= adu "
     << art.adu_mean[8] << " >= rvq " << art.rvq8.mean_rate_bits
     << " (q05 diffs " << q_pa << ", " << q_ar << ")";
  note = os.str();
  return q_pa >= 0.0 && q_ar >= 0.0;
}

bool c8(const Ctx& ctx, std::string& note) {
  TrendArtifacts& art = trend_artifacts(ctx, true);
  bool kl_drops = art.kl_gamma < art.kl_nogamma;
  double rate_gap = std::abs(art.rate_gamma - art.rate_nogamma) /
                    std::max(1e-9, art.rate_nogamma);
  // Penalty nonnegativity across a spread of probabilities.
  bool nonneg = true;
  for (double p : {1e-9, 0.2, 0.5, 0.8, 1.0 - 1e-9}) {
    model::FeedbackBits fb;
    fb.bits = {1};
    fb.probs = {p};
    nonneg = nonneg && model::vib_penalty({fb}) >= 0.0;
  }
  std::ostringstream os;
  os << "mean per-bit KL gamma=0.01: " << art.kl_gamma
     << " vs gamma=0: " << art.kl_nogamma << "; rate gap "
     << 100.0 * rate_gap << "% (" << art.rate_gamma << " vs "
     << art.rate_nogamma << " bits)";
  note = os.str();
  return nonneg && kl_drops && rate_gap <= 0.10;
}

bool c9(const Ctx& ctx, std::string& note) {
  Rng rng(ctx.seed + 77);
  const int trials = 10000;
  std::vector<ad::CMat> probes(trials);
  for (auto& p : probes) {
    p.resize(2, 2);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) p(r, c) = rng.cnormal();
  }
  std::vector<int> grid = {2, 4, 8, 12, 16};
  std::vector<double> means;
  for (int bits : grid) {
    baselines::RvqCodebook cb = baselines::rvq_build(ctx.seed + 78, bits, 4);
    double acc = 0.0;
    for (const auto& p : probes) {
      baselines::RvqIndex q = baselines::rvq_quantize(cb, p);
      acc += baselines::chordal_distance(baselines::rvq_reconstruct(cb, q, p), p);
    }
    means.push_back(acc / trials);
  }
  bool strict = true;
  for (size_t i = 1; i < means.size(); ++i) strict = strict && means[i] < means[i - 1];
  std::ostringstream os;
  os << "mean chordal distance over B{2,4,8,12,16} = {";
  for (size_t i = 0; i < means.size(); ++i)
    os << (i ? ", " : "") << means[i];
  os << "}";
  note = os.str();
  return strict;
}

bool c10(const Ctx& ctx, std::string& note) {
  harness::ExperimentConfig cfg = ctx.desk();
  cfg.training.epochs = 2;
  cfg.training.train_samples = 512;
  cfg.training.batch_size = 128;
  cfg.training.test_samples = 16;
  sim::Dataset ds = sim::generate_dataset(cfg.layout, cfg.training.seed,
                                          cfg.training.train_samples);
  harness::TrainResult a = harness::train_model(cfg, ds);
  harness::TrainResult b = harness::train_model(cfg, ds);
  double worst = 0.0;
  for (size_t i = 0; i < a.log.size(); ++i)
    worst = std::max(worst, std::abs(a.log[i].loss - b.log[i].loss) /
                                std::max(1.0, std::abs(b.log[i].loss)));

  std::string f1 = ctx.workdir + "/repro_a.bin";
  std::string f2 = ctx.workdir + "/repro_b.bin";
  sim::write_dataset(sim::generate_dataset(cfg.layout, 42, 64), f1);
  sim::write_dataset(sim::generate_dataset(cfg.layout, 42, 64), f2);
  std::ifstream i1(f1, std::ios::binary), i2(f2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(i1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(i2)),
                 std::istreambuf_iterator<char>());
  bool bits_equal = b1 == b2 && !b1.empty();
  std::ostringstream os;
  os << "loss trajectory max rel diff " << worst << "; dataset files "
     << (bits_equal ? "bit-identical" : "DIFFER");
  note = os.str();
  return worst <= 1e-9 && bits_equal;
}

}  // namespace

int main(int argc, char** argv) {
  Ctx ctx;
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--workdir" && i + 1 < argc) {
      ctx.workdir = argv[++i];
    } else if (arg == "--config" && i + 1 < argc) {
      ctx.desk_config = argv[++i];
    } else if (arg == "--criteria" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) wanted.push_back(std::stoi(tok));
    } else {
      std::fprintf(stderr,
                   "usage: adu_acceptance [--criteria 1,2,...] [--workdir D] "
                   "[--config desk.cfg]\n");
      return 2;
    }
  }
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::filesystem::create_directories(ctx.workdir);

  using Fn = bool (*)(const Ctx&, std::string&);
  std::map<int, std::pair<Fn, const char*>> crits = {
      {1, {c1, "gradient integrity vs central finite differences"}},
      {2, {c2, "single-user WMMSE reaches the MRT closed form"}},
      {3, {c3, "weighted-MSE surrogate is non-increasing per cycle"}},
      {4, {c4, "per-cell power feasibility for every scheme"}},
      {5, {c5, "within-cell permutation equivariance of the pipeline"}},
      {6, {c6, "trend over feedback bits at desk scale"}},
      {7, {c7, "scheme ordering: perfect >= ADU >= RVQ at B=8"}},
      {8, {c8, "VIB lowers per-bit KL at near-constant rate"}},
      {9, {c9, "RVQ chordal distance strictly improves with bits"}},
      {10, {c10, "bitwise reproducibility of training and datasets"}},
  };

  int failures = 0;
  for (int id : wanted) {
    auto it = crits.find(id);
    if (it == crits.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    std::string note;
    bool ok = false;
    try {
      ok = it->second.first(ctx, note);
    } catch (const std::exception& e) {
      note = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id,
                it->second.second, note.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
