#include "adu/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "adu/errors.hpp"
#include "json.hpp"

namespace adu::model {

using namespace adu::ad;
using wmmse::IndexMaps;
using wmmse::SystemShape;

std::string to_string(CrossLinkPolicy p) {
  return p == CrossLinkPolicy::Full ? "full" : "direct-only";
}

CrossLinkPolicy crosslink_policy_from_string(const std::string& s) {
  if (s == "full") return CrossLinkPolicy::Full;
  if (s == "direct-only") return CrossLinkPolicy::DirectOnly;
  throw ConfigError("unknown cross-link policy: " + s);
}

void ModelConfig::validate() const {
  if (feedback_bits < 1) throw ConfigError("model: feedback_bits must be >= 1");
  if (wmmse_iters < 1) throw ConfigError("model: wmmse_iters must be >= 1");
  if (gamma < 0) throw ConfigError("model: gamma must be >= 0");
  if (encoder_hidden.empty() || pre_hidden.empty())
    throw ConfigError("model: hidden layer lists must be non-empty");
  anneal.validate();
}

int AduModel::encoder_in() const {
  return 2 * layout.cells * layout.bs_antennas * layout.user_antennas;
}

int AduModel::pre_in() const {
  return layout.users_per_cell * cfg.feedback_bits;
}

int AduModel::pre_out() const {
  int per_link = 2 * layout.bs_antennas * layout.user_antennas;
  return cfg.policy == CrossLinkPolicy::Full ? layout.cells * per_link
                                             : per_link;
}

AduModel AduModel::init(const sim::LayoutConfig& layout, const ModelConfig& cfg,
                        const NormStats& norm, uint64_t seed) {
  layout.validate();
  cfg.validate();
  AduModel m;
  m.layout = layout;
  m.cfg = cfg;
  m.norm = norm;
  Rng rng = substream(seed, 0, /*tag=*/7);
  m.encoder = nn::Mlp::create(m.store, "enc", m.encoder_in(),
                              cfg.encoder_hidden, cfg.feedback_bits, rng);
  m.pre = nn::Mlp::create(m.store, "pre", m.pre_in(), cfg.pre_hidden,
                          m.pre_out(), rng);
  return m;
}

void AduModel::save(const std::string& ckpt_path) const {
  store.save(ckpt_path);
  nlohmann::json j;
  j["format"] = "adu-model-meta-v1";
  j["layout"] = {{"cells", layout.cells},
                 {"users_per_cell", layout.users_per_cell},
                 {"bs_antennas", layout.bs_antennas},
                 {"user_antennas", layout.user_antennas},
                 {"r_min_km", layout.r_min_km},
                 {"r_max_km", layout.r_max_km},
                 {"cell_spacing_km", layout.cell_spacing_km},
                 {"shadow_sigma_db", layout.shadow_sigma_db},
                 {"noise_dbm", layout.noise_dbm},
                 {"power_dbm", layout.power_dbm}};
  j["model"] = {{"encoder_hidden", cfg.encoder_hidden},
                {"pre_hidden", cfg.pre_hidden},
                {"feedback_bits", cfg.feedback_bits},
                {"wmmse_iters", cfg.wmmse_iters},
                {"policy", to_string(cfg.policy)},
                {"gamma", cfg.gamma},
                {"vib", cfg.vib}};
  j["anneal"] = {{"alpha0", cfg.anneal.alpha0},
                 {"rate", cfg.anneal.rate},
                 {"alpha_max", cfg.anneal.alpha_max}};
  j["norm"] = {{"mean", norm.mean}, {"std", norm.std}};
  std::ofstream os(ckpt_path + ".meta.json");
  if (!os) throw IoError("cannot write sidecar for " + ckpt_path);
  os << j.dump(2) << "\n";
}

AduModel AduModel::load(const std::string& ckpt_path) {
  std::ifstream is(ckpt_path + ".meta.json");
  if (!is) throw IoError("cannot open sidecar for " + ckpt_path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad sidecar: ") + e.what());
  }
  if (j.value("format", "") != "adu-model-meta-v1")
    throw FormatError("sidecar: unknown format tag");

  AduModel m;
  const auto& jl = j.at("layout");
  m.layout.cells = jl.at("cells").get<int>();
  m.layout.users_per_cell = jl.at("users_per_cell").get<int>();
  m.layout.bs_antennas = jl.at("bs_antennas").get<int>();
  m.layout.user_antennas = jl.at("user_antennas").get<int>();
  m.layout.r_min_km = jl.at("r_min_km").get<double>();
  m.layout.r_max_km = jl.at("r_max_km").get<double>();
  m.layout.cell_spacing_km = jl.at("cell_spacing_km").get<double>();
  m.layout.shadow_sigma_db = jl.at("shadow_sigma_db").get<double>();
  m.layout.noise_dbm = jl.at("noise_dbm").get<double>();
  m.layout.power_dbm = jl.at("power_dbm").get<double>();
  const auto& jm = j.at("model");
  m.cfg.encoder_hidden = jm.at("encoder_hidden").get<std::vector<Index>>();
  m.cfg.pre_hidden = jm.at("pre_hidden").get<std::vector<Index>>();
  m.cfg.feedback_bits = jm.at("feedback_bits").get<int>();
  m.cfg.wmmse_iters = jm.at("wmmse_iters").get<int>();
  m.cfg.policy = crosslink_policy_from_string(jm.at("policy").get<std::string>());
  m.cfg.gamma = jm.at("gamma").get<double>();
  m.cfg.vib = jm.at("vib").get<bool>();
  const auto& ja = j.at("anneal");
  m.cfg.anneal.alpha0 = ja.at("alpha0").get<double>();
  m.cfg.anneal.rate = ja.at("rate").get<double>();
  m.cfg.anneal.alpha_max = ja.at("alpha_max").get<double>();
  m.norm.mean = j.at("norm").at("mean").get<double>();
  m.norm.std = j.at("norm").at("std").get<double>();
  m.cfg.validate();
  m.layout.validate();

  m.store = nn::ParamStore::load(ckpt_path);
  m.encoder = nn::Mlp::attach(m.store, "enc", m.encoder_in(),
                              m.cfg.encoder_hidden, m.cfg.feedback_bits);
  m.pre = nn::Mlp::attach(m.store, "pre", m.pre_in(), m.cfg.pre_hidden,
                          m.pre_out());
  return m;
}

NormStats compute_norm_stats(const sim::Dataset& ds) {
  double sum = 0.0, sumsq = 0.0;
  long long count = 0;
  const int M = ds.layout.cells;
  const int K = ds.layout.users_per_cell;
  const int N = ds.layout.num_users();
  for (const auto& s : ds.samples) {
    for (int u = 0; u < N; ++u) {
      for (int j = 0; j < M; ++j) {
        const CMat& h = s.cross(u, j * K);
        for (Index r = 0; r < h.rows(); ++r)
          for (Index c = 0; c < h.cols(); ++c) {
            sum += h(r, c).real() + h(r, c).imag();
            sumsq += h(r, c).real() * h(r, c).real() +
                     h(r, c).imag() * h(r, c).imag();
            count += 2;
          }
      }
    }
  }
  NormStats st;
  if (count == 0) return st;
  st.mean = sum / static_cast<double>(count);
  double var = sumsq / static_cast<double>(count) - st.mean * st.mean;
  st.std = var > 0 ? std::sqrt(var) : 1.0;
  if (st.std == 0.0) st.std = 1.0;
  return st;
}

BatchInputs make_batch(const sim::Dataset& ds, const std::vector<int>& idx,
                       const NormStats& norm) {
  if (idx.empty()) throw ContractError("make_batch: empty index list");
  const int M = ds.layout.cells;
  const int K = ds.layout.users_per_cell;
  const int N = ds.layout.num_users();
  const int Nr = ds.layout.user_antennas;
  const int Nt = ds.layout.bs_antennas;
  const int S = static_cast<int>(idx.size());

  BatchInputs out;
  out.shape = SystemShape{S, M, K, Nt, Nr};
  const int in_width = 2 * M * Nt * Nr;
  out.enc_in = Tensor::real(1, static_cast<Index>(S) * N, in_width);
  out.z_true = Tensor::complex(static_cast<Index>(S) * N, Nr, Nt);
  out.a_true =
      Tensor::complex(static_cast<Index>(S) * N * N, Nr, Nt);

  const int link_flat = Nr * Nt;
  for (int si = 0; si < S; ++si) {
    const sim::ChannelSample& s = ds.samples[idx[si]];
    if (static_cast<int>(s.Z.size()) != N)
      throw DimensionError("make_batch: sample does not match layout");
    for (int u = 0; u < N; ++u) {
      const Index row = static_cast<Index>(si) * N + u;
      out.z_true.c(row) = s.Z[u];
      for (int v = 0; v < N; ++v)
        out.a_true.c(row * N + v) = s.cross(u, v);
      for (int j = 0; j < M; ++j) {
        const CMat& h = s.cross(u, j * K);
        for (int r = 0; r < Nr; ++r)
          for (int t = 0; t < Nt; ++t) {
            const int f = j * link_flat + r * Nt + t;
            out.enc_in.rat(0, row, f) =
                (h(r, t).real() - norm.mean) / norm.std;
            out.enc_in.rat(0, row, M * link_flat + f) =
                (h(r, t).imag() - norm.mean) / norm.std;
          }
      }
    }
  }
  return out;
}

namespace {

// Rotated per-user ordering of the cell's bit rows: the user's own bits
// first, the remaining users sorted lexicographically by bit vector. Sorting
// makes the shared pre-processor equivariant under any within-cell user
// permutation, not just cyclic ones.
std::vector<Index> rotation_indices(const Tensor& bits, const SystemShape& sh) {
  const int N = sh.N();
  const int B = static_cast<int>(bits.cols());
  std::vector<Index> idx(static_cast<size_t>(sh.S) * N * sh.K);
  auto lex_less = [&](Index a, Index b) {
    for (int f = 0; f < B; ++f) {
      double va = bits.rat(0, a, f), vb = bits.rat(0, b, f);
      if (va != vb) return va < vb;
    }
    return false;
  };
  for (int s = 0; s < sh.S; ++s) {
    for (int i = 0; i < sh.M; ++i) {
      const Index base = static_cast<Index>(s) * N + static_cast<Index>(i) * sh.K;
      for (int k = 0; k < sh.K; ++k) {
        const Index u = base + k;
        std::vector<Index> others;
        others.reserve(sh.K - 1);
        for (int k2 = 0; k2 < sh.K; ++k2)
          if (k2 != k) others.push_back(base + k2);
        std::stable_sort(others.begin(), others.end(), lex_less);
        Index* slot = idx.data() + static_cast<size_t>(u) * sh.K;
        slot[0] = u;
        for (size_t o = 0; o < others.size(); ++o) slot[o + 1] = others[o];
      }
    }
  }
  return idx;
}

struct ChannelIndexes {
  std::vector<Index> zidx;
  std::vector<Index> aidx;
};

ChannelIndexes channel_indexes(const SystemShape& sh, CrossLinkPolicy policy) {
  const int N = sh.N();
  ChannelIndexes ci;
  ci.zidx.resize(sh.users());
  ci.aidx.resize(sh.pairs());
  for (int s = 0; s < sh.S; ++s) {
    for (int u = 0; u < N; ++u) {
      const Index gu = static_cast<Index>(s) * N + u;
      if (policy == CrossLinkPolicy::Full) {
        ci.zidx[gu] = gu * sh.M + u / sh.K;
      } else {
        ci.zidx[gu] = gu;
      }
      for (int v = 0; v < N; ++v) {
        const Index p = gu * N + v;
        if (policy == CrossLinkPolicy::Full) {
          ci.aidx[p] = gu * sh.M + v / sh.K;
        } else {
          ci.aidx[p] = (v / sh.K == u / sh.K) ? gu : -1;
        }
      }
    }
  }
  return ci;
}

}  // namespace

PipelineVars build_pipeline(Graph& g, nn::Binding& bind, AduModel& m,
                            const BatchInputs& in, double alpha, bool train) {
  const SystemShape& sh = in.shape;
  const int B = m.cfg.feedback_bits;
  PipelineVars p;

  Var x = g.constant(in.enc_in);
  p.soft = m.encoder.forward(bind, m.store, x, train);
  p.bits = ad::sign_st(p.soft, alpha);
  if (train) p.probs = ad::sigmoid(ad::affine(p.soft, alpha, 0.0));

  // Per-user rotated pre-processor input, [1, S*N, K*B].
  Var bit_slices = ad::reshape_rm(p.bits, sh.users(), 1, B);
  Var rotated = ad::gather(bit_slices, rotation_indices(p.bits.value(), sh));
  Var q = ad::reshape_rm(rotated, 1, sh.users(), static_cast<Index>(sh.K) * B);

  Var y = m.pre.forward(bind, m.store, q, train);

  // Real output -> complex channel estimates at physical channel scale.
  const int links = m.cfg.policy == CrossLinkPolicy::Full ? sh.M : 1;
  const Index half = static_cast<Index>(links) * sh.Nr * sh.Nt;
  Var re = ad::slice_cols(y, 0, half);
  Var im = ad::slice_cols(y, half, half);
  Var htilde_rows = ad::complex_join(ad::scale(re, m.norm.std),
                                     ad::scale(im, m.norm.std));
  p.htilde = ad::reshape_rm(htilde_rows, sh.users() * links, sh.Nr, sh.Nt);

  ChannelIndexes ci = channel_indexes(sh, m.cfg.policy);
  wmmse::ChannelVars ch{ad::gather(p.htilde, ci.zidx),
                        ad::gather(p.htilde, ci.aidx)};
  wmmse::WmmseBuild wb =
      wmmse::build_wmmse(g, sh, ch, m.layout.noise_linear(),
                         m.layout.power_linear(), m.cfg.wmmse_iters, false);
  p.beams = wb.V;

  wmmse::IndexMaps im_maps(sh);
  wmmse::ChannelVars true_ch{g.constant(in.z_true), g.constant(in.a_true)};
  p.rates = wmmse::build_per_user_rates(g, sh, im_maps, true_ch, p.beams,
                                        m.layout.noise_linear());
  p.mean_rate = ad::scale(ad::sum_entries(p.rates), 1.0 / sh.S);
  if (train)
    p.vib = ad::scale(ad::sum_entries(ad::kl_bern_half(p.probs)),
                      1.0 / static_cast<double>(sh.users()));
  return p;
}

Var build_total_loss(const PipelineVars& p, double gamma) {
  Var loss = ad::scale(p.mean_rate, -1.0);
  if (gamma != 0.0) {
    if (!p.vib.valid())
      throw ContractError("total_loss: VIB penalty needs training mode");
    loss = ad::add(loss, ad::scale(p.vib, gamma));
  }
  return loss;
}

namespace {

sim::Dataset wrap_sample(const sim::LayoutConfig& layout,
                         const sim::ChannelSample& s) {
  sim::Dataset ds;
  ds.layout = layout;
  ds.samples = {s};
  return ds;
}

}  // namespace

FeedbackBits encode(AduModel& m, const sim::ChannelSample& s, int user,
                    double alpha, bool train_mode) {
  if (user < 0 || user >= static_cast<int>(s.Z.size()))
    throw DimensionError("encode: user index out of range");
  BatchInputs in = make_batch(wrap_sample(m.layout, s), {0}, m.norm);
  Graph g;
  nn::Binding bind(g, m.store, false);
  Var x = g.constant(in.enc_in);
  Var soft = m.encoder.forward(bind, m.store, x, train_mode);
  Var bits = ad::sign_st(soft, alpha);
  FeedbackBits out;
  const int B = m.cfg.feedback_bits;
  out.bits.resize(B);
  out.soft.resize(B);
  for (int b = 0; b < B; ++b) {
    out.bits[b] = bits.value().rat(0, user, b);
    out.soft[b] = soft.value().rat(0, user, b);
  }
  if (train_mode) {
    out.probs.resize(B);
    Var probs = ad::sigmoid(ad::affine(soft, alpha, 0.0));
    for (int b = 0; b < B; ++b) out.probs[b] = probs.value().rat(0, user, b);
  }
  return out;
}

std::vector<CMat> preprocess(AduModel& m, const std::vector<double>& q_cell,
                             int user) {
  const int B = m.cfg.feedback_bits;
  const int K = m.layout.users_per_cell;
  if (static_cast<int>(q_cell.size()) != K * B)
    throw DimensionError("preprocess: q_cell must have K*B entries");
  const int slot = user % K;

  // Rotate the cell's bit blocks: own slot first, others lexicographically.
  std::vector<int> others;
  for (int k = 0; k < K; ++k)
    if (k != slot) others.push_back(k);
  std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
    for (int f = 0; f < B; ++f) {
      if (q_cell[a * B + f] != q_cell[b * B + f])
        return q_cell[a * B + f] < q_cell[b * B + f];
    }
    return false;
  });
  Tensor qin = Tensor::real(1, 1, K * B);
  for (int f = 0; f < B; ++f) qin.rat(0, 0, f) = q_cell[slot * B + f];
  for (size_t o = 0; o < others.size(); ++o)
    for (int f = 0; f < B; ++f)
      qin.rat(0, 0, (o + 1) * B + f) = q_cell[others[o] * B + f];

  Graph g;
  nn::Binding bind(g, m.store, false);
  Var y = m.pre.forward(bind, m.store, g.constant(qin), false);
  const int links = m.cfg.policy == CrossLinkPolicy::Full ? m.layout.cells : 1;
  const Index half =
      static_cast<Index>(links) * m.layout.user_antennas * m.layout.bs_antennas;
  Var re = ad::slice_cols(y, 0, half);
  Var im = ad::slice_cols(y, half, half);
  Var rows = ad::complex_join(ad::scale(re, m.norm.std),
                              ad::scale(im, m.norm.std));
  Var mats = ad::reshape_rm(rows, links, m.layout.user_antennas,
                            m.layout.bs_antennas);
  std::vector<CMat> out(links);
  for (int l = 0; l < links; ++l) out[l] = mats.value().c(l);
  return out;
}

EndToEndResult forward_end_to_end(AduModel& m, const sim::ChannelSample& s,
                                  double alpha) {
  BatchInputs in = make_batch(wrap_sample(m.layout, s), {0}, m.norm);
  Graph g;
  nn::Binding bind(g, m.store, false);
  PipelineVars p = build_pipeline(g, bind, m, in, alpha, false);

  EndToEndResult out;
  out.beams = wmmse::unstack_v(p.beams.value(), s.cell_of);
  const Tensor& rv = p.rates.value();
  out.report.per_user_bits.resize(rv.batch());
  for (Index u = 0; u < rv.batch(); ++u) {
    out.report.per_user_bits[u] = rv.rat(u, 0, 0);
    out.report.sum_bits += rv.rat(u, 0, 0);
  }
  out.report.cell_power = out.beams.cell_power(m.layout.cells);

  const int B = m.cfg.feedback_bits;
  const int N = m.layout.num_users();
  out.feedback.resize(N);
  for (int u = 0; u < N; ++u) {
    out.feedback[u].bits.resize(B);
    out.feedback[u].soft.resize(B);
    for (int b = 0; b < B; ++b) {
      out.feedback[u].bits[b] = p.bits.value().rat(0, u, b);
      out.feedback[u].soft[b] = p.soft.value().rat(0, u, b);
    }
  }
  return out;
}

double vib_penalty(const std::vector<FeedbackBits>& batch) {
  if (batch.empty()) throw ContractError("vib_penalty: empty batch");
  double acc = 0.0;
  for (const FeedbackBits& fb : batch) {
    if (fb.probs.empty())
      throw ContractError(
          "vib_penalty: probabilities missing (eval-mode feedback)");
    for (double pb : fb.probs) {
      double c = std::min(1.0 - 1e-12, std::max(1e-12, pb));
      acc += M_LN2 + c * std::log(c) + (1.0 - c) * std::log(1.0 - c);
    }
  }
  return acc / static_cast<double>(batch.size());
}

double total_loss(double mean_sum_rate, double penalty, double gamma) {
  if (gamma < 0) throw ContractError("total_loss: gamma must be >= 0");
  return -mean_sum_rate + gamma * penalty;
}

}  // namespace adu::model
