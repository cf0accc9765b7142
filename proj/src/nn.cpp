#include "adu/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "adu/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace adu::nn {

double AnnealSchedule::alpha(int epoch) const {
  return std::min(alpha_max, alpha0 + rate * epoch);
}

void AnnealSchedule::validate() const {
  if (!(alpha0 > 0)) throw ConfigError("anneal: alpha0 must be positive");
  if (rate < 0) throw ConfigError("anneal: rate must be >= 0");
  if (!(alpha_max >= alpha0))
    throw ConfigError("anneal: alpha_max must be >= alpha0");
}

void GradientMap::add(const std::string& name, const Tensor& g) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    grads_.emplace(name, g);
    order_.push_back(name);
  } else {
    it->second.add_inplace(g);
  }
}

const Tensor* GradientMap::find(const std::string& name) const {
  auto it = grads_.find(name);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradientMap::re(const std::string& name) const {
  const Tensor* g = find(name);
  if (g == nullptr) throw ContractError("GradientMap: no gradient for " + name);
  if (g->is_real()) return *g;
  Tensor out = Tensor::real(g->batch(), g->rows(), g->cols());
  for (Index i = 0; i < g->size(); ++i) out.rdata()[i] = g->cdata()[i].real();
  return out;
}

Tensor GradientMap::im(const std::string& name) const {
  const Tensor* g = find(name);
  if (g == nullptr) throw ContractError("GradientMap: no gradient for " + name);
  if (g->is_real()) return Tensor::real(g->batch(), g->rows(), g->cols());
  Tensor out = Tensor::real(g->batch(), g->rows(), g->cols());
  for (Index i = 0; i < g->size(); ++i) out.rdata()[i] = g->cdata()[i].imag();
  return out;
}

double GradientMap::l2_norm() const {
  double acc = 0.0;
  for (const auto& [name, g] : grads_) {
    if (g.is_real()) {
      for (Index i = 0; i < g.size(); ++i) acc += g.rdata()[i] * g.rdata()[i];
    } else {
      for (Index i = 0; i < g.size(); ++i) acc += std::norm(g.cdata()[i]);
    }
  }
  return std::sqrt(acc);
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(canonical(name));
  if (it == entries_.end())
    throw ContractError("ParamStore: unknown parameter " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(canonical(name));
  if (it == entries_.end())
    throw ContractError("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (entries_.count(name) || aliases_.count(name))
    throw ContractError("ParamStore: duplicate name " + name);
  Entry e;
  e.trainable = trainable;
  if (trainable) {
    e.m = Tensor::real(init.batch(), init.rows(), init.cols());
    e.v = Tensor::real(init.batch(), init.rows(), init.cols());
    if (!init.is_real())
      throw ContractError("ParamStore: trainable parameters must be real");
  }
  e.value = std::move(init);
  entries_.emplace(name, std::move(e));
  order_.push_back(name);
}

void ParamStore::add_alias(const std::string& alias, const std::string& target) {
  if (entries_.count(alias) || aliases_.count(alias))
    throw ContractError("ParamStore: duplicate name " + alias);
  std::string canon = canonical(target);
  if (!entries_.count(canon))
    throw ContractError("ParamStore: alias target missing: " + target);
  aliases_.emplace(alias, canon);
  alias_order_.push_back(alias);
}

bool ParamStore::has(const std::string& name) const {
  return entries_.count(name) > 0 || aliases_.count(name) > 0;
}

std::string ParamStore::canonical(const std::string& name) const {
  auto it = aliases_.find(name);
  return it == aliases_.end() ? name : it->second;
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const {
  return entry(name).value;
}

int64_t ParamStore::step_count(const std::string& name) const {
  return entry(name).t;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const std::string& n : order_)
    if (entries_.at(n).trainable) out.push_back(n);
  return out;
}

std::vector<std::string> ParamStore::all_names() const { return order_; }

void ParamStore::adam_step(const GradientMap& grads, const AdamConfig& cfg) {
  std::vector<std::string> want = trainable_names();
  std::vector<std::string> got = grads.names();
  std::sort(want.begin(), want.end());
  std::sort(got.begin(), got.end());
  if (want != got)
    throw ContractError(
        "adam_step: gradients must cover exactly the trainable parameters");

  for (const std::string& name : grads.names()) {
    Entry& e = entries_.at(name);
    const Tensor* g = grads.find(name);
    if (!g->is_real() || !g->same_shape(e.value))
      throw ContractError("adam_step: gradient shape mismatch for " + name);
    e.t += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(e.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(e.t));
    for (Index i = 0; i < e.value.size(); ++i) {
      double gi = g->rdata()[i];
      double& m = e.m.rdata()[i];
      double& v = e.v.rdata()[i];
      m = b1 * m + (1.0 - b1) * gi;
      v = b2 * v + (1.0 - b2) * gi * gi;
      double mh = m / bc1;
      double vh = v / bc2;
      e.value.rdata()[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

namespace {

constexpr char kCkptMagic[4] = {'A', 'D', 'U', 'C'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

void put_string(std::ofstream& os, const std::string& s) {
  put(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& is) {
  uint32_t n = get<uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("checkpoint: absurd string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("checkpoint: truncated file");
  return s;
}

void put_tensor(std::ofstream& os, const Tensor& t) {
  put(os, static_cast<uint8_t>(t.is_real() ? 0 : 1));
  put(os, static_cast<uint32_t>(3));  // rank
  put(os, static_cast<uint64_t>(t.batch()));
  put(os, static_cast<uint64_t>(t.rows()));
  put(os, static_cast<uint64_t>(t.cols()));
  if (t.is_real()) {
    os.write(reinterpret_cast<const char*>(t.rdata()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    os.write(reinterpret_cast<const char*>(t.cdata()),
             static_cast<std::streamsize>(t.size() * 2 * sizeof(double)));
  }
}

Tensor get_tensor(std::ifstream& is) {
  uint8_t kind = get<uint8_t>(is);
  uint32_t rank = get<uint32_t>(is);
  if (rank != 3) throw FormatError("checkpoint: unsupported tensor rank");
  auto b = static_cast<Index>(get<uint64_t>(is));
  auto r = static_cast<Index>(get<uint64_t>(is));
  auto c = static_cast<Index>(get<uint64_t>(is));
  Tensor t = kind == 0 ? Tensor::real(b, r, c) : Tensor::complex(b, r, c);
  std::streamsize bytes = static_cast<std::streamsize>(
      t.size() * (kind == 0 ? 1 : 2) * sizeof(double));
  is.read(kind == 0 ? reinterpret_cast<char*>(t.rdata())
                    : reinterpret_cast<char*>(t.cdata()),
          bytes);
  if (!is) throw FormatError("checkpoint: truncated file");
  return t;
}

}  // namespace

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path);
  os.write(kCkptMagic, 4);
  put(os, kCkptVersion);
  put(os, static_cast<uint32_t>(order_.size()));
  put(os, static_cast<uint32_t>(alias_order_.size()));
  for (const std::string& name : order_) {
    const Entry& e = entries_.at(name);
    put_string(os, name);
    put(os, static_cast<uint8_t>(e.trainable ? 1 : 0));
    put(os, static_cast<int64_t>(e.t));
    put_tensor(os, e.value);
    if (e.trainable) {
      put_tensor(os, e.m);
      put_tensor(os, e.v);
    }
  }
  for (const std::string& alias : alias_order_) {
    put_string(os, alias);
    put_string(os, aliases_.at(alias));
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  uint32_t version = get<uint32_t>(is);
  if (version != kCkptVersion)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  uint32_t params = get<uint32_t>(is);
  uint32_t aliases = get<uint32_t>(is);
  ParamStore st;
  for (uint32_t i = 0; i < params; ++i) {
    std::string name = get_string(is);
    bool trainable = get<uint8_t>(is) != 0;
    int64_t t = get<int64_t>(is);
    Tensor value = get_tensor(is);
    st.add(name, std::move(value), trainable);
    Entry& e = st.entries_.at(name);
    e.t = t;
    if (trainable) {
      e.m = get_tensor(is);
      e.v = get_tensor(is);
    }
  }
  for (uint32_t i = 0; i < aliases; ++i) {
    std::string alias = get_string(is);
    std::string target = get_string(is);
    st.add_alias(alias, target);
  }
  return st;
}

bool ParamStore::equal_bits(const ParamStore& o) const {
  if (order_ != o.order_ || alias_order_ != o.alias_order_) return false;
  for (const std::string& name : order_) {
    const Entry& a = entries_.at(name);
    const Entry& b = o.entries_.at(name);
    if (a.trainable != b.trainable || a.t != b.t) return false;
    if (!a.value.same_shape(b.value)) return false;
    auto bits_equal = [](const Tensor& x, const Tensor& y) {
      if (x.is_real()) {
        return std::memcmp(x.rdata(), y.rdata(),
                           x.size() * sizeof(double)) == 0;
      }
      return std::memcmp(x.cdata(), y.cdata(),
                         x.size() * 2 * sizeof(double)) == 0;
    };
    if (!bits_equal(a.value, b.value)) return false;
    if (a.trainable && (!bits_equal(a.m, b.m) || !bits_equal(a.v, b.v)))
      return false;
  }
  return true;
}

Var Binding::leaf(const std::string& name) {
  std::string canon = store_->canonical(name);
  auto it = bound_.find(canon);
  if (it != bound_.end()) return it->second;
  bool grad = with_grad_ && store_->value(canon).is_real();
  Var v = g_->input(store_->value(canon), grad);
  bound_.emplace(canon, v);
  bound_order_.push_back(canon);
  return v;
}

GradientMap Binding::collect() const {
  GradientMap gm;
  for (const std::string& name : bound_order_) {
    const Tensor* g = g_->grad(bound_.at(name));
    if (g != nullptr) gm.add(name, *g);
  }
  return gm;
}

DenseLayer DenseLayer::create(ParamStore& store, const std::string& name,
                              Index in, Index out, Rng& rng) {
  Tensor w = Tensor::real(1, out, in);
  double std = std::sqrt(2.0 / static_cast<double>(in));
  for (Index i = 0; i < w.size(); ++i) w.rdata()[i] = std * rng.normal();
  store.add(name + ".W", std::move(w));
  store.add(name + ".b", Tensor::real(1, 1, out));
  return DenseLayer{name, in, out};
}

DenseLayer DenseLayer::attach(const ParamStore& store,
                              const std::string& name) {
  const Tensor& w = store.value(name + ".W");
  return DenseLayer{name, w.cols(), w.rows()};
}

Var DenseLayer::forward(Binding& bind, Var x) const {
  const Tensor& xv = x.value();
  if (!xv.is_real() || xv.batch() != 1 || xv.cols() != in)
    throw DimensionError("dense " + name + ": expected real [1,R," +
                         std::to_string(in) + "]");
  Var w = bind.leaf(name + ".W");
  Var b = bind.leaf(name + ".b");
  return ad::add_rowvec(ad::matmul(x, ad::hermitian(w)), b);
}

BatchNormLayer BatchNormLayer::create(ParamStore& store,
                                      const std::string& name,
                                      Index features) {
  Tensor gamma = Tensor::real(1, 1, features);
  for (Index i = 0; i < features; ++i) gamma.rdata()[i] = 1.0;
  store.add(name + ".gamma", std::move(gamma));
  store.add(name + ".beta", Tensor::real(1, 1, features));
  store.add(name + ".running_mean", Tensor::real(1, 1, features), false);
  Tensor rv = Tensor::real(1, 1, features);
  for (Index i = 0; i < features; ++i) rv.rdata()[i] = 1.0;
  store.add(name + ".running_var", std::move(rv), false);
  return BatchNormLayer{name, features};
}

BatchNormLayer BatchNormLayer::attach(const ParamStore& store,
                                      const std::string& name) {
  return BatchNormLayer{name, store.value(name + ".gamma").cols()};
}

Var BatchNormLayer::forward(Binding& bind, ParamStore& store, Var x,
                            bool train) const {
  Graph& g = *x.g;
  const Tensor& xv = x.value();
  if (!xv.is_real() || xv.batch() != 1 || xv.cols() != features)
    throw DimensionError("batchnorm " + name + ": bad input shape");
  Var gamma = bind.leaf(name + ".gamma");
  Var beta = bind.leaf(name + ".beta");

  if (train) {
    if (xv.rows() < 2)
      throw ContractError("batchnorm " + name +
                          ": train mode needs batch >= 2");
    Var mu = ad::col_mean(x);
    Var xc = ad::add_rowvec(x, ad::scale(mu, -1.0));
    Var var = ad::col_mean(ad::square_e(xc));
    Var istd = ad::rsqrt_shift(var, epsilon);
    Var xhat = ad::mul_rowvec(xc, istd);

    // Running statistics live outside the graph.
    Tensor& rm = store.value(name + ".running_mean");
    Tensor& rv = store.value(name + ".running_var");
    const Tensor& muv = mu.value();
    const Tensor& varv = var.value();
    for (Index i = 0; i < features; ++i) {
      rm.rdata()[i] = momentum * rm.rdata()[i] + (1.0 - momentum) * muv.rdata()[i];
      rv.rdata()[i] = momentum * rv.rdata()[i] + (1.0 - momentum) * varv.rdata()[i];
    }
    return ad::add_rowvec(ad::mul_rowvec(xhat, gamma), beta);
  }

  const Tensor& rm = store.value(name + ".running_mean");
  const Tensor& rv = store.value(name + ".running_var");
  Tensor sc = Tensor::real(1, 1, features);
  Tensor ofs = Tensor::real(1, 1, features);
  for (Index i = 0; i < features; ++i) {
    double s = 1.0 / std::sqrt(rv.rdata()[i] + epsilon);
    sc.rdata()[i] = s;
    ofs.rdata()[i] = -rm.rdata()[i] * s;
  }
  Var xn = ad::add_rowvec(ad::mul_rowvec(x, g.constant(std::move(sc))),
                          g.constant(std::move(ofs)));
  return ad::add_rowvec(ad::mul_rowvec(xn, gamma), beta);
}

Mlp Mlp::create(ParamStore& store, const std::string& name, Index in,
                const std::vector<Index>& hidden, Index out, Rng& rng) {
  Mlp m;
  Index prev = in;
  for (size_t i = 0; i < hidden.size(); ++i) {
    std::string lname = name + ".l" + std::to_string(i);
    m.dense.push_back(DenseLayer::create(store, lname, prev, hidden[i], rng));
    m.bn.push_back(BatchNormLayer::create(store, lname + ".bn", hidden[i]));
    prev = hidden[i];
  }
  std::string lname = name + ".l" + std::to_string(hidden.size());
  m.dense.push_back(DenseLayer::create(store, lname, prev, out, rng));
  return m;
}

Mlp Mlp::attach(const ParamStore& store, const std::string& name, Index in,
                const std::vector<Index>& hidden, Index out) {
  Mlp m;
  (void)in;
  (void)out;
  for (size_t i = 0; i < hidden.size(); ++i) {
    std::string lname = name + ".l" + std::to_string(i);
    m.dense.push_back(DenseLayer::attach(store, lname));
    m.bn.push_back(BatchNormLayer::attach(store, lname + ".bn"));
  }
  m.dense.push_back(DenseLayer::attach(
      store, name + ".l" + std::to_string(hidden.size())));
  return m;
}

Var Mlp::forward(Binding& bind, ParamStore& store, Var x, bool train) const {
  Var h = x;
  for (size_t i = 0; i + 1 < dense.size(); ++i) {
    h = dense[i].forward(bind, h);
    h = bn[i].forward(bind, store, h, train);
    h = ad::relu(h);
  }
  return dense.back().forward(bind, h);
}

}  // namespace adu::nn
