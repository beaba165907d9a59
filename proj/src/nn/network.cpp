#include "ma2c/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ma2c/error.hpp"
#include "ma2c/nn/kernels.hpp"

namespace ma2c::nn {

using nlohmann::json;

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string core_name(CoreKind k) { return k == CoreKind::Lstm ? "lstm" : "dense"; }
std::string head_name(HeadKind k) { return k == HeadKind::Softmax ? "softmax" : "linear"; }

} // namespace

void LayerSpec::validate() const {
  if (core_hidden == 0) throw ContractError("layer spec: core hidden size must be >= 1");
  if (head_dim == 0) throw ContractError("layer spec: head dimension must be >= 1");
  bool any = false;
  for (const InputGroup &g : groups) {
    if (g.input_dim > 0 && g.hidden == 0)
      throw ContractError("layer spec: branch '" + g.name + "' needs a hidden size >= 1");
    any = any || g.input_dim > 0;
  }
  if (!any) throw ContractError("layer spec: no input branch has a nonzero dimension");
}

const ParamTensor &NetParams::get(const std::string &name) const {
  for (const auto &t : tensors)
    if (t.name == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

ParamTensor &NetParams::get(const std::string &name) {
  return const_cast<ParamTensor &>(static_cast<const NetParams &>(*this).get(name));
}

std::size_t NetParams::count() const {
  std::size_t n = 0;
  for (const auto &t : tensors) n += t.value.size();
  return n;
}

std::vector<double> orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng &rng) {
  if (rows == 0 || cols == 0) throw ContractError("orthogonal_init needs rows, cols >= 1");
  const std::size_t m = std::max(rows, cols);
  const std::size_t k = std::min(rows, cols);
  // k column vectors of length m, stored contiguously.
  std::vector<double> basis(m * k);
  for (double &x : basis) x = rng.normal();
  for (std::size_t j = 0; j < k; ++j) {
    double *v = basis.data() + j * m;
    // Two passes of modified Gram-Schmidt keep orthogonality at round-off level.
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t p = 0; p < j; ++p) {
        const double *u = basis.data() + p * m;
        double proj = 0.0;
        for (std::size_t i = 0; i < m; ++i) proj += u[i] * v[i];
        for (std::size_t i = 0; i < m; ++i) v[i] -= proj * u[i];
      }
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < m; ++i) v[i] /= norm;
  }
  std::vector<double> w(rows * cols);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      const double x = gain * basis[j * m + i];
      if (rows >= cols)
        w[i * cols + j] = x; // orthonormal columns
      else
        w[j * cols + i] = x; // orthonormal rows
    }
  return w;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double top = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (double &x : p) total += (x = std::exp(x - top));
  for (double &x : p) x /= total;
  return p;
}

void Network::allocate() {
  spec_.validate();
  params_ = NetParams{};
  active_groups_.clear();
  branch_w_.clear();
  branch_b_.clear();
  z_dim_ = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    params_.tensors.push_back({std::move(name), rows, cols, std::vector<double>(rows * cols, 0.0),
                               std::vector<double>(rows * cols, 0.0)});
    return params_.tensors.size() - 1;
  };
  for (std::size_t g = 0; g < spec_.groups.size(); ++g) {
    const InputGroup &grp = spec_.groups[g];
    if (grp.input_dim == 0) continue;
    active_groups_.push_back(g);
    branch_w_.push_back(add(grp.name + ".w", grp.hidden, grp.input_dim));
    branch_b_.push_back(add(grp.name + ".b", grp.hidden, 1));
    z_dim_ += grp.hidden;
  }
  const std::size_t H = spec_.core_hidden;
  if (spec_.core == CoreKind::Lstm) {
    core_wx_ = add("lstm.wx", 4 * H, z_dim_);
    core_wh_ = add("lstm.wh", 4 * H, H);
    core_b_ = add("lstm.b", 4 * H, 1);
  } else {
    core_wx_ = add("dense.w", H, z_dim_);
    core_b_ = add("dense.b", H, 1);
  }
  head_w_ = add("head.w", spec_.head_dim, H);
  head_b_ = add("head.b", spec_.head_dim, 1);
}

Network::Network(LayerSpec spec) : spec_(std::move(spec)) { allocate(); }

Network::Network(LayerSpec spec, Rng &rng) : spec_(std::move(spec)) {
  allocate();
  for (ParamTensor &t : params_.tensors)
    if (!t.name.ends_with(".b"))
      t.value = orthogonal_init(t.rows, t.cols, t.name == "head.w" ? spec_.head_gain : 1.0, rng);
}

RecurrentState Network::initial_state() const {
  if (spec_.core != CoreKind::Lstm) return {};
  return {std::vector<double>(spec_.core_hidden, 0.0), std::vector<double>(spec_.core_hidden, 0.0)};
}

Gradients Network::zero_gradients() const {
  Gradients g;
  g.reserve(params_.tensors.size());
  for (const ParamTensor &t : params_.tensors) g.emplace_back(t.value.size(), 0.0);
  return g;
}

StepCache Network::step(const StepInput &input, const RecurrentState &rec, bool reset) const {
  if (input.size() != spec_.groups.size())
    throw ContractError("network input has " + std::to_string(input.size()) + " groups, expected " +
                        std::to_string(spec_.groups.size()));
  const auto &T = params_.tensors;
  StepCache sc;
  sc.reset = reset;
  sc.z.resize(z_dim_);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < active_groups_.size(); ++b) {
    const InputGroup &grp = spec_.groups[active_groups_[b]];
    const auto &x = input[active_groups_[b]];
    if (x.size() != grp.input_dim)
      throw ContractError("input group '" + grp.name + "' has dimension " + std::to_string(x.size()) +
                          ", expected " + std::to_string(grp.input_dim));
    std::vector<double> pre(grp.hidden);
    kernels::gemv(T[branch_w_[b]].value, x, T[branch_b_[b]].value, pre);
    for (std::size_t k = 0; k < grp.hidden; ++k) sc.z[offset + k] = std::max(pre[k], 0.0);
    offset += grp.hidden;
    sc.inputs.push_back(x);
    sc.branch_pre.push_back(std::move(pre));
  }

  const std::size_t H = spec_.core_hidden;
  if (spec_.core == CoreKind::Lstm) {
    if (reset || rec.h.size() != H) {
      sc.h_prev.assign(H, 0.0);
      sc.c_prev.assign(H, 0.0);
    } else {
      sc.h_prev = rec.h;
      sc.c_prev = rec.c;
    }
    sc.gates.resize(4 * H);
    kernels::gemv(T[core_wx_].value, sc.z, T[core_b_].value, sc.gates);
    std::vector<double> rec_part(4 * H);
    kernels::gemv(T[core_wh_].value, sc.h_prev, {}, rec_part);
    sc.c.resize(H);
    sc.tanh_c.resize(H);
    sc.h.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
      const double i = sigmoid(sc.gates[k] + rec_part[k]);
      const double f = sigmoid(sc.gates[H + k] + rec_part[H + k]);
      const double o = sigmoid(sc.gates[2 * H + k] + rec_part[2 * H + k]);
      const double g = std::tanh(sc.gates[3 * H + k] + rec_part[3 * H + k]);
      sc.gates[k] = i;
      sc.gates[H + k] = f;
      sc.gates[2 * H + k] = o;
      sc.gates[3 * H + k] = g;
      sc.c[k] = f * sc.c_prev[k] + i * g;
      sc.tanh_c[k] = std::tanh(sc.c[k]);
      sc.h[k] = o * sc.tanh_c[k];
    }
  } else {
    sc.core_pre.resize(H);
    kernels::gemv(T[core_wx_].value, sc.z, T[core_b_].value, sc.core_pre);
    sc.h.resize(H);
    for (std::size_t k = 0; k < H; ++k) sc.h[k] = std::max(sc.core_pre[k], 0.0);
  }
  sc.head.resize(spec_.head_dim);
  kernels::gemv(T[head_w_].value, sc.h, T[head_b_].value, sc.head);
  return sc;
}

std::vector<double> Network::forward(const StepInput &input, RecurrentState &rec) const {
  StepCache sc = step(input, rec, false);
  if (spec_.core == CoreKind::Lstm) {
    rec.h = std::move(sc.h);
    rec.c = std::move(sc.c);
  }
  return spec_.head == HeadKind::Softmax ? softmax(sc.head) : sc.head;
}

SequenceCache Network::forward_sequence(std::span<const StepInput> inputs, std::span<const char> resets,
                                        const RecurrentState &rec0) const {
  if (!resets.empty() && resets.size() != inputs.size())
    throw ContractError("reset flags do not match the sequence length");
  SequenceCache cache;
  cache.steps.reserve(inputs.size());
  RecurrentState rec = rec0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    StepCache sc = step(inputs[t], rec, !resets.empty() && resets[t]);
    if (spec_.core == CoreKind::Lstm) {
      rec.h = sc.h;
      rec.c = sc.c;
    }
    cache.steps.push_back(std::move(sc));
  }
  cache.final_state = std::move(rec);
  return cache;
}

Gradients Network::backward(const SequenceCache &cache, std::span<const std::vector<double>> d_head,
                            std::size_t window) const {
  if (d_head.size() != cache.steps.size())
    throw ContractError("output gradient count does not match the cached sequence");
  const auto &T = params_.tensors;
  Gradients grads = zero_gradients();
  const std::size_t H = spec_.core_hidden;
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
  std::vector<double> dh(H), dc(H), dgates(4 * H), dz(z_dim_), dpre;

  for (std::size_t t = cache.steps.size(); t-- > 0;) {
    const StepCache &sc = cache.steps[t];
    const std::vector<double> &dout = d_head[t];
    if (dout.size() != spec_.head_dim) throw ContractError("output gradient has the wrong dimension");

    kernels::ger(dout, sc.h, grads[head_w_]);
    kernels::axpy(1.0, dout, grads[head_b_]);
    std::fill(dh.begin(), dh.end(), 0.0);
    kernels::gemv_t_acc(T[head_w_].value, dout, dh);
    std::fill(dz.begin(), dz.end(), 0.0);

    if (spec_.core == CoreKind::Lstm) {
      for (std::size_t k = 0; k < H; ++k) {
        dh[k] += dh_next[k];
        const double i = sc.gates[k], f = sc.gates[H + k], o = sc.gates[2 * H + k], g = sc.gates[3 * H + k];
        const double tc = sc.tanh_c[k];
        const double d_o = dh[k] * tc;
        dc[k] = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dgates[k] = dc[k] * g * i * (1.0 - i);
        dgates[H + k] = dc[k] * sc.c_prev[k] * f * (1.0 - f);
        dgates[2 * H + k] = d_o * o * (1.0 - o);
        dgates[3 * H + k] = dc[k] * i * (1.0 - g * g);
        dc_next[k] = dc[k] * f;
      }
      kernels::ger(dgates, sc.z, grads[core_wx_]);
      kernels::ger(dgates, sc.h_prev, grads[core_wh_]);
      kernels::axpy(1.0, dgates, grads[core_b_]);
      kernels::gemv_t_acc(T[core_wx_].value, dgates, dz);
      const bool cut = sc.reset || (window > 0 && t % window == 0);
      if (cut) {
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        std::fill(dc_next.begin(), dc_next.end(), 0.0);
      } else {
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        kernels::gemv_t_acc(T[core_wh_].value, dgates, dh_next);
      }
    } else {
      dpre.assign(H, 0.0);
      for (std::size_t k = 0; k < H; ++k) dpre[k] = sc.core_pre[k] > 0.0 ? dh[k] : 0.0;
      kernels::ger(dpre, sc.z, grads[core_wx_]);
      kernels::axpy(1.0, dpre, grads[core_b_]);
      kernels::gemv_t_acc(T[core_wx_].value, dpre, dz);
    }

    std::size_t offset = 0;
    for (std::size_t b = 0; b < active_groups_.size(); ++b) {
      const std::size_t hidden = spec_.groups[active_groups_[b]].hidden;
      dpre.assign(hidden, 0.0);
      for (std::size_t k = 0; k < hidden; ++k) dpre[k] = sc.branch_pre[b][k] > 0.0 ? dz[offset + k] : 0.0;
      kernels::ger(dpre, sc.inputs[b], grads[branch_w_[b]]);
      kernels::axpy(1.0, dpre, grads[branch_b_[b]]);
      offset += hidden;
    }
  }
  return grads;
}

json Network::to_json() const {
  json groups = json::array();
  for (const InputGroup &g : spec_.groups)
    groups.push_back({{"name", g.name}, {"input_dim", g.input_dim}, {"hidden", g.hidden}});
  json tensors = json::array();
  for (const ParamTensor &t : params_.tensors)
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"value", t.value},
                       {"mean_square", t.mean_square}});
  return {{"format", "ma2c-network"},
          {"version", 1},
          {"spec",
           {{"groups", groups},
            {"core", core_name(spec_.core)},
            {"core_hidden", spec_.core_hidden},
            {"head", head_name(spec_.head)},
            {"head_dim", spec_.head_dim}}},
          {"param_version", params_.version},
          {"tensors", tensors}};
}

Network Network::from_json(const json &doc) {
  try {
    if (doc.at("format") != "ma2c-network" || doc.at("version") != 1)
      throw ConfigError("unsupported network document");
    const json &js = doc.at("spec");
    LayerSpec spec;
    for (const json &g : js.at("groups"))
      spec.groups.push_back({g.at("name").get<std::string>(), g.at("input_dim").get<std::size_t>(),
                             g.at("hidden").get<std::size_t>()});
    spec.core = js.at("core") == "lstm" ? CoreKind::Lstm : CoreKind::Dense;
    spec.core_hidden = js.at("core_hidden").get<std::size_t>();
    spec.head = js.at("head") == "softmax" ? HeadKind::Softmax : HeadKind::Linear;
    spec.head_dim = js.at("head_dim").get<std::size_t>();
    Network net(spec);
    const json &tensors = doc.at("tensors");
    if (tensors.size() != net.params_.tensors.size()) throw ConfigError("network document has the wrong tensor count");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      ParamTensor &t = net.params_.tensors[k];
      const json &jt = tensors[k];
      if (jt.at("name") != t.name || jt.at("shape").at(0) != t.rows || jt.at("shape").at(1) != t.cols)
        throw ConfigError("network tensor '" + t.name + "' does not match the stored shape");
      t.value = jt.at("value").get<std::vector<double>>();
      t.mean_square = jt.at("mean_square").get<std::vector<double>>();
      if (t.value.size() != t.rows * t.cols || t.mean_square.size() != t.value.size())
        throw ConfigError("network tensor '" + t.name + "' has a truncated array");
    }
    net.params_.version = doc.at("param_version").get<std::uint64_t>();
    return net;
  } catch (const json::exception &e) {
    throw ConfigError(std::string("malformed network document: ") + e.what());
  }
}

double clip_gradients(Gradients &grads, double max_norm) {
  double total = 0.0;
  for (const auto &g : grads) total += kernels::sum_squares(g);
  const double norm = std::sqrt(total);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto &g : grads)
      for (double &x : g) x *= scale;
  }
  return norm;
}

void rmsprop_update(NetParams &params, const Gradients &grads, double lr, const RmsPropSettings &settings) {
  if (grads.size() != params.tensors.size()) throw ContractError("gradient list does not match parameters");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    ParamTensor &t = params.tensors[k];
    if (grads[k].size() != t.value.size()) throw ContractError("gradient shape mismatch for '" + t.name + "'");
    kernels::active().rmsprop(t.value.data(), t.mean_square.data(), grads[k].data(), t.value.size(), lr,
                              settings.decay, settings.eps);
  }
  ++params.version;
}

} // namespace ma2c::nn
