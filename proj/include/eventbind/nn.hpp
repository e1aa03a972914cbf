#pragma once

// Named parameter storage and the transformer building blocks shared by the
// event, image and text encoders.

#include "eventbind/autodiff.hpp"
#include "eventbind/rng.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace eventbind::nn {

using ad::Mat;
using ad::Param;
using ad::Tape;
using ad::Var;

/// Owns every parameter of a model under a stable, sortable name.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param& add(const std::string& name, Mat init) {
    auto [it, inserted] = params_.emplace(name, std::make_unique<Param>(std::move(init)));
    if (!inserted) throw std::logic_error("duplicate parameter name: " + name);
    return *it->second;
  }

  [[nodiscard]] bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
  }

  [[nodiscard]] const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
  }

  [[nodiscard]] const std::map<std::string, std::unique_ptr<Param>>& items() const { return params_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  /// Sets trainable=flag for every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool flag) {
    for (auto& [name, p] : params_) {
      if (name.rfind(prefix, 0) == 0) p->trainable = flag;
    }
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::map<std::string, std::unique_ptr<Param>> params_;
};

inline Mat gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double stddev) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, stddev);
  }
  return m;
}

struct Linear {
  Param* weight = nullptr;  // in x out
  Param* bias = nullptr;    // 1 x out, may be null

  Linear() = default;
  Linear(ParamStore& store, Rng& rng, const std::string& name, int in, int out, bool with_bias = true) {
    weight = &store.add(name + ".weight", gaussian(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    if (with_bias) bias = &store.add(name + ".bias", Mat::Zero(1, out));
  }

  Var operator()(Tape& t, Var x) const {
    Var y = ad::matmul(x, t.param(*weight));
    return bias ? ad::add_row(y, t.param(*bias)) : y;
  }
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int width) {
    gamma = &store.add(name + ".gamma", Mat::Ones(1, width));
    beta = &store.add(name + ".beta", Mat::Zero(1, width));
  }

  Var operator()(Tape& t, Var x) const { return ad::layer_norm(x, t.param(*gamma), t.param(*beta)); }
};

/// Collects attention probability matrices (one per head per call) for inspection.
struct AttentionProbe {
  std::vector<Mat> weights;
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;
  int width = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, Rng& rng, const std::string& name, int width_, int heads_)
      : heads(heads_), width(width_) {
    if (heads <= 0 || width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
    q = Linear(store, rng, name + ".q", width, width);
    k = Linear(store, rng, name + ".k", width, width);
    v = Linear(store, rng, name + ".v", width, width);
    o = Linear(store, rng, name + ".o", width, width);
  }

  Var operator()(Tape& t, Var x, bool causal = false, AttentionProbe* probe = nullptr) const {
    if (x.cols() != width) throw std::invalid_argument("attention input width mismatch");
    const int hd = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    Var qx = q(t, x);
    Var kx = k(t, x);
    Var vx = v(t, x);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = ad::cols(qx, h * hd, hd);
      Var kh = ad::cols(kx, h * hd, hd);
      Var vh = ad::cols(vx, h * hd, hd);
      Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), causal);
      if (probe) probe->weights.push_back(att.value());
      outs.push_back(ad::matmul(att, vh));
    }
    Var merged = heads == 1 ? outs.front() : ad::hconcat(outs);
    return o(t, merged);
  }
};

/// Pre-norm transformer block: x + Att(LN(x)), then + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, Rng& rng, const std::string& name, int width, int heads, int mlp_ratio = 4)
      : ln1(store, name + ".ln1", width),
        ln2(store, name + ".ln2", width),
        attn(store, rng, name + ".attn", width, heads),
        fc1(store, rng, name + ".fc1", width, width * mlp_ratio),
        fc2(store, rng, name + ".fc2", width * mlp_ratio, width) {}

  Var operator()(Tape& t, Var x, bool causal = false, AttentionProbe* probe = nullptr) const {
    Var h = ad::add(x, attn(t, ln1(t, x), causal, probe));
    return ad::add(h, fc2(t, ad::quick_gelu(fc1(t, ln2(t, h)))));
  }
};

}  // namespace eventbind::nn
