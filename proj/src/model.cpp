#include "minigen/model.hpp"

#include <cmath>
#include <numeric>

#include "minigen/error.hpp"
#include "minigen/rng.hpp"

namespace minigen {

namespace {

// Large finite stand-in for -inf so masked scores stay checkable for NaN/Inf.
constexpr double kMaskedScore = -1e30;

std::string layer_name(const std::string& prefix, int layer,
                       const std::string& rest) {
  return prefix + "layers." + std::to_string(layer) + "." + rest;
}

}  // namespace

std::string to_string(Variant v) {
  return v == Variant::lm ? "lm" : "encdec";
}

Variant variant_from_string(const std::string& s) {
  if (s == "lm") return Variant::lm;
  if (s == "encdec") return Variant::encdec;
  throw PreconditionError("unknown model variant '" + s + "'");
}

ModelConfig ModelConfig::desk(int vocab) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 64;
  cfg.num_heads = 4;
  cfg.d_ff = 256;
  cfg.context_length = 128;
  cfg.vocab_size = vocab;
  return cfg;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig cfg;
  cfg.num_layers = 12;
  cfg.d_model = 768;
  cfg.num_heads = 12;
  cfg.d_ff = 3072;
  cfg.context_length = 512;
  cfg.vocab_size = 63807;
  return cfg;
}

void ModelConfig::validate() const {
  if (num_layers < 1 || d_model < 1 || num_heads < 1 || d_ff < 1 ||
      context_length < 1 || vocab_size < 1)
    throw PreconditionError("model config: all dimensions must be positive");
  if (d_model % num_heads != 0)
    throw PreconditionError("model config: d_model " + std::to_string(d_model) +
                            " not divisible by num_heads " +
                            std::to_string(num_heads));
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw PreconditionError("model config: dropout_rate must be in [0,1)");
}

template <typename T>
TensorPtr<T> WeightSet<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw PreconditionError("weight set: no tensor named '" + name + "'");
  return it->second;
}

template <typename T>
idx WeightSet<T>::total_params() const {
  idx n = 0;
  for (const auto& [name, t] : tensors) n += t->numel();
  return n;
}

std::map<std::string, std::vector<idx>> tensor_shapes(const ModelConfig& cfg,
                                                      Variant variant) {
  cfg.validate();
  const idx d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size,
            ctx = cfg.context_length;
  std::map<std::string, std::vector<idx>> shapes;

  auto add_embeddings = [&](const std::string& prefix) {
    shapes[prefix + "tok_embed"] = {v, d};
    shapes[prefix + "pos_embed"] = {ctx, d};
  };
  auto add_stack = [&](const std::string& prefix, bool cross) {
    for (int l = 0; l < cfg.num_layers; ++l) {
      for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
        shapes[layer_name(prefix, l, m)] = {d, d};
      if (cross)
        for (const char* m : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"})
          shapes[layer_name(prefix, l, m)] = {d, d};
      shapes[layer_name(prefix, l, "ff.w1")] = {d, ff};
      shapes[layer_name(prefix, l, "ff.b1")] = {ff};
      shapes[layer_name(prefix, l, "ff.w2")] = {ff, d};
      shapes[layer_name(prefix, l, "ff.b2")] = {d};
      for (const char* ln : {"ln1", "ln2"}) {
        shapes[layer_name(prefix, l, std::string(ln) + ".gain")] = {d};
        shapes[layer_name(prefix, l, std::string(ln) + ".bias")] = {d};
      }
      if (cross) {
        shapes[layer_name(prefix, l, "ln3.gain")] = {d};
        shapes[layer_name(prefix, l, "ln3.bias")] = {d};
      }
    }
    if (cfg.pre_norm) {
      shapes[prefix + "final_ln.gain"] = {d};
      shapes[prefix + "final_ln.bias"] = {d};
    }
  };

  if (variant == Variant::lm) {
    add_embeddings("");
    add_stack("", /*cross=*/false);
  } else {
    if (cfg.shared_embeddings) {
      add_embeddings("");
    } else {
      add_embeddings("enc.");
      add_embeddings("dec.");
    }
    add_stack("enc.", /*cross=*/false);
    add_stack("dec.", /*cross=*/true);
  }
  return shapes;
}

template <typename T>
TensorPtr<T> init_tensor(const std::string& name, const std::vector<idx>& shape,
                         std::uint64_t seed) {
  auto t = make_tensor<T>(shape);
  const bool is_gain = name.size() > 5 && name.rfind(".gain") == name.size() - 5;
  const bool is_bias =
      (name.size() > 5 && name.rfind(".bias") == name.size() - 5) ||
      (name.size() > 3 && (name.rfind(".b1") == name.size() - 3 ||
                           name.rfind(".b2") == name.size() - 3));
  if (is_gain) {
    std::fill(t->data.begin(), t->data.end(), T(1));
  } else if (is_bias) {
    // already zero
  } else {
    std::mt19937_64 gen(rng::derive_seed(seed, name));
    for (auto& x : t->data) x = static_cast<T>(0.02 * rng::normal(gen));
  }
  return t;
}

template <typename T>
WeightSet<T> init_weights(const ModelConfig& cfg, std::uint64_t seed,
                          Variant variant) {
  WeightSet<T> w;
  for (const auto& [name, shape] : tensor_shapes(cfg, variant))
    w.tensors[name] = init_tensor<T>(name, shape, seed);
  return w;
}

namespace {

template <typename T>
using NodeId = typename Tape<T>::NodeId;

// One transformer stack (embeddings + layers) over `ids`; cross-attention to
// `cross_states` when it is a valid node (decoder of the enc-dec variant).
template <typename T>
NodeId<T> stack_forward(Tape<T>& tape, const WeightSet<T>& w,
                        const ModelConfig& cfg, const std::string& prefix,
                        const std::string& embed_prefix,
                        const std::vector<int>& ids, bool causal,
                        NodeId<T> cross_states, double dropout_rate,
                        std::mt19937_64* gen) {
  if (ids.empty()) throw DegenerateInputError("forward: empty id sequence");
  const idx t = static_cast<idx>(ids.size());
  if (t > cfg.context_length)
    throw PreconditionError("forward: sequence length " + std::to_string(t) +
                            " exceeds context_length " +
                            std::to_string(cfg.context_length));
  const idx d = cfg.d_model;
  const idx dh = d / cfg.num_heads;
  const bool cross = cross_states >= 0;

  auto drop = [&](NodeId<T> x) {
    return (dropout_rate > 0.0 && gen) ? tape.dropout(x, dropout_rate, *gen) : x;
  };
  auto ln = [&](NodeId<T> x, const std::string& name) {
    return tape.layer_norm(x, tape.leaf(w.at(name + ".gain")),
                           tape.leaf(w.at(name + ".bias")));
  };
  // Post-norm residual block: y = LN(x + Drop(f(x))). Pre-norm variant:
  // y = x + Drop(f(LN(x))), with one final LN after the last layer.
  auto block = [&](NodeId<T> x, const std::string& ln_name, auto&& f) {
    if (cfg.pre_norm) return tape.add(x, drop(f(ln(x, ln_name))));
    return ln(tape.add(x, drop(f(x))), ln_name);
  };

  // Multi-head attention of `q_in` against `kv_in` under an additive mask.
  auto attention = [&](NodeId<T> q_in, NodeId<T> kv_in, const std::string& base,
                       bool masked) {
    auto q = tape.matmul(q_in, tape.leaf(w.at(base + ".wq")));
    auto k = tape.matmul(kv_in, tape.leaf(w.at(base + ".wk")));
    auto v = tape.matmul(kv_in, tape.leaf(w.at(base + ".wv")));
    const idx tq = tape.value(q).shape[0];
    const idx tk = tape.value(k).shape[0];
    NodeId<T> mask = -1;
    if (masked) {
      Tensor<T> m({tq, tk});
      for (idx i = 0; i < tq; ++i)
        for (idx j = i + 1; j < tk; ++j)
          m.data[i * tk + j] = static_cast<T>(kMaskedScore);
      mask = tape.constant(std::move(m));
    }
    NodeId<T> heads = -1;
    for (int h = 0; h < cfg.num_heads; ++h) {
      auto qh = tape.slice_cols(q, h * dh, dh);
      auto kh = tape.slice_cols(k, h * dh, dh);
      auto vh = tape.slice_cols(v, h * dh, dh);
      auto scores = tape.scale(tape.matmul_nt(qh, kh),
                               static_cast<T>(1.0 / std::sqrt(double(dh))));
      if (masked) scores = tape.add(scores, mask);
      auto probs = drop(tape.softmax(scores, 1));
      auto oh = tape.matmul(probs, vh);
      heads = h == 0 ? oh : tape.concat(heads, oh, 1);
    }
    return tape.matmul(heads, tape.leaf(w.at(base + ".wo")));
  };

  std::vector<int> positions(t);
  std::iota(positions.begin(), positions.end(), 0);
  auto x = tape.add(
      tape.embedding_gather(tape.leaf(w.at(embed_prefix + "tok_embed")), ids),
      tape.embedding_gather(tape.leaf(w.at(embed_prefix + "pos_embed")),
                            positions));
  x = drop(x);

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string self_base = layer_name(prefix, l, "attn");
    x = block(x, layer_name(prefix, l, "ln1"), [&](NodeId<T> in) {
      return attention(in, in, self_base, causal);
    });
    if (cross) {
      const std::string cross_base = layer_name(prefix, l, "cross");
      x = block(x, layer_name(prefix, l, "ln3"), [&](NodeId<T> in) {
        return attention(in, cross_states, cross_base, /*masked=*/false);
      });
    }
    x = block(x, layer_name(prefix, l, "ln2"), [&](NodeId<T> in) {
      auto h1 = tape.gelu(tape.add(tape.matmul(in, tape.leaf(w.at(layer_name(prefix, l, "ff.w1")))),
                                   tape.leaf(w.at(layer_name(prefix, l, "ff.b1")))));
      return tape.add(tape.matmul(h1, tape.leaf(w.at(layer_name(prefix, l, "ff.w2")))),
                      tape.leaf(w.at(layer_name(prefix, l, "ff.b2"))));
    });
  }
  if (cfg.pre_norm) x = ln(x, prefix + "final_ln");
  return x;
}

std::string embed_prefix_for(const ModelConfig& cfg, const std::string& stack) {
  return (stack.empty() || cfg.shared_embeddings) ? "" : stack;
}

}  // namespace

template <typename T>
typename Tape<T>::NodeId lm_forward(Tape<T>& tape, const WeightSet<T>& w,
                                    const ModelConfig& cfg,
                                    const std::vector<int>& ids,
                                    double dropout_rate, std::mt19937_64* gen) {
  auto h = stack_forward<T>(tape, w, cfg, "", "", ids, /*causal=*/true,
                            /*cross_states=*/-1, dropout_rate, gen);
  return tape.matmul_nt(h, tape.leaf(w.at("tok_embed")));
}

template <typename T>
typename Tape<T>::NodeId encoder_forward(Tape<T>& tape, const WeightSet<T>& w,
                                         const ModelConfig& cfg,
                                         const std::vector<int>& src,
                                         double dropout_rate,
                                         std::mt19937_64* gen) {
  return stack_forward<T>(tape, w, cfg, "enc.",
                          embed_prefix_for(cfg, "enc."), src,
                          /*causal=*/!cfg.encoder_bidirectional,
                          /*cross_states=*/-1, dropout_rate, gen);
}

template <typename T>
typename Tape<T>::NodeId decoder_forward(Tape<T>& tape, const WeightSet<T>& w,
                                         const ModelConfig& cfg,
                                         const std::vector<int>& tgt,
                                         typename Tape<T>::NodeId enc_states,
                                         double dropout_rate,
                                         std::mt19937_64* gen) {
  const std::string embed = embed_prefix_for(cfg, "dec.");
  auto h = stack_forward<T>(tape, w, cfg, "dec.", embed, tgt, /*causal=*/true,
                            enc_states, dropout_rate, gen);
  return tape.matmul_nt(h, tape.leaf(w.at(embed + "tok_embed")));
}

template <typename T>
typename Tape<T>::NodeId encdec_forward(Tape<T>& tape, const WeightSet<T>& w,
                                        const ModelConfig& cfg,
                                        const std::vector<int>& src,
                                        const std::vector<int>& tgt,
                                        double dropout_rate,
                                        std::mt19937_64* gen) {
  auto enc = encoder_forward<T>(tape, w, cfg, src, dropout_rate, gen);
  return decoder_forward<T>(tape, w, cfg, tgt, enc, dropout_rate, gen);
}

template struct WeightSet<float>;
template struct WeightSet<double>;
template TensorPtr<float> init_tensor<float>(const std::string&, const std::vector<idx>&, std::uint64_t);
template TensorPtr<double> init_tensor<double>(const std::string&, const std::vector<idx>&, std::uint64_t);
template WeightSet<float> init_weights<float>(const ModelConfig&, std::uint64_t, Variant);
template WeightSet<double> init_weights<double>(const ModelConfig&, std::uint64_t, Variant);
template Tape<float>::NodeId lm_forward<float>(Tape<float>&, const WeightSet<float>&, const ModelConfig&, const std::vector<int>&, double, std::mt19937_64*);
template Tape<double>::NodeId lm_forward<double>(Tape<double>&, const WeightSet<double>&, const ModelConfig&, const std::vector<int>&, double, std::mt19937_64*);
template Tape<float>::NodeId encoder_forward<float>(Tape<float>&, const WeightSet<float>&, const ModelConfig&, const std::vector<int>&, double, std::mt19937_64*);
template Tape<double>::NodeId encoder_forward<double>(Tape<double>&, const WeightSet<double>&, const ModelConfig&, const std::vector<int>&, double, std::mt19937_64*);
template Tape<float>::NodeId decoder_forward<float>(Tape<float>&, const WeightSet<float>&, const ModelConfig&, const std::vector<int>&, Tape<float>::NodeId, double, std::mt19937_64*);
template Tape<double>::NodeId decoder_forward<double>(Tape<double>&, const WeightSet<double>&, const ModelConfig&, const std::vector<int>&, Tape<double>::NodeId, double, std::mt19937_64*);
template Tape<float>::NodeId encdec_forward<float>(Tape<float>&, const WeightSet<float>&, const ModelConfig&, const std::vector<int>&, const std::vector<int>&, double, std::mt19937_64*);
template Tape<double>::NodeId encdec_forward<double>(Tape<double>&, const WeightSet<double>&, const ModelConfig&, const std::vector<int>&, const std::vector<int>&, double, std::mt19937_64*);

}  // namespace minigen
