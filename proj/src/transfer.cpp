#include "minigen/transfer.hpp"

#include <random>

#include "minigen/bpe.hpp"
#include "minigen/error.hpp"
#include "minigen/rng.hpp"

namespace minigen {

std::string to_string(TransferStrategy s) {
  switch (s) {
    case TransferStrategy::lm_direct: return "lm_direct";
    case TransferStrategy::encoder_only: return "encoder_only";
    case TransferStrategy::decoder_only: return "decoder_only";
    case TransferStrategy::both: return "both";
    case TransferStrategy::none: return "none";
  }
  throw PreconditionError("unknown transfer strategy");
}

TransferStrategy transfer_strategy_from_string(const std::string& s) {
  if (s == "lm_direct") return TransferStrategy::lm_direct;
  if (s == "encoder_only") return TransferStrategy::encoder_only;
  if (s == "decoder_only") return TransferStrategy::decoder_only;
  if (s == "both") return TransferStrategy::both;
  if (s == "none") return TransferStrategy::none;
  throw PreconditionError("unknown transfer strategy '" + s + "'");
}

idx count_params(const ModelConfig& cfg, Variant variant) {
  idx n = 0;
  for (const auto& [name, shape] : tensor_shapes(cfg, variant))
    n += numel_of(shape);
  return n;
}

namespace {

void check_compatible(const ModelConfig& a, const ModelConfig& b) {
  auto need = [](const char* field, int x, int y) {
    if (x != y)
      throw PreconditionError(std::string("transfer: ") + field +
                              " mismatch: " + std::to_string(x) + " vs " +
                              std::to_string(y));
  };
  need("d_model", a.d_model, b.d_model);
  need("num_heads", a.num_heads, b.num_heads);
  need("num_layers", a.num_layers, b.num_layers);
  need("vocab_size", a.vocab_size, b.vocab_size);
  need("context_length", a.context_length, b.context_length);
  need("d_ff", a.d_ff, b.d_ff);
  need("pre_norm", a.pre_norm ? 1 : 0, b.pre_norm ? 1 : 0);
}

// LM tensor the target name maps to, or "" when the strategy leaves the
// tensor randomly initialized.
std::string source_name(const std::string& target, TransferStrategy s,
                        Variant variant) {
  if (s == TransferStrategy::none) return "";
  if (variant == Variant::lm) return target;  // lm_direct: identity

  const bool enc_side = s == TransferStrategy::encoder_only ||
                        s == TransferStrategy::both;
  const bool dec_side = s == TransferStrategy::decoder_only ||
                        s == TransferStrategy::both;
  auto strip = [&](const std::string& prefix) -> std::string {
    return target.substr(prefix.size());
  };
  // Embeddings move whenever either stack does: a transferred stack is only
  // meaningful on top of the representations it was trained with.
  const bool embed = target == "tok_embed" || target == "pos_embed" ||
                     target == "enc.tok_embed" || target == "enc.pos_embed" ||
                     target == "dec.tok_embed" || target == "dec.pos_embed";
  if (embed) {
    const std::string bare =
        target.compare(0, 4, "enc.") == 0 || target.compare(0, 4, "dec.") == 0
            ? target.substr(4)
            : target;
    return (enc_side || dec_side) ? bare : "";
  }
  if (target.compare(0, 4, "enc.") == 0) return enc_side ? strip("enc.") : "";
  if (target.compare(0, 4, "dec.") == 0) {
    if (target.find(".cross.") != std::string::npos ||
        target.find(".ln3.") != std::string::npos)
      return "";  // no counterpart exists in the LM
    return dec_side ? strip("dec.") : "";
  }
  return "";
}

}  // namespace

template <typename T>
std::pair<WeightSet<T>, TransferReport> apply_transfer(
    TransferStrategy strategy, Variant target_variant, const WeightSet<T>& lm,
    const ModelConfig& lm_cfg, const ModelConfig& target_cfg,
    std::uint64_t seed) {
  if (strategy == TransferStrategy::lm_direct && target_variant != Variant::lm)
    throw PreconditionError("transfer: lm_direct targets the decoder-only LM");
  if ((strategy == TransferStrategy::encoder_only ||
       strategy == TransferStrategy::decoder_only ||
       strategy == TransferStrategy::both) &&
      target_variant != Variant::encdec)
    throw PreconditionError("transfer: strategy " + to_string(strategy) +
                            " targets the encoder-decoder");
  if (strategy != TransferStrategy::none) check_compatible(lm_cfg, target_cfg);

  WeightSet<T> out;
  TransferReport rep;
  rep.strategy = strategy;
  const idx d = target_cfg.d_model;

  for (const auto& [name, shape] : tensor_shapes(target_cfg, target_variant)) {
    const std::string src = source_name(name, strategy, target_variant);
    if (src.empty()) {
      out.tensors[name] = init_tensor<T>(name, shape, seed);
      rep.provenance[name] = "random";
      rep.random_params += numel_of(shape);
      continue;
    }
    auto src_tensor = lm.at(src);
    if (src_tensor->shape != shape)
      throw PreconditionError("transfer: shape mismatch for '" + name + "': " +
                              shape_str(shape) + " vs " +
                              shape_str(src_tensor->shape));
    auto t = make_tensor<T>(shape);
    t->data = src_tensor->data;
    rep.provenance[name] = "pretrained";
    rep.pretrained_params += numel_of(shape);
    // The <delim> row never existed during pre-training; re-draw it.
    if (name == "tok_embed" || name == "enc.tok_embed" ||
        name == "dec.tok_embed") {
      std::mt19937_64 gen(rng::derive_seed(seed, name + "/delim_row"));
      for (idx j = 0; j < d; ++j)
        t->data[idx(bpe::kDelim) * d + j] = static_cast<T>(0.02 * rng::normal(gen));
      rep.pretrained_params -= d;
      rep.random_params += d;
    }
    out.tensors[name] = std::move(t);
  }
  return {std::move(out), std::move(rep)};
}

template std::pair<WeightSet<float>, TransferReport> apply_transfer<float>(
    TransferStrategy, Variant, const WeightSet<float>&, const ModelConfig&,
    const ModelConfig&, std::uint64_t);
template std::pair<WeightSet<double>, TransferReport> apply_transfer<double>(
    TransferStrategy, Variant, const WeightSet<double>&, const ModelConfig&,
    const ModelConfig&, std::uint64_t);

}  // namespace minigen
