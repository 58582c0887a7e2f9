#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "minigen/model.hpp"

namespace minigen {

// How pre-trained LM weights seed the fine-tuning model.
enum class TransferStrategy {
  lm_direct,     // same decoder-only architecture, weights copied as-is
  encoder_only,  // enc-dec: encoder stack from the LM, decoder random
  decoder_only,  // enc-dec: decoder stack from the LM, encoder random
  both,          // enc-dec: both stacks from the LM, only cross-attention random
  none,          // fresh random init (scratch baseline)
};

std::string to_string(TransferStrategy s);
TransferStrategy transfer_strategy_from_string(const std::string& s);

struct TransferReport {
  TransferStrategy strategy = TransferStrategy::none;
  // tensor name -> "pretrained" or "random"; tensors marked pretrained may
  // still contain the re-randomized <delim> embedding row, which is counted
  // under random_params.
  std::map<std::string, std::string> provenance;
  idx pretrained_params = 0;
  idx random_params = 0;
};

// Builds the target WeightSet from a pre-trained LM. Tensors not covered by
// the strategy (and always the cross-attention block plus the <delim>
// embedding row) are freshly initialized from per-tensor sub-seeds, so the
// result is reproducible tensor-by-tensor.
template <typename T>
std::pair<WeightSet<T>, TransferReport> apply_transfer(
    TransferStrategy strategy, Variant target_variant, const WeightSet<T>& lm,
    const ModelConfig& lm_cfg, const ModelConfig& target_cfg,
    std::uint64_t seed);

// Exact parameter count by enumerating tensor shapes; tied tensors counted
// once because they are stored once.
idx count_params(const ModelConfig& cfg, Variant variant);

}  // namespace minigen
