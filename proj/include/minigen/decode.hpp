#pragma once

#include <string>
#include <vector>

#include "minigen/model.hpp"

namespace minigen::decode {

// One decoded candidate. `ids` are the generated tokens only (the <eos> that
// ended generation is kept); `score` is the sum over generated positions of
// the log softmax probability of each chosen token.
struct Hypothesis {
  std::vector<int> ids;
  double score = 0;
  bool finished = false;
};

struct DecodeParams {
  int beam_size = 2;
  int max_len = 120;  // generated-token budget, reserved out of the context
  bool length_normalize = false;  // rank by score/length instead of raw score
};

// Conditioning, shared by decoding and re-scoring: the LM variant packs the
// source into article ++ <delim>, truncating the article so that max_len
// generation slots always remain inside the context; the encoder-decoder
// variant feeds the source to the encoder and seeds the decoder with <delim>.

// Argmax decoding (ties go to the lowest token id); stops at <eos> or after
// max_len tokens.
Hypothesis greedy_decode(const WeightSet<float>& weights,
                         const ModelConfig& cfg, Variant variant,
                         const std::vector<int>& src, int max_len = 120);

// Standard beam search. Every live hypothesis is expanded over the whole
// vocabulary, the best beam_size candidates survive (score descending, ties
// by lexicographically smaller token sequence), and candidates that emit
// <eos> retire. Returns up to beam_size hypotheses, best first; finished and
// still-open hypotheses compete in that final ranking.
std::vector<Hypothesis> beam_search(const WeightSet<float>& weights,
                                    const ModelConfig& cfg, Variant variant,
                                    const std::vector<int>& src,
                                    const DecodeParams& params = {});

// Teacher-forced log-probability of `generated` under the same conditioning
// that decoding with this max_len would use. Reproduces Hypothesis::score.
double rescore(const WeightSet<float>& weights, const ModelConfig& cfg,
               Variant variant, const std::vector<int>& src,
               const std::vector<int>& generated, int max_len = 120);

// Decoded-output files: JSON lines {"id": ..., "prediction": ..., "score":
// ...} with canonical bytes (save(load(f)) is the identity).
struct PredictionRow {
  int id = 0;
  std::string prediction;
  double score = 0;
};

std::string predictions_to_jsonl(const std::vector<PredictionRow>& rows);
void write_predictions(const std::string& path,
                       const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> load_predictions(const std::string& path);

}  // namespace minigen::decode
