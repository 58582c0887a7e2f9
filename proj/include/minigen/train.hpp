#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "minigen/bpe.hpp"
#include "minigen/data.hpp"
#include "minigen/model.hpp"
#include "minigen/tensor.hpp"

namespace minigen::train {

enum class TrainMode { pretrain, finetune_scratch, finetune_pretrained };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 2e-4;
  int epochs = 3;
  int batch_size = 8;  // packed sequences per optimizer step
  int warmup_steps = 0;
  double grad_clip_norm = 1.0;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::pretrain;

  // Mode-specific defaults. Fine-tuning a pre-trained model uses a lower
  // learning rate (5e-5 instead of 2e-4) and fewer epochs (6 instead of 12)
  // than training the same architecture from scratch.
  static TrainConfig defaults(TrainMode mode);
  void validate() const;
};

// Linear warmup to the base rate over warmup_steps updates, constant after.
double lr_at(const TrainConfig& cfg, std::int64_t step);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer state. Moment tensors are created on first use
// and always match the parameter shapes; `step` counts completed updates and
// drives bias correction.
template <typename T>
struct AdamState {
  std::map<std::string, TensorPtr<T>> m;
  std::map<std::string, TensorPtr<T>> v;
  std::int64_t step = 0;
};

// One update from the gradients currently stored on `weights`.
template <typename T>
void adam_step(WeightSet<T>& weights, AdamState<T>& state, double lr,
               AdamParams params = {});

// Global-norm gradient clipping with a fixed (name-sorted) summation order.
// Returns the pre-clip norm; afterwards the global norm is <= max_norm.
template <typename T>
double clip_gradients(WeightSet<T>& weights, double max_norm);

struct TrainLogRow {
  std::int64_t step = 0;
  std::string split;  // "train" or "heldout"
  double loss = 0;
  double perplexity = 0;
  double lr = 0;
  double wall_clock_s = 0;
};

std::string train_log_csv(const std::vector<TrainLogRow>& rows);
void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows);

// Everything that evolves during training. Weight tensors are shared, not
// copied: trainers update the tensors of the state they are given in place.
template <typename T>
struct TrainState {
  WeightSet<T> weights;
  AdamState<T> opt;
  std::int64_t step = 0;
};

struct TrainResult {
  TrainState<float> state;
  std::vector<TrainLogRow> log;
  std::vector<double> heldout_perplexity;  // one entry per completed epoch
};

// Next-token windows for LM training: documents are tokenized, joined by
// <eos>, and the stream is chunked into contiguous runs of context_length+1
// ids. Every 10th window is held out (the last one if fewer than 10 exist).
struct WindowSplit {
  std::vector<std::vector<int>> train;
  std::vector<std::vector<int>> heldout;
};

WindowSplit make_windows(const std::string& corpus, const bpe::Tokenizer& tok,
                         int context_length);

// Language-model pre-training over a blank-line separated corpus. Starts
// from a fresh init unless `resume` is given; `max_steps` (when > 0) stops
// early at that global step so training can be checkpointed and resumed
// bit-exactly. Logs one heldout row per epoch.
TrainResult pretrain(const std::string& corpus, const TrainConfig& cfg,
                     const bpe::Tokenizer& tok, const ModelConfig& mcfg,
                     const TrainState<float>* resume = nullptr,
                     std::int64_t max_steps = 0);

// Summarization fine-tuning over packed examples restricted to `subset`
// indices. The LM variant trains directly on the packed sequence with its
// loss mask; the encoder-decoder variant splits each sequence at <delim>
// into encoder input and decoder input/targets. All parameters update.
TrainResult finetune(const std::vector<data::PackedExample>& examples,
                     const std::vector<int>& subset, const TrainConfig& cfg,
                     const ModelConfig& mcfg, Variant variant,
                     TrainState<float> state, std::int64_t max_steps = 0);

// exp(mean negative log-likelihood) over evaluated positions: all target
// positions when masked_only is false, loss-masked positions when true.
// The encoder-decoder variant always evaluates decoder positions.
double eval_perplexity(const WeightSet<float>& weights, const ModelConfig& mcfg,
                       Variant variant,
                       const std::vector<data::PackedExample>& examples,
                       bool masked_only);

double eval_perplexity_windows(const WeightSet<float>& weights,
                               const ModelConfig& mcfg,
                               const std::vector<std::vector<int>>& windows);

// Self-describing training snapshot. The file layout is a little-endian
// 64-bit header length, a JSON header (config, tensor name->shape table,
// tokenizer hash, step), then each tensor's raw 32-bit floats in table
// order. load(save(c)) reproduces bit-identical tensors.
struct Checkpoint {
  ModelConfig config;
  Variant variant = Variant::lm;
  TrainState<float> state;
  std::string tokenizer_hash;  // decimal fnv1a of the tokenizer serialization
  std::string manifest_hash;   // run manifest hash, empty outside managed runs
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace minigen::train
