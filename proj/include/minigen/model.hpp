#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "minigen/tape.hpp"
#include "minigen/tensor.hpp"

namespace minigen {

// Architectures sharing one layer implementation: a causal decoder-only LM
// and an encoder-decoder with cross-attention.
enum class Variant { lm, encdec };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  int num_layers = 2;
  int d_model = 64;
  int num_heads = 4;
  int d_ff = 256;
  int context_length = 128;
  int vocab_size = 0;
  bool encoder_bidirectional = false;  // pre-trained encoders must stay causal
  double dropout_rate = 0.1;
  bool pre_norm = false;          // default: post-norm residual blocks
  bool shared_embeddings = true;  // one embedding table across enc/dec stacks

  // Two-layer configuration small enough for laptop-scale experiments.
  static ModelConfig desk(int vocab);
  // The 12-layer, 135M-parameter-class configuration used as the full-scale
  // reference point; far beyond what this toolkit is meant to train.
  static ModelConfig full_scale();

  void validate() const;  // throws PreconditionError
};

// Named parameter tensors. Tied tensors (token embedding / output projection)
// are stored once; the map is sorted so serialization order is deterministic.
template <typename T>
struct WeightSet {
  std::map<std::string, TensorPtr<T>> tensors;

  TensorPtr<T> at(const std::string& name) const;
  bool has(const std::string& name) const {
    return tensors.count(name) != 0;
  }
  idx total_params() const;
};

// Every tensor name with its shape, fully determined by config + variant.
// This map is the single source of truth for init, transfer, checkpoints and
// parameter accounting.
std::map<std::string, std::vector<idx>> tensor_shapes(const ModelConfig& cfg,
                                                      Variant variant);

// Fills one tensor deterministically from (seed, name): normal std 0.02 for
// matrices and embeddings, zeros for biases, ones for layer-norm gains.
template <typename T>
TensorPtr<T> init_tensor(const std::string& name, const std::vector<idx>& shape,
                         std::uint64_t seed);

template <typename T>
WeightSet<T> init_weights(const ModelConfig& cfg, std::uint64_t seed,
                          Variant variant);

// Forward passes record onto the given tape and return the logits node
// ([T x vocab]). Row t predicts token t+1. Dropout is active only when a
// generator is supplied and the rate is positive (training mode).
template <typename T>
typename Tape<T>::NodeId lm_forward(Tape<T>& tape, const WeightSet<T>& w,
                                    const ModelConfig& cfg,
                                    const std::vector<int>& ids,
                                    double dropout_rate = 0.0,
                                    std::mt19937_64* gen = nullptr);

template <typename T>
typename Tape<T>::NodeId encdec_forward(Tape<T>& tape, const WeightSet<T>& w,
                                        const ModelConfig& cfg,
                                        const std::vector<int>& src,
                                        const std::vector<int>& tgt,
                                        double dropout_rate = 0.0,
                                        std::mt19937_64* gen = nullptr);

// Split out so decoding can run the encoder once and reuse its states.
template <typename T>
typename Tape<T>::NodeId encoder_forward(Tape<T>& tape, const WeightSet<T>& w,
                                         const ModelConfig& cfg,
                                         const std::vector<int>& src,
                                         double dropout_rate = 0.0,
                                         std::mt19937_64* gen = nullptr);

template <typename T>
typename Tape<T>::NodeId decoder_forward(Tape<T>& tape, const WeightSet<T>& w,
                                         const ModelConfig& cfg,
                                         const std::vector<int>& tgt,
                                         typename Tape<T>::NodeId enc_states,
                                         double dropout_rate = 0.0,
                                         std::mt19937_64* gen = nullptr);

}  // namespace minigen
