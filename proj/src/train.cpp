#include "minigen/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "minigen/error.hpp"
#include "minigen/rng.hpp"
#include "minigen/tape.hpp"

namespace minigen::train {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts need byte swaps");

std::size_t delim_pos(const data::PackedExample& ex) {
  const auto it = std::find(ex.ids.begin(), ex.ids.end(), bpe::kDelim);
  const auto d = static_cast<std::size_t>(it - ex.ids.begin());
  if (it == ex.ids.end() || d < 1 || d + 1 >= ex.ids.size())
    throw PreconditionError(
        "sequence is not article ++ <delim> ++ summary: delimiter missing or "
        "at an edge");
  return d;
}

// Number of positions the loss covers for one sequence.
idx target_tokens(const data::PackedExample& ex, Variant variant,
                  bool use_mask) {
  if (variant == Variant::encdec)
    return static_cast<idx>(ex.ids.size() - 1 - delim_pos(ex));
  if (!use_mask) return static_cast<idx>(ex.ids.size()) - 1;
  idx c = 0;
  for (std::size_t i = 1; i < ex.loss_mask.size(); ++i)
    if (ex.loss_mask[i]) ++c;
  return c;
}

// Forward one sequence and return its mean-NLL loss node plus the number of
// positions that mean covers. LM sequences predict each next token under the
// (possibly masked) shifted loss mask; encoder-decoder sequences split at
// <delim> into encoder input and decoder input/targets.
std::pair<Tape<float>::NodeId, idx> build_loss(
    Tape<float>& tape, const WeightSet<float>& w, const ModelConfig& mcfg,
    Variant variant, const data::PackedExample& ex, bool use_mask,
    double dropout_rate, std::mt19937_64* gen) {
  const auto& ids = ex.ids;
  if (ids.size() < 2)
    throw DegenerateInputError("training sequence needs at least two tokens");

  if (variant == Variant::lm) {
    const std::vector<int> x(ids.begin(), ids.end() - 1);
    const std::vector<int> targets(ids.begin() + 1, ids.end());
    std::vector<std::uint8_t> mask;
    if (use_mask) {
      if (ex.loss_mask.size() != ids.size())
        throw PreconditionError("loss mask length does not match ids");
      mask.assign(ex.loss_mask.begin() + 1, ex.loss_mask.end());
    } else {
      mask.assign(targets.size(), 1);
    }
    const auto logits = lm_forward(tape, w, mcfg, x, dropout_rate, gen);
    const idx count = std::count(mask.begin(), mask.end(), std::uint8_t(1));
    return {tape.masked_cross_entropy(logits, targets, mask), count};
  }

  const auto d = delim_pos(ex);
  const std::vector<int> src(ids.begin(), ids.begin() + d);
  const std::vector<int> dec_in(ids.begin() + d, ids.end() - 1);
  const std::vector<int> targets(ids.begin() + d + 1, ids.end());
  const std::vector<std::uint8_t> mask(targets.size(), 1);
  const auto logits = encdec_forward(tape, w, mcfg, src, dec_in, dropout_rate, gen);
  return {tape.masked_cross_entropy(logits, targets, mask),
          static_cast<idx>(targets.size())};
}

void prepare_grads(WeightSet<float>& w) {
  for (auto& [name, t] : w.tensors) {
    t->requires_grad = true;
    t->ensure_grad();
    t->zero_grad();
  }
}

using EpochEval = std::function<double(const WeightSet<float>&)>;

// Shared epoch/batch loop. `selected` indexes into `pool`; ordering, dropout
// and every other stochastic choice derive from (seed, epoch) or
// (seed, step) alone, so a run resumed from step k replays steps k+1..N of
// the uninterrupted run bit for bit.
TrainResult run_training(const std::vector<data::PackedExample>& pool,
                         const std::vector<int>& selected,
                         const TrainConfig& cfg, const ModelConfig& mcfg,
                         Variant variant, bool use_mask,
                         TrainState<float> state, std::int64_t max_steps,
                         const EpochEval& epoch_eval) {
  cfg.validate();
  mcfg.validate();
  if (selected.empty())
    throw DegenerateInputError("training needs at least one sequence");
  for (int i : selected)
    if (i < 0 || i >= static_cast<int>(pool.size()))
      throw PreconditionError("subset index " + std::to_string(i) +
                              " outside dataset of " +
                              std::to_string(pool.size()));

  const std::int64_t n = static_cast<std::int64_t>(selected.size());
  const std::int64_t spe = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = spe * cfg.epochs;
  const std::int64_t limit =
      max_steps > 0 ? std::min(max_steps, total) : total;

  TrainResult result;
  result.state = std::move(state);
  auto& st = result.state;

  const auto t0 = std::chrono::steady_clock::now();
  const auto wall = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  for (std::int64_t e = st.step / spe; e < cfg.epochs && st.step < limit; ++e) {
    std::mt19937_64 order_gen(
        rng::derive_seed(cfg.seed, "epoch_order", static_cast<std::uint64_t>(e)));
    const auto perm = rng::permutation(n, order_gen);

    for (std::int64_t b = st.step - e * spe; b < spe && st.step < limit; ++b) {
      const std::int64_t lo = b * cfg.batch_size;
      const std::int64_t hi = std::min(n, lo + cfg.batch_size);

      idx batch_tokens = 0;
      for (std::int64_t i = lo; i < hi; ++i)
        batch_tokens += target_tokens(pool[selected[perm[i]]], variant, use_mask);
      if (batch_tokens == 0)
        throw DegenerateInputError("batch at step " +
                                   std::to_string(st.step + 1) +
                                   " has no loss-bearing tokens");

      prepare_grads(st.weights);
      std::mt19937_64 drop_gen(rng::derive_seed(
          cfg.seed, "dropout", static_cast<std::uint64_t>(st.step)));
      std::mt19937_64* gen = cfg.dropout_rate > 0 ? &drop_gen : nullptr;

      // Token-weighted batch mean: each sequence's mean loss is scaled by
      // its share of the batch's tokens, and gradients accumulate across
      // the per-sequence tapes.
      double batch_loss = 0;
      for (std::int64_t i = lo; i < hi; ++i) {
        const auto& ex = pool[selected[perm[i]]];
        Tape<float> tape;
        const auto [loss, count] =
            build_loss(tape, st.weights, mcfg, variant, ex, use_mask,
                       cfg.dropout_rate, gen);
        const auto scaled = tape.scale(
            loss, static_cast<float>(double(count) / double(batch_tokens)));
        tape.backward(scaled);
        batch_loss += double(tape.value(scaled).data[0]);
      }
      if (!std::isfinite(batch_loss))
        throw NumericsError("training diverged (non-finite loss) at step " +
                            std::to_string(st.step + 1));

      clip_gradients(st.weights, cfg.grad_clip_norm);
      const double lr = lr_at(cfg, st.step);
      adam_step(st.weights, st.opt, lr);
      ++st.step;

      result.log.push_back({st.step, "train", batch_loss, std::exp(batch_loss),
                            lr, wall()});
    }

    if (epoch_eval && st.step == (e + 1) * spe) {
      const double ppl = epoch_eval(st.weights);
      result.heldout_perplexity.push_back(ppl);
      result.log.push_back({st.step, "heldout", std::log(ppl), ppl,
                            lr_at(cfg, st.step - 1), wall()});
    }
  }
  return result;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune_scratch: return "finetune_scratch";
    case TrainMode::finetune_pretrained: return "finetune_pretrained";
  }
  throw PreconditionError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "pretrain") return TrainMode::pretrain;
  if (s == "finetune_scratch") return TrainMode::finetune_scratch;
  if (s == "finetune_pretrained") return TrainMode::finetune_pretrained;
  throw PreconditionError("unknown train mode '" + s + "'");
}

TrainConfig TrainConfig::defaults(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  switch (mode) {
    case TrainMode::pretrain:
      cfg.learning_rate = 2e-4;
      cfg.epochs = 3;
      cfg.batch_size = 8;
      cfg.warmup_steps = 50;
      break;
    case TrainMode::finetune_scratch:
      cfg.learning_rate = 2e-4;
      cfg.epochs = 12;
      cfg.batch_size = 4;
      cfg.warmup_steps = 0;
      break;
    case TrainMode::finetune_pretrained:
      cfg.learning_rate = 5e-5;
      cfg.epochs = 6;
      cfg.batch_size = 4;
      cfg.warmup_steps = 0;
      break;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0))
    throw PreconditionError("learning_rate must be positive");
  if (epochs < 1) throw PreconditionError("epochs must be >= 1");
  if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
  if (warmup_steps < 0) throw PreconditionError("warmup_steps must be >= 0");
  if (!(grad_clip_norm > 0))
    throw PreconditionError("grad_clip_norm must be positive");
  if (dropout_rate < 0 || dropout_rate >= 1)
    throw PreconditionError("dropout_rate must be in [0,1)");
}

double lr_at(const TrainConfig& cfg, std::int64_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.learning_rate * double(step + 1) / double(cfg.warmup_steps);
  return cfg.learning_rate;
}

template <typename T>
void adam_step(WeightSet<T>& weights, AdamState<T>& state, double lr,
               AdamParams params) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(params.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(params.beta2, double(state.step));
  for (auto& [name, w] : weights.tensors) {
    if (w->grad.empty()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (!m) m = make_tensor<T>(w->shape);
    if (!v) v = make_tensor<T>(w->shape);
    if (m->shape != w->shape || v->shape != w->shape)
      throw PreconditionError("optimizer moments for " + name +
                              " do not match the parameter shape");
    for (idx i = 0; i < w->numel(); ++i) {
      const double g = double(w->grad[i]);
      const double mi = params.beta1 * double(m->data[i]) + (1 - params.beta1) * g;
      const double vi = params.beta2 * double(v->data[i]) + (1 - params.beta2) * g * g;
      m->data[i] = static_cast<T>(mi);
      v->data[i] = static_cast<T>(vi);
      w->data[i] = static_cast<T>(
          double(w->data[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + params.eps));
    }
  }
}

template <typename T>
double clip_gradients(WeightSet<T>& weights, double max_norm) {
  if (!(max_norm > 0)) throw PreconditionError("clip norm must be positive");
  const auto global_norm = [&weights] {
    double sq = 0;  // name-sorted map iteration fixes the summation order
    for (const auto& [name, w] : weights.tensors)
      for (const T g : w->grad) sq += double(g) * double(g);
    return std::sqrt(sq);
  };
  const double pre = global_norm();
  if (!std::isfinite(pre))
    throw NumericsError("gradient norm is non-finite before clipping");
  double norm = pre;
  // one rescale can land a float ulp above the bound; repeat until inside,
  // forcing the factor below one when the ratio itself rounds to 1
  for (int round = 0; norm > max_norm && round < 8; ++round) {
    T s = static_cast<T>(max_norm / norm);
    if (s >= T(1)) s = std::nextafter(T(1), T(0));
    for (auto& [name, w] : weights.tensors)
      for (T& g : w->grad) g *= s;
    norm = global_norm();
  }
  return pre;
}

template void adam_step<float>(WeightSet<float>&, AdamState<float>&, double, AdamParams);
template void adam_step<double>(WeightSet<double>&, AdamState<double>&, double, AdamParams);
template double clip_gradients<float>(WeightSet<float>&, double);
template double clip_gradients<double>(WeightSet<double>&, double);

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "step,split,loss,perplexity,lr,wall_clock_s\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.6g,%.6g,%.6g,%.2f\n",
                  static_cast<long long>(r.step), r.split.c_str(), r.loss,
                  r.perplexity, r.lr, r.wall_clock_s);
    out += buf;
  }
  return out;
}

void write_train_log(const std::string& path,
                     const std::vector<TrainLogRow>& rows) {
  data::write_text_file(path, train_log_csv(rows));
}

WindowSplit make_windows(const std::string& corpus, const bpe::Tokenizer& tok,
                         int context_length) {
  std::vector<int> stream;
  for (const auto& doc : data::split_documents(corpus)) {
    const auto ids = tok.encode(doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(bpe::kEos);
  }

  WindowSplit out;
  const std::size_t w = static_cast<std::size_t>(context_length) + 1;
  std::size_t count = 0;
  for (std::size_t i = 0; i < stream.size(); i += w) {
    const std::size_t end = std::min(stream.size(), i + w);
    if (end - i < 2) break;  // a window must hold an input and a target
    std::vector<int> win(stream.begin() + i, stream.begin() + end);
    if (++count % 10 == 0)
      out.heldout.push_back(std::move(win));
    else
      out.train.push_back(std::move(win));
  }
  if (out.heldout.empty() && out.train.size() >= 2) {
    out.heldout.push_back(std::move(out.train.back()));
    out.train.pop_back();
  }
  return out;
}

TrainResult pretrain(const std::string& corpus, const TrainConfig& cfg,
                     const bpe::Tokenizer& tok, const ModelConfig& mcfg,
                     const TrainState<float>* resume, std::int64_t max_steps) {
  const auto windows = make_windows(corpus, tok, mcfg.context_length);
  if (windows.train.empty() || windows.heldout.empty())
    throw DegenerateInputError(
        "corpus too small: pre-training needs at least two context windows");

  std::vector<data::PackedExample> pool;
  pool.reserve(windows.train.size());
  std::vector<int> selected;
  for (const auto& win : windows.train) {
    selected.push_back(static_cast<int>(pool.size()));
    pool.push_back({win, std::vector<std::uint8_t>(win.size(), 1)});
  }

  TrainState<float> state;
  if (resume) {
    state = *resume;
  } else {
    state.weights = init_weights<float>(
        mcfg, rng::derive_seed(cfg.seed, "init"), Variant::lm);
  }

  const auto eval = [&](const WeightSet<float>& w) {
    return eval_perplexity_windows(w, mcfg, windows.heldout);
  };
  return run_training(pool, selected, cfg, mcfg, Variant::lm,
                      /*use_mask=*/false, std::move(state), max_steps, eval);
}

TrainResult finetune(const std::vector<data::PackedExample>& examples,
                     const std::vector<int>& subset, const TrainConfig& cfg,
                     const ModelConfig& mcfg, Variant variant,
                     TrainState<float> state, std::int64_t max_steps) {
  return run_training(examples, subset, cfg, mcfg, variant, /*use_mask=*/true,
                      std::move(state), max_steps, nullptr);
}

double eval_perplexity(const WeightSet<float>& weights, const ModelConfig& mcfg,
                       Variant variant,
                       const std::vector<data::PackedExample>& examples,
                       bool masked_only) {
  if (examples.empty())
    throw DegenerateInputError("perplexity over an empty evaluation set");
  double total_nll = 0;
  idx total_tokens = 0;
  for (const auto& ex : examples) {
    Tape<float> tape;
    const auto [loss, count] =
        build_loss(tape, weights, mcfg, variant, ex, masked_only, 0.0, nullptr);
    total_nll += double(tape.value(loss).data[0]) * double(count);
    total_tokens += count;
  }
  return std::exp(total_nll / double(total_tokens));
}

double eval_perplexity_windows(const WeightSet<float>& weights,
                               const ModelConfig& mcfg,
                               const std::vector<std::vector<int>>& windows) {
  std::vector<data::PackedExample> examples;
  examples.reserve(windows.size());
  for (const auto& win : windows)
    examples.push_back({win, std::vector<std::uint8_t>(win.size(), 1)});
  return eval_perplexity(weights, mcfg, Variant::lm, examples,
                         /*masked_only=*/false);
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d_model", c.d_model},
          {"num_heads", c.num_heads},
          {"d_ff", c.d_ff},
          {"context_length", c.context_length},
          {"vocab_size", c.vocab_size},
          {"encoder_bidirectional", c.encoder_bidirectional},
          {"dropout_rate", c.dropout_rate},
          {"pre_norm", c.pre_norm},
          {"shared_embeddings", c.shared_embeddings}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.context_length = j.at("context_length").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.encoder_bidirectional = j.at("encoder_bidirectional").get<bool>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.pre_norm = j.at("pre_norm").get<bool>();
  c.shared_embeddings = j.at("shared_embeddings").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto expected = tensor_shapes(ckpt.config, ckpt.variant);
  if (ckpt.state.weights.tensors.size() != expected.size())
    throw PreconditionError("checkpoint weights do not match the config");
  for (const auto& [name, shape] : expected) {
    const auto t = ckpt.state.weights.at(name);
    if (t->shape != shape)
      throw PreconditionError("checkpoint tensor " + name +
                              " has the wrong shape");
  }
  const bool with_opt = !ckpt.state.opt.m.empty();
  if (with_opt && (ckpt.state.opt.m.size() != expected.size() ||
                   ckpt.state.opt.v.size() != expected.size()))
    throw PreconditionError("optimizer moments do not cover every parameter");

  // table order: weights, then first moments, then second moments
  std::vector<std::pair<std::string, TensorPtr<float>>> table;
  for (const auto& [name, t] : ckpt.state.weights.tensors)
    table.emplace_back(name, t);
  if (with_opt) {
    for (const auto& [name, t] : ckpt.state.opt.m)
      table.emplace_back("m:" + name, t);
    for (const auto& [name, t] : ckpt.state.opt.v)
      table.emplace_back("v:" + name, t);
  }

  nlohmann::json header;
  header["schema_version"] = 1;
  header["variant"] = to_string(ckpt.variant);
  header["config"] = config_to_json(ckpt.config);
  auto jt = nlohmann::json::array();
  for (const auto& [name, t] : table)
    jt.push_back(nlohmann::json::array({name, t->shape}));
  header["tensors"] = std::move(jt);
  header["tokenizer_hash"] = ckpt.tokenizer_hash;
  header["step"] = ckpt.state.step;
  header["opt_step"] = ckpt.state.opt.step;
  header["manifest_hash"] = ckpt.manifest_hash;

  const std::string hb = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  const std::uint64_t len = hb.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(hb.data(), static_cast<std::streamsize>(hb.size()));
  for (const auto& [name, t] : table)
    f.write(reinterpret_cast<const char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(float)));
  if (!f) throw IoError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len == 0 || len > (1u << 30))
    throw IoError("checkpoint " + path + ": bad header length");
  std::string hb(len, '\0');
  f.read(hb.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("checkpoint " + path + ": truncated header");

  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<idx>>> table;
  try {
    const auto header = nlohmann::json::parse(hb);
    if (header.at("schema_version").get<int>() != 1)
      throw IoError("unsupported checkpoint schema version");
    ckpt.variant = variant_from_string(header.at("variant").get<std::string>());
    ckpt.config = config_from_json(header.at("config"));
    ckpt.config.validate();
    ckpt.tokenizer_hash = header.at("tokenizer_hash").get<std::string>();
    ckpt.state.step = header.at("step").get<std::int64_t>();
    ckpt.state.opt.step = header.at("opt_step").get<std::int64_t>();
    ckpt.manifest_hash = header.at("manifest_hash").get<std::string>();
    for (const auto& entry : header.at("tensors"))
      table.emplace_back(entry.at(0).get<std::string>(),
                         entry.at(1).get<std::vector<idx>>());
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("checkpoint " + path + ": malformed header: " + e.what());
  }

  const auto expected = tensor_shapes(ckpt.config, ckpt.variant);
  for (const auto& [name, shape] : table) {
    std::string base = name;
    auto* dest = &ckpt.state.weights.tensors;
    if (name.rfind("m:", 0) == 0) {
      base = name.substr(2);
      dest = &ckpt.state.opt.m;
    } else if (name.rfind("v:", 0) == 0) {
      base = name.substr(2);
      dest = &ckpt.state.opt.v;
    }
    const auto it = expected.find(base);
    if (it == expected.end() || it->second != shape)
      throw IoError("checkpoint " + path + ": unexpected tensor " + name);
    if (dest->count(base))
      throw IoError("checkpoint " + path + ": duplicate tensor " + name);
    auto t = make_tensor<float>(shape);
    f.read(reinterpret_cast<char*>(t->data.data()),
           static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    if (!f) throw IoError("checkpoint " + path + ": truncated tensor " + name);
    (*dest)[base] = std::move(t);
  }
  if (ckpt.state.weights.tensors.size() != expected.size())
    throw IoError("checkpoint " + path + ": missing weight tensors");
  if (!ckpt.state.opt.m.empty() &&
      (ckpt.state.opt.m.size() != expected.size() ||
       ckpt.state.opt.v.size() != expected.size()))
    throw IoError("checkpoint " + path + ": incomplete optimizer state");
  if (f.peek() != std::ifstream::traits_type::eof())
    throw IoError("checkpoint " + path + ": trailing bytes after tensors");
  return ckpt;
}

}  // namespace minigen::train
